// tnas: pretrain, search and train tree-structured super-resolution networks.

#include <csignal>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "tnas/commands.hpp"

namespace {

extern "C" void on_signal(int) { tnas::cli::request_stop(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable tree-structured architecture search for toy super-resolution"};
  app.require_subcommand(1);
  tnas::cli::RunOptions opt;
  std::string train_mode;

  auto run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Config file (every key required)");
    sub->add_option("--seed", opt.seed, "Overrides the config seed");
    sub->add_option("--out", opt.out_dir, "Run directory")->capture_default_str();
    sub->add_option("--lambda-order", opt.lambda_order, "Path-ordering penalty weight");
    sub->add_option("--lambda-flops", opt.lambda_flops, "Efficiency weight per GFLOP");
    sub->add_option("--train-mode", train_mode, "from_search or from_scratch")
        ->check(CLI::IsMember({"from_search", "from_scratch"}));
    sub->add_flag("--softmax-baseline", opt.softmax_baseline, "Softmax instead of sparsestmax for alpha and beta");
  };
  auto phase_flags = [&](CLI::App* sub) {
    run_flags(sub);
    sub->add_option("--resume", opt.resume, "Checkpoint of this phase to continue");
    sub->add_option("--checkpoint", opt.checkpoint, "Upstream checkpoint (default: inside --out)");
    sub->add_option("--stop-after", opt.stop_after, "Checkpoint and return after this many epochs")->group("");
    sub->add_flag("-v,--verbose", opt.verbose, "Per-epoch progress on stderr");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Phase 1: train supernet weights under uniform mixing");
  phase_flags(pretrain);
  auto* search = app.add_subcommand("search", "Phase 2: alternate weight and architecture updates");
  phase_flags(search);
  auto* train = app.add_subcommand("train", "Phase 3: train the derived network");
  phase_flags(train);
  train->add_option("--arch", opt.arch_path, "Derived architecture file (from_scratch only)");

  auto* derive = app.add_subcommand("derive", "Print the derived path of a search checkpoint");
  derive->add_option("--out", opt.out_dir, "Run directory")->capture_default_str();
  derive->add_option("--checkpoint", opt.checkpoint, "Search checkpoint (default: <out>/search.ckpt)");

  auto* eval = app.add_subcommand("eval", "PSNR of a trained model on the held-out set, or of two image files");
  eval->add_option("--out", opt.out_dir, "Run directory")->capture_default_str();
  eval->add_option("--checkpoint", opt.checkpoint, "Train checkpoint (default: <out>/train.ckpt)");
  eval->add_option("--pred", opt.pred_path, "Prediction PGM");
  eval->add_option("--target", opt.target_path, "Target PGM");

  auto* flops = app.add_subcommand("flops", "FLOPs and parameters of a derived architecture");
  flops->add_option("--out", opt.out_dir, "Run directory")->capture_default_str();
  flops->add_option("--checkpoint", opt.checkpoint, "Checkpoint holding a derived architecture");
  flops->add_option("--arch", opt.arch_path, "Derived architecture file");
  flops->add_option("--height", opt.height, "LR input height")->capture_default_str();
  flops->add_option("--width", opt.width, "LR input width")->capture_default_str();

  auto* gendata = app.add_subcommand("gendata", "Write the synthetic data set as PGM files");
  run_flags(gendata);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << tnas::cli::format_error("usage", e.what()) << "\n";
    return 2;
  }
  if (train_mode == "from_search") opt.train_mode = tnas::TrainMode::kFromSearch;
  if (train_mode == "from_scratch") opt.train_mode = tnas::TrainMode::kFromScratch;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  static const std::map<std::string, int> kExitCodes = {
      {"usage", 2}, {"config", 3}, {"checkpoint", 4}, {"missing_upstream", 4}, {"io", 5}, {"locked", 6},
      {"diverged", 7}, {"interrupted", 130}};
  try {
    tnas::cli::run_command(app.get_subcommands().front()->get_name(), opt, std::cout, std::cerr);
  } catch (const tnas::cli::CommandError& e) {
    std::cerr << tnas::cli::format_error(e.kind(), e.what()) << "\n";
    const auto it = kExitCodes.find(e.kind());
    return it == kExitCodes.end() ? 1 : it->second;
  }
  return 0;
}
