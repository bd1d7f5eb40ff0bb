#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "tnas/checkpoint.hpp"
#include "tnas/commands.hpp"
#include "tnas/dataio.hpp"

namespace tnas {
namespace {

namespace fs = std::filesystem;

ckpt::Checkpoint sample_checkpoint() {
  ckpt::Checkpoint c;
  c.phase = ckpt::Phase::kSearch;
  c.epochs_done = 7;
  c.arch_steps = 21;
  c.config_text = "seed = 3\n";
  c.arch_text = "path: [0]\n";
  c.metrics = {"0,search,1,2,3,0.5,10,4,2,0.000", "1,search,1,2,3,1,11,3,1,0.000"};
  c.weights = {nd::Tensor(nd::Shape{2, 3}, {1, -2, 3.5, 1e-300, -0.0, 6}), nd::Tensor::vector({0.1})};
  c.arch = {nd::Tensor::vector({0.25, -0.25})};
  c.w_opt.steps = 5;
  c.w_opt.moments = {{{1, 2, 3, 4, 5, 6}, {6, 5, 4, 3, 2, 1}}, {{0.5}, {0.25}}};
  return c;
}

void expect_same(const ckpt::Checkpoint& a, const ckpt::Checkpoint& b) {
  EXPECT_EQ(a.phase, b.phase);
  EXPECT_EQ(a.epochs_done, b.epochs_done);
  EXPECT_EQ(a.complete, b.complete);
  EXPECT_EQ(a.arch_steps, b.arch_steps);
  EXPECT_EQ(a.config_text, b.config_text);
  EXPECT_EQ(a.arch_text, b.arch_text);
  EXPECT_EQ(a.metrics, b.metrics);
  ASSERT_EQ(a.weights.size(), b.weights.size());
  for (std::size_t i = 0; i < a.weights.size(); ++i) EXPECT_TRUE(nd::bit_equal(a.weights[i], b.weights[i]));
  ASSERT_EQ(a.arch.size(), b.arch.size());
  for (std::size_t i = 0; i < a.arch.size(); ++i) EXPECT_TRUE(nd::bit_equal(a.arch[i], b.arch[i]));
  EXPECT_EQ(a.w_opt.steps, b.w_opt.steps);
  ASSERT_EQ(a.w_opt.moments.size(), b.w_opt.moments.size());
  for (std::size_t i = 0; i < a.w_opt.moments.size(); ++i) {
    EXPECT_EQ(a.w_opt.moments[i].m, b.w_opt.moments[i].m);
    EXPECT_EQ(a.w_opt.moments[i].v, b.w_opt.moments[i].v);
  }
  EXPECT_EQ(a.arch_opt.moments.size(), b.arch_opt.moments.size());
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("tnas_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

TEST(CheckpointTest, RoundTripIsExact) {
  const auto c = sample_checkpoint();
  const auto bytes = ckpt::encode(c);
  EXPECT_EQ(bytes.rfind("TNAS 1\n", 0), 0u);
  expect_same(ckpt::decode(bytes), c);
  EXPECT_EQ(ckpt::encode(ckpt::decode(bytes)), bytes);
}

TEST(CheckpointTest, RejectsVersionMismatchAndBadMagic) {
  auto bytes = ckpt::encode(sample_checkpoint());
  auto v2 = bytes;
  v2[5] = '2';
  try {
    ckpt::decode(v2);
    FAIL() << "accepted version 2";
  } catch (const ckpt::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(ckpt::decode(bad), ckpt::CheckpointError);
}

TEST(CheckpointTest, RejectsTruncationAndMalformedSections) {
  const auto bytes = ckpt::encode(sample_checkpoint());
  EXPECT_THROW(ckpt::decode(bytes.substr(0, bytes.size() - 1)), ckpt::CheckpointError);
  EXPECT_THROW(ckpt::decode(bytes.substr(0, 40)), ckpt::CheckpointError);
  auto noend = bytes;
  noend.replace(noend.find("\nend\n"), 5, "\nfin\n");
  EXPECT_THROW(ckpt::decode(noend), ckpt::CheckpointError);
  auto phase = bytes;
  phase.replace(phase.find("phase = search"), 14, "phase = xearch");
  EXPECT_THROW(ckpt::decode(phase), ckpt::CheckpointError);
}

TEST(CheckpointTest, AtomicSaveAndLoad) {
  TempDir dir;
  const auto path = (dir.path() / "a.ckpt").string();
  const auto c = sample_checkpoint();
  ckpt::save(path, c);
  EXPECT_FALSE(fs::exists(path + ".tmp"));
  expect_same(ckpt::load(path), c);
  EXPECT_THROW(ckpt::load((dir.path() / "missing.ckpt").string()), ckpt::CheckpointError);
}

TEST(CheckpointTest, AssignChecksShapes) {
  std::vector<nd::Tensor> dst = {nd::Tensor(nd::Shape{2})};
  ckpt::assign(dst, {nd::Tensor::vector({1.0, 2.0})}, "w");
  EXPECT_EQ(dst[0][1], 2.0);
  EXPECT_THROW(ckpt::assign(dst, {nd::Tensor(nd::Shape{3})}, "w"), ckpt::CheckpointError);
  EXPECT_THROW(ckpt::assign(dst, {}, "w"), ckpt::CheckpointError);
}

TEST(CheckpointTest, OptimizerStateRestores) {
  std::vector<nd::Tensor> params = {nd::Tensor::vector({1.0, 2.0})};
  nd::Adam a(params, {});
  params[0].ensure_grad()[0] = 0.5;
  a.step();
  const auto s = ckpt::capture(a);
  nd::Adam b(params, {});
  ckpt::restore(b, s);
  EXPECT_EQ(b.steps(), 1);
  EXPECT_EQ(b.moments()[0].m, a.moments()[0].m);
  nd::Adam c({nd::Tensor::vector({1.0})}, {});
  EXPECT_THROW(ckpt::restore(c, s), ckpt::CheckpointError);
}

// Command-level behavior on a seconds-scale configuration.

SearchConfig smoke_config() {
  SearchConfig cfg;
  cfg.blocks = 2;
  cfg.cells_per_block = 1;
  cfg.base_width = 8;
  cfg.num_images = 8;
  cfg.image_size = 16;
  cfg.holdout_images = 2;
  cfg.pretrain_epochs = 2;
  cfg.search_epochs = 3;
  cfg.train_epochs = 2;
  return cfg;
}

std::string write_config(const fs::path& dir, const SearchConfig& cfg) {
  const auto path = (dir / "run.cfg").string();
  std::ofstream(path) << to_text(cfg);
  return path;
}

std::string run(const std::string& cmd, const cli::RunOptions& opt) {
  std::ostringstream out, log;
  cli::run_command(cmd, opt, out, log);
  return out.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

TEST(CommandTest, PipelineWritesArtifactsAndDerivesPath) {
  TempDir dir;
  cli::RunOptions opt;
  opt.config_path = write_config(dir.path(), smoke_config());
  opt.out_dir = (dir.path() / "run").string();
  run("pretrain", opt);
  run("search", opt);
  const auto derived = run("derive", opt);
  EXPECT_TRUE(std::regex_match(derived, std::regex(R"(\[0(,0)*\]\n)"))) << derived;
  run("train", opt);
  for (const char* f : {"pretrain.ckpt", "search.ckpt", "train.ckpt", "metrics_pretrain.csv", "metrics_search.csv",
                        "metrics_train.csv", "manifest_pretrain.cfg", "manifest_search.cfg", "manifest_train.cfg",
                        "derived.txt"}) {
    EXPECT_TRUE(fs::exists(fs::path(opt.out_dir) / f)) << f;
  }
  // A manifest is itself a complete config for re-execution.
  const auto manifest = fs::path(opt.out_dir) / "manifest_search.cfg";
  EXPECT_EQ(to_text(load_config(manifest.string())), to_text(smoke_config()));
  EXPECT_NE(slurp(manifest).find("# config_hash = " + config_hash(smoke_config())), std::string::npos);
  EXPECT_NE(run("eval", opt).find("psnr_db="), std::string::npos);
  EXPECT_NE(run("flops", opt).find("flops="), std::string::npos);
}

TEST(CommandTest, RerunAndResumeAreBitIdentical) {
  TempDir dir;
  cli::RunOptions opt;
  opt.config_path = write_config(dir.path(), smoke_config());
  opt.out_dir = (dir.path() / "a").string();
  run("pretrain", opt);
  run("search", opt);

  auto again = opt;
  again.out_dir = (dir.path() / "b").string();
  run("pretrain", again);
  run("search", again);
  EXPECT_EQ(slurp(fs::path(opt.out_dir) / "metrics_search.csv"), slurp(fs::path(again.out_dir) / "metrics_search.csv"));

  auto split = opt;
  split.out_dir = (dir.path() / "c").string();
  split.stop_after = 1;
  run("pretrain", split);
  split.resume = (fs::path(split.out_dir) / "pretrain.ckpt").string();
  run("pretrain", split);
  split.resume.clear();
  run("search", split);
  split.resume = (fs::path(split.out_dir) / "search.ckpt").string();
  split.stop_after = -1;
  run("search", split);
  for (const char* f : {"metrics_pretrain.csv", "metrics_search.csv", "search.ckpt"}) {
    EXPECT_EQ(slurp(fs::path(opt.out_dir) / f), slurp(fs::path(split.out_dir) / f)) << f;
  }
}

TEST(CommandTest, ErrorsCarryKinds) {
  TempDir dir;
  cli::RunOptions opt;
  opt.out_dir = (dir.path() / "run").string();
  auto kind_of = [&](const std::string& cmd, const cli::RunOptions& o) {
    try {
      run(cmd, o);
    } catch (const cli::CommandError& e) {
      return e.kind();
    }
    return std::string("none");
  };
  EXPECT_EQ(kind_of("pretrain", opt), "usage");
  opt.config_path = (dir.path() / "partial.cfg").string();
  std::ofstream(opt.config_path) << "seed = 1\nblocks = 0\n";
  EXPECT_EQ(kind_of("pretrain", opt), "config");
  opt.config_path = write_config(dir.path(), smoke_config());
  EXPECT_EQ(kind_of("search", opt), "missing_upstream");
  EXPECT_EQ(kind_of("train", opt), "missing_upstream");
  EXPECT_EQ(kind_of("bogus", opt), "usage");

  run("pretrain", opt);
  auto mismatch = opt;
  mismatch.resume = (fs::path(opt.out_dir) / "pretrain.ckpt").string();
  mismatch.lambda_order = 0.5;
  EXPECT_EQ(kind_of("pretrain", mismatch), "config");
  auto wrong_phase = opt;
  wrong_phase.resume = mismatch.resume;
  EXPECT_EQ(kind_of("search", wrong_phase), "checkpoint");
}

TEST(CommandTest, ConfigErrorListsEveryProblem) {
  TempDir dir;
  cli::RunOptions opt;
  opt.out_dir = (dir.path() / "run").string();
  opt.config_path = (dir.path() / "partial.cfg").string();
  std::ofstream(opt.config_path) << "seed = 1\nunknown_key = 2\n";
  try {
    run("pretrain", opt);
    FAIL();
  } catch (const cli::CommandError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unknown key 'unknown_key'"), std::string::npos);
    for (const auto& key : config_keys()) {
      if (key != "seed") EXPECT_NE(msg.find("missing key '" + key + "'"), std::string::npos) << key;
    }
  }
  EXPECT_EQ(cli::format_error("config", "a\nb"), "error[config]: a b");
}

TEST(CommandTest, EvalOfIdenticalFilesIs100dB) {
  TempDir dir;
  const auto img = data::gen_synthetic(1, 1, 16, 16)[0];
  const auto path = (dir.path() / "x.pgm").string();
  data::write_pgm(path, img);
  cli::RunOptions opt;
  opt.pred_path = path;
  opt.target_path = path;
  EXPECT_EQ(run("eval", opt), "psnr_db=100\n");
}

}  // namespace
}  // namespace tnas
