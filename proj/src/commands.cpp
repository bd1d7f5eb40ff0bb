#include "tnas/commands.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "tnas/checkpoint.hpp"
#include "tnas/dataio.hpp"
#include "tnas/derive.hpp"
#include "tnas/engine.hpp"

namespace tnas::cli {

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

/// Keys that fix the supernet, its data and its initialization; downstream
/// phases must agree with their upstream checkpoint on all of them.
const std::vector<std::string> kStructuralKeys = {"seed",       "blocks",     "cells_per_block", "base_width",
                                                  "scale",      "num_images", "image_size",      "holdout_images",
                                                  "per_node_tail"};

std::string read_file(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CommandError("io", std::string("cannot read ") + what + " '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << text;
    f.flush();
    if (!f) throw CommandError("io", "cannot write '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw CommandError("io", "cannot move '" + tmp + "' to '" + path.string() + "': " + ec.message());
}

/// Holds an exclusive flock on <dir>/.lock for the command's lifetime.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw CommandError("io", "cannot create run directory '" + dir.string() + "': " + ec.message());
    const auto path = (dir / ".lock").string();
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw CommandError("io", "cannot open lock file '" + path + "'");
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw CommandError("locked", "run directory '" + dir.string() + "' is in use by another process");
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

void apply_overrides(SearchConfig& cfg, const RunOptions& opt) {
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.lambda_order) cfg.lambda_order = *opt.lambda_order;
  if (opt.lambda_flops) cfg.lambda_flops = *opt.lambda_flops;
  if (opt.train_mode) cfg.train_mode = *opt.train_mode;
  if (opt.softmax_baseline) cfg.normalization = Normalization::kSoftmax;
}

SearchConfig checked(SearchConfig cfg) {
  const auto problems = validation_errors(cfg);
  if (!problems.empty()) throw ConfigError(problems);
  return cfg;
}

SearchConfig config_from_options(const RunOptions& opt) {
  if (opt.config_path.empty()) throw CommandError("usage", "--config is required");
  auto cfg = load_config(opt.config_path);
  apply_overrides(cfg, opt);
  return checked(cfg);
}

SearchConfig config_from_checkpoint(const ckpt::Checkpoint& c) { return parse_config(c.config_text, {}, true); }

/// A resumed run takes its config from the checkpoint; an explicit config
/// and overrides must agree with it.
SearchConfig resume_config(const ckpt::Checkpoint& c, const RunOptions& opt) {
  auto cfg = config_from_checkpoint(c);
  auto wanted = opt.config_path.empty() ? cfg : load_config(opt.config_path);
  apply_overrides(wanted, opt);
  if (to_text(wanted) != to_text(cfg)) {
    throw CommandError("config", "config differs from the checkpoint being resumed (hash " + config_hash(wanted) +
                                     " vs " + config_hash(cfg) + ")");
  }
  return cfg;
}

void require_compatible(const SearchConfig& cfg, const SearchConfig& upstream, const std::string& path) {
  const auto a = to_text(cfg), b = to_text(upstream);
  auto value = [](const std::string& text, const std::string& key) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind(key + " = ", 0) == 0) return line.substr(key.size() + 3);
    }
    return std::string();
  };
  for (const auto& key : kStructuralKeys) {
    if (value(a, key) != value(b, key)) {
      throw CommandError("config", "upstream checkpoint '" + path + "' has " + key + " = " + value(b, key) +
                                       ", config has " + value(a, key));
    }
  }
}

ckpt::Checkpoint load_checkpoint(const std::string& path, ckpt::Phase phase, bool need_complete) {
  if (!fs::exists(path)) throw CommandError("missing_upstream", "checkpoint '" + path + "' not found");
  auto c = ckpt::load(path);
  if (c.phase != phase) {
    throw CommandError("checkpoint", "checkpoint '" + path + "' holds phase " + ckpt::to_string(c.phase) +
                                         ", expected " + ckpt::to_string(phase));
  }
  if (need_complete && !c.complete) {
    throw CommandError("checkpoint", "checkpoint '" + path + "' holds an unfinished " + ckpt::to_string(phase) +
                                         " phase; resume it first");
  }
  return c;
}

std::string manifest(const std::string& command, const SearchConfig& cfg, const std::string& upstream) {
  std::ostringstream os;
  os << "# command = " << command << "\n"
     << "# config_hash = " << config_hash(cfg) << "\n"
     << "# seed = " << cfg.seed << "\n"
     << "# upstream = " << (upstream.empty() ? "none" : upstream) << "\n"
     << "# checkpoint_format = " << ckpt::kFormatVersion << "\n"
     << to_text(cfg);
  return os.str();
}

void write_metrics(const fs::path& path, const std::vector<std::string>& rows) {
  std::string text = metrics_header() + "\n";
  for (const auto& r : rows) text += r + "\n";
  write_atomic(path, text);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TreeSupernet fresh_supernet(const SearchConfig& cfg) {
  Rng rng(init_seed(cfg));
  return build_supernet(cfg, rng);
}

nd::Adam make_optimizer(const std::vector<nd::Tensor>& params, double lr) {
  nd::AdamConfig a;
  a.lr = lr;
  return nd::Adam(params, a);
}

DerivedModel model_from_arch(const DerivedArch& arch) {
  Rng rng(0);
  return init_model(arch, rng);
}

/// Shared per-epoch bookkeeping of a training phase: append the row, save the
/// checkpoint and metrics, honor stop requests.
class PhaseDriver {
 public:
  PhaseDriver(const RunOptions& opt, std::ostream& log, std::string tag, std::vector<std::string> rows)
      : opt_(opt), log_(log), tag_(std::move(tag)), rows_(std::move(rows)) {}

  template <typename Save>
  EpochCallback callback(int total, Save save) {
    return [this, total, save](const MetricsRow& r, const PhaseProgress& p) {
      rows_.push_back(format_metrics(r));
      save(p);
      ++ran_;
      if (opt_.verbose) {
        log_ << "[" << tag_ << "] epoch " << p.epochs_done << "/" << total << " loss " << fmt(r.loss_content)
             << " psnr " << fmt(r.psnr_val) << "\n";
      }
      if (g_stop.load()) return false;
      return opt_.stop_after < 0 || ran_ < opt_.stop_after;
    };
  }

  const std::vector<std::string>& rows() const { return rows_; }

 private:
  const RunOptions& opt_;
  std::ostream& log_;
  std::string tag_;
  std::vector<std::string> rows_;
  int ran_ = 0;
};

void report_stop(std::ostream& out, const std::string& phase, int done, int total, const fs::path& ckpt_path) {
  out << "stopped phase=" << phase << " epochs_done=" << done << "/" << total << " checkpoint=" << ckpt_path.string()
      << "\n";
  if (g_stop.load()) throw CommandError("interrupted", "stopped by signal after epoch " + std::to_string(done));
}

void check_stop_after(const RunOptions& opt) {
  if (opt.stop_after == 0 || opt.stop_after < -1) throw CommandError("usage", "--stop-after must be positive");
}

ckpt::Checkpoint supernet_checkpoint(ckpt::Phase phase, const SearchConfig& cfg, const TreeSupernet& net,
                                     const PhaseProgress& p, bool complete, const std::vector<std::string>& rows) {
  ckpt::Checkpoint c;
  c.phase = phase;
  c.epochs_done = p.epochs_done;
  c.complete = complete;
  c.arch_steps = p.arch_steps;
  c.config_text = to_text(cfg);
  c.metrics = rows;
  c.weights = net.weights();
  c.arch = net.arch_params();
  if (!p.w_opt.params().empty()) c.w_opt = ckpt::capture(p.w_opt);
  if (!p.arch_opt.params().empty()) c.arch_opt = ckpt::capture(p.arch_opt);
  return c;
}

void restore_supernet(TreeSupernet& net, const ckpt::Checkpoint& c) {
  ckpt::assign(net.weights(), c.weights, "weights");
  ckpt::assign(net.arch_params(), c.arch, "architecture logits");
}

void restore_progress(PhaseProgress& p, const ckpt::Checkpoint& c, const std::vector<nd::Tensor>& w,
                      double lr_w, const std::vector<nd::Tensor>& arch, double lr_arch) {
  p.epochs_done = c.epochs_done;
  p.arch_steps = c.arch_steps;
  if (!c.w_opt.moments.empty()) {
    p.w_opt = make_optimizer(w, lr_w);
    ckpt::restore(p.w_opt, c.w_opt);
  }
  if (!c.arch_opt.moments.empty()) {
    p.arch_opt = make_optimizer(arch, lr_arch);
    ckpt::restore(p.arch_opt, c.arch_opt);
  }
}

void cmd_pretrain(const RunOptions& opt, std::ostream& out, std::ostream& log) {
  check_stop_after(opt);
  const fs::path dir(opt.out_dir);
  DirLock lock(dir);
  std::optional<ckpt::Checkpoint> prev;
  if (!opt.resume.empty()) prev = load_checkpoint(opt.resume, ckpt::Phase::kPretrain, false);
  const auto cfg = prev ? resume_config(*prev, opt) : config_from_options(opt);
  write_atomic(dir / "manifest_pretrain.cfg", manifest("pretrain", cfg, opt.resume));

  auto net = fresh_supernet(cfg);
  const auto data = make_run_data(cfg);
  PhaseProgress p;
  if (prev) {
    restore_supernet(net, *prev);
    restore_progress(p, *prev, net.weights(), cfg.lr_w, {}, 0.0);
  }
  const auto ckpt_path = dir / "pretrain.ckpt";
  PhaseDriver driver(opt, log, "pretrain", prev ? prev->metrics : std::vector<std::string>{});
  auto save = [&](const PhaseProgress& pp) {
    ckpt::save(ckpt_path.string(),
               supernet_checkpoint(ckpt::Phase::kPretrain, cfg, net, pp, pp.epochs_done >= cfg.pretrain_epochs,
                                   driver.rows()));
    write_metrics(dir / "metrics_pretrain.csv", driver.rows());
  };
  pretrain(net, data.chi1, data.holdout, cfg, p, driver.callback(cfg.pretrain_epochs, save));
  if (p.epochs_done < cfg.pretrain_epochs) return report_stop(out, "pretrain", p.epochs_done, cfg.pretrain_epochs, ckpt_path);
  save(p);
  out << "pretrain complete epochs=" << p.epochs_done << " checkpoint=" << ckpt_path.string() << "\n";
}

void cmd_search(const RunOptions& opt, std::ostream& out, std::ostream& log) {
  check_stop_after(opt);
  const fs::path dir(opt.out_dir);
  DirLock lock(dir);
  std::optional<ckpt::Checkpoint> prev;
  std::string upstream;
  SearchConfig cfg;
  ckpt::Checkpoint start;
  if (!opt.resume.empty()) {
    start = load_checkpoint(opt.resume, ckpt::Phase::kSearch, false);
    cfg = resume_config(start, opt);
    upstream = opt.resume;
    prev = start;
  } else {
    cfg = config_from_options(opt);
    upstream = opt.checkpoint.empty() ? (dir / "pretrain.ckpt").string() : opt.checkpoint;
    start = load_checkpoint(upstream, ckpt::Phase::kPretrain, true);
    require_compatible(cfg, config_from_checkpoint(start), upstream);
  }
  write_atomic(dir / "manifest_search.cfg", manifest("search", cfg, upstream));

  auto net = fresh_supernet(cfg);
  restore_supernet(net, start);
  const auto data = make_run_data(cfg);
  PhaseProgress p;
  if (prev) restore_progress(p, *prev, net.weights(), cfg.lr_w, net.arch_params(), cfg.lr_arch);

  const auto ckpt_path = dir / "search.ckpt";
  PhaseDriver driver(opt, log, "search", prev ? prev->metrics : std::vector<std::string>{});
  auto save = [&](const PhaseProgress& pp) {
    ckpt::save(ckpt_path.string(), supernet_checkpoint(ckpt::Phase::kSearch, cfg, net, pp, false, driver.rows()));
    write_metrics(dir / "metrics_search.csv", driver.rows());
  };
  search(net, data.chi1, data.chi2, data.holdout, cfg, p, driver.callback(cfg.search_epochs, save));
  if (p.epochs_done < cfg.search_epochs) return report_stop(out, "search", p.epochs_done, cfg.search_epochs, ckpt_path);

  const auto res = finish_search(net, cfg, data.chi2, p.arch_steps, data.chi2.size());
  auto c = supernet_checkpoint(ckpt::Phase::kSearch, cfg, net, p, true, driver.rows());
  c.arch_text = to_text(res.arch);
  ckpt::save(ckpt_path.string(), c);
  write_metrics(dir / "metrics_search.csv", driver.rows());
  write_atomic(dir / "derived.txt", c.arch_text);
  out << "search complete path=" << res.arch.path_string() << " final_loss=" << fmt(res.final_loss)
      << " flops=" << count_flops(res.arch, cfg.image_size / cfg.scale, cfg.image_size / cfg.scale)
      << " checkpoint=" << ckpt_path.string() << "\n";
}

ckpt::Checkpoint final_checkpoint(const SearchConfig& cfg, const DerivedModel& model, const PhaseProgress& p,
                                  bool complete, const std::vector<std::string>& rows) {
  ckpt::Checkpoint c;
  c.phase = ckpt::Phase::kFinal;
  c.epochs_done = p.epochs_done;
  c.complete = complete;
  c.config_text = to_text(cfg);
  c.arch_text = to_text(model.arch);
  c.metrics = rows;
  c.weights = model.weights();
  if (!p.w_opt.params().empty()) c.w_opt = ckpt::capture(p.w_opt);
  return c;
}

DerivedModel model_from_checkpoint(const ckpt::Checkpoint& c) {
  auto model = model_from_arch(parse_derived_arch(c.arch_text));
  ckpt::assign(model.weights(), c.weights, "model weights");
  return model;
}

void cmd_train(const RunOptions& opt, std::ostream& out, std::ostream& log) {
  check_stop_after(opt);
  const fs::path dir(opt.out_dir);
  DirLock lock(dir);
  SearchConfig cfg;
  std::string upstream;
  std::optional<DerivedModel> model;
  PhaseProgress p;
  std::vector<std::string> rows;
  if (!opt.resume.empty()) {
    const auto prev = load_checkpoint(opt.resume, ckpt::Phase::kFinal, false);
    cfg = resume_config(prev, opt);
    upstream = opt.resume;
    model = model_from_checkpoint(prev);
    restore_progress(p, prev, model->weights(), cfg.lr_w, {}, 0.0);
    rows = prev.metrics;
  } else {
    cfg = config_from_options(opt);
    const auto search_path = opt.checkpoint.empty() ? (dir / "search.ckpt").string() : opt.checkpoint;
    const bool scratch = cfg.train_mode == TrainMode::kFromScratch;
    if (scratch && !opt.arch_path.empty()) {
      upstream = opt.arch_path;
      const auto arch = parse_derived_arch(read_file(opt.arch_path, "architecture"));
      Rng rng(derive_seed(init_seed(cfg), 3));
      model = init_model(arch, rng);
    } else {
      if (!fs::exists(search_path)) {
        throw CommandError("missing_upstream", scratch ? "train from_scratch needs --arch or a search checkpoint ('" +
                                                             search_path + "' not found)"
                                                       : "train from_search needs search checkpoint '" +
                                                             search_path + "'");
      }
      const auto sc = load_checkpoint(search_path, ckpt::Phase::kSearch, true);
      const auto scfg = config_from_checkpoint(sc);
      require_compatible(cfg, scfg, search_path);
      upstream = search_path;
      auto net = fresh_supernet(scfg);
      restore_supernet(net, sc);
      const auto arch = parse_derived_arch(sc.arch_text);
      model = make_final_model(net, arch, cfg);
    }
  }
  write_atomic(dir / "manifest_train.cfg", manifest("train", cfg, upstream));

  const auto data = make_run_data(cfg);
  const auto ckpt_path = dir / "train.ckpt";
  PhaseDriver driver(opt, log, "train", rows);
  auto save = [&](const PhaseProgress& pp) {
    ckpt::save(ckpt_path.string(), final_checkpoint(cfg, *model, pp, false, driver.rows()));
    write_metrics(dir / "metrics_train.csv", driver.rows());
  };
  train_final(*model, data.all, data.holdout, cfg, p, driver.callback(cfg.train_epochs, save));
  if (p.epochs_done < cfg.train_epochs) return report_stop(out, "train", p.epochs_done, cfg.train_epochs, ckpt_path);
  ckpt::save(ckpt_path.string(), final_checkpoint(cfg, *model, p, true, driver.rows()));
  write_metrics(dir / "metrics_train.csv", driver.rows());
  const ForwardFn f = [&](nd::Graph& g, const nd::Tensor& x) { return model->forward(g, x); };
  out << "train complete mode=" << to_string(cfg.train_mode) << " path=" << model->arch.path_string()
      << " holdout_psnr_db=" << fmt(evaluate_psnr(f, data.holdout, cfg.batch_size))
      << " checkpoint=" << ckpt_path.string() << "\n";
}

void cmd_derive(const RunOptions& opt, std::ostream& out, std::ostream&) {
  const fs::path dir(opt.out_dir);
  DirLock lock(dir);
  const auto path = opt.checkpoint.empty() ? (dir / "search.ckpt").string() : opt.checkpoint;
  const auto c = load_checkpoint(path, ckpt::Phase::kSearch, false);
  const auto cfg = config_from_checkpoint(c);
  auto net = fresh_supernet(cfg);
  restore_supernet(net, c);
  const auto data = make_run_data(cfg);
  const auto res = finish_search(net, cfg, data.chi2, c.arch_steps, data.chi2.size());
  write_atomic(dir / "manifest_derive.cfg", manifest("derive", cfg, path));
  write_atomic(dir / "derived.txt", to_text(res.arch));
  out << res.arch.path_string() << "\n";
}

void cmd_eval(const RunOptions& opt, std::ostream& out, std::ostream&) {
  if (!opt.pred_path.empty() || !opt.target_path.empty()) {
    if (opt.pred_path.empty() || opt.target_path.empty()) {
      throw CommandError("usage", "eval on files needs both --pred and --target");
    }
    nd::Tensor pred, target;
    try {
      pred = data::read_pgm(opt.pred_path);
      target = data::read_pgm(opt.target_path);
    } catch (const std::runtime_error& e) {
      throw CommandError("io", e.what());
    }
    if (pred.shape() != target.shape()) {
      throw CommandError("shape", "prediction " + nd::to_string(pred.shape()) + " vs target " +
                                      nd::to_string(target.shape()));
    }
    out << "psnr_db=" << fmt(data::psnr(pred, target)) << "\n";
    return;
  }
  const fs::path dir(opt.out_dir);
  DirLock lock(dir);
  const auto path = opt.checkpoint.empty() ? (dir / "train.ckpt").string() : opt.checkpoint;
  const auto c = load_checkpoint(path, ckpt::Phase::kFinal, false);
  const auto cfg = config_from_checkpoint(c);
  const auto model = model_from_checkpoint(c);
  const auto data = make_run_data(cfg);
  const ForwardFn f = [&](nd::Graph& g, const nd::Tensor& x) { return model.forward(g, x); };
  write_atomic(dir / "manifest_eval.cfg", manifest("eval", cfg, path));
  out << "psnr_db=" << fmt(evaluate_psnr(f, data.holdout, cfg.batch_size))
      << " l1=" << fmt(evaluate_loss(f, data.holdout, cfg.batch_size)) << " images=" << data.holdout.size() << "\n";
}

void cmd_flops(const RunOptions& opt, std::ostream& out, std::ostream&) {
  DerivedArch arch;
  if (!opt.arch_path.empty()) {
    arch = parse_derived_arch(read_file(opt.arch_path, "architecture"));
  } else {
    const fs::path dir(opt.out_dir);
    std::string path = opt.checkpoint;
    if (path.empty()) path = fs::exists(dir / "train.ckpt") ? (dir / "train.ckpt").string() : (dir / "search.ckpt").string();
    if (!fs::exists(path)) throw CommandError("missing_upstream", "flops needs --arch or a checkpoint ('" + path + "' not found)");
    const auto c = ckpt::load(path);
    if (c.arch_text.empty()) throw CommandError("checkpoint", "checkpoint '" + path + "' holds no derived architecture");
    arch = parse_derived_arch(c.arch_text);
  }
  if (opt.height <= 0 || opt.width <= 0) throw CommandError("usage", "--height and --width must be positive");
  out << "path=" << arch.path_string() << " flops=" << count_flops(arch, opt.height, opt.width)
      << " params=" << count_params(arch) << " height=" << opt.height << " width=" << opt.width << "\n";
}

void cmd_gendata(const RunOptions& opt, std::ostream& out, std::ostream&) {
  const auto cfg = config_from_options(opt);
  const fs::path dir(opt.out_dir);
  DirLock lock(dir);
  const auto data = make_run_data(cfg);
  const auto lr_size = cfg.image_size / cfg.scale;
  std::vector<data::ManifestEntry> entries;
  auto emit = [&](const Dataset& d, const std::string& split, std::uint64_t seed) {
    const auto sub = dir / split;
    fs::create_directories(sub);
    for (int i = 0; i < d.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%05d", i);
      data::write_pgm((sub / (std::string("lr_") + name + ".pgm")).string(), d.lr[static_cast<std::size_t>(i)]);
      data::write_pgm((sub / (std::string("target_") + name + ".pgm")).string(), d.target[static_cast<std::size_t>(i)]);
      entries.push_back({i, seed, lr_size, lr_size, split + "/lr_" + name + ".pgm"});
    }
  };
  emit(data.all, "train", data_seed(cfg));
  emit(data.holdout, "holdout", holdout_seed(cfg));
  write_atomic(dir / "manifest.txt", data::manifest_text(entries));
  write_atomic(dir / "manifest_gendata.cfg", manifest("gendata", cfg, ""));
  out << "gendata train=" << data.all.size() << " holdout=" << data.holdout.size() << " dir=" << dir.string() << "\n";
}

}  // namespace

void request_stop() { g_stop.store(true); }

std::string format_error(const std::string& kind, const std::string& message) {
  std::string m = message;
  for (auto& ch : m) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return "error[" + kind + "]: " + m;
}

void run_command(const std::string& name, const RunOptions& opt, std::ostream& out, std::ostream& log) {
  try {
    if (name == "pretrain") return cmd_pretrain(opt, out, log);
    if (name == "search") return cmd_search(opt, out, log);
    if (name == "train") return cmd_train(opt, out, log);
    if (name == "derive") return cmd_derive(opt, out, log);
    if (name == "eval") return cmd_eval(opt, out, log);
    if (name == "flops") return cmd_flops(opt, out, log);
    if (name == "gendata") return cmd_gendata(opt, out, log);
    throw CommandError("usage", "unknown command '" + name + "'");
  } catch (const CommandError&) {
    throw;
  } catch (const ConfigError& e) {
    std::string all;
    for (const auto& p : e.problems()) all += (all.empty() ? "" : "; ") + p;
    throw CommandError("config", all);
  } catch (const ckpt::CheckpointError& e) {
    throw CommandError("checkpoint", e.what());
  } catch (const data::PgmError& e) {
    throw CommandError("io", e.what());
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    throw CommandError(what.rfind("diverged", 0) == 0 ? "diverged" : "runtime", what);
  } catch (const std::exception& e) {
    throw CommandError("internal", e.what());
  }
}

}  // namespace tnas::cli
