#pragma once

// The run commands behind the tnas executable.
//
// A run directory holds one checkpoint per phase (pretrain.ckpt, search.ckpt,
// train.ckpt), one metrics CSV per phase, a manifest per command and the
// derived architecture. Manifests are valid config files whose comment lines
// record the command, config hash and seed. A lock file keeps a second writer
// out of the directory.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "tnas/config.hpp"

namespace tnas::cli {

struct RunOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string resume;      // checkpoint of the same phase to continue
  std::string checkpoint;  // upstream or inspected checkpoint; defaults inside out_dir
  std::optional<double> lambda_order;
  std::optional<double> lambda_flops;
  std::optional<TrainMode> train_mode;
  bool softmax_baseline = false;
  int stop_after = -1;  // epochs to run in this invocation before checkpointing and returning
  bool verbose = false;  // per-epoch progress on the log stream

  std::string arch_path;  // flops, train from_scratch
  std::string pred_path;  // eval on files
  std::string target_path;
  std::int64_t height = 32;  // flops resolution (LR)
  std::int64_t width = 32;
};

/// Failure with a stable category name, reported as one line.
class CommandError : public std::runtime_error {
 public:
  CommandError(std::string kind, const std::string& message) : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

/// Set from a signal handler; a running phase stops after its current epoch.
void request_stop();

/// Runs one of pretrain, search, train, derive, eval, flops, gendata.
/// Results go to `out`, progress to `log`. Throws CommandError.
void run_command(const std::string& name, const RunOptions& opt, std::ostream& out, std::ostream& log);

/// "error[<kind>]: <message>" with newlines folded.
std::string format_error(const std::string& kind, const std::string& message);

}  // namespace tnas::cli
