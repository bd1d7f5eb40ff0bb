#pragma once

// Single-file run checkpoints.
//
// Layout: a text header of "key = value" lines opened by "TNAS <version>" and
// closed by "end", then raw sections. Each "section <name> <offset> <bytes>"
// line locates one section relative to the first byte after "end\n". Tensor
// sections hold a little-endian u64 count followed by tensor records.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tnas/adam.hpp"
#include "tnas/tensor.hpp"

namespace tnas::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Phase { kPretrain, kSearch, kFinal };

std::string to_string(Phase p);
Phase parse_phase(const std::string& s);

struct OptimizerState {
  std::int64_t steps = 0;
  std::vector<nd::AdamMoments> moments;  // empty before the first step
};

struct Checkpoint {
  Phase phase = Phase::kPretrain;
  int epochs_done = 0;
  bool complete = false;
  std::int64_t arch_steps = 0;  // radius-schedule position
  std::string config_text;
  std::string arch_text;  // derived architecture (search when complete, final)
  std::vector<std::string> metrics;
  std::vector<nd::Tensor> weights;  // supernet weights, or derived-model weights for kFinal
  std::vector<nd::Tensor> arch;     // alpha, beta, gamma logits; empty for kFinal
  OptimizerState w_opt;
  OptimizerState arch_opt;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string encode(const Checkpoint& c);
/// Throws CheckpointError on a bad magic, an unsupported version or any
/// malformed header or section.
Checkpoint decode(const std::string& bytes);

/// Writes to "<path>.tmp" and renames over `path`.
void save(const std::string& path, const Checkpoint& c);
Checkpoint load(const std::string& path);

/// Copies tensor values into same-shaped destinations.
void assign(const std::vector<nd::Tensor>& dst, const std::vector<nd::Tensor>& src, const char* what);
OptimizerState capture(const nd::Adam& opt);
void restore(nd::Adam& opt, const OptimizerState& s);

}  // namespace tnas::ckpt
