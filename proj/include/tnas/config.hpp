#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tnas {

enum class TrainMode { kFromSearch, kFromScratch };
enum class Normalization { kSparsestmax, kSoftmax };

/// Every knob of a run. Serialized as flat "key = value" text; the key list
/// below is exhaustive and unknown keys are rejected.
struct SearchConfig {
  std::uint64_t seed = 1;

  // Backbone.
  int blocks = 3;
  int cells_per_block = 3;
  int base_width = 16;
  int scale = 2;

  // Phases (epochs). Zero skips the phase.
  int pretrain_epochs = 20;
  int search_epochs = 50;
  int train_epochs = 100;

  int batch_size = 4;
  int patch_size = 0;  // HR crop edge; 0 trains on whole images

  double lr_w = 5e-3;
  double lr_arch = 3e-3;
  double lambda_flops = 1e-2;  // per GFLOP at the eval resolution
  double lambda_order = 0.0;
  double omega1 = 1.0;  // efficiency weight on alpha, beta
  double omega2 = 1.0;  // efficiency weight on gamma
  double gumbel_tau_start = 5.0;
  double gumbel_tau_end = 0.1;
  bool hinge_order = false;
  bool per_node_tail = false;
  TrainMode train_mode = TrainMode::kFromSearch;
  Normalization normalization = Normalization::kSparsestmax;

  // LR resolution at which the efficiency term counts FLOPs.
  int flops_eval_height = 256;
  int flops_eval_width = 256;

  // Synthetic data.
  int num_images = 128;
  int image_size = 32;  // HR edge
  int holdout_images = 32;

  bool record_wall_seconds = false;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Names of all recognized keys, in serialization order.
const std::vector<std::string>& config_keys();

/// Parses "key = value" lines ('#' starts a comment) on top of `base`.
/// With `require_all`, every key in config_keys() must appear. Collects every
/// problem (syntax, unknown, duplicate, missing, out of range) before
/// throwing ConfigError.
SearchConfig parse_config(const std::string& text, const SearchConfig& base = {}, bool require_all = false);
SearchConfig load_config(const std::string& path, bool require_all = true);

/// Sets one key from its text value; throws ConfigError on a bad key or value.
void set_config_value(SearchConfig& cfg, const std::string& key, const std::string& value);

/// Canonical text: every key in config_keys() order, doubles in round-trip form.
std::string to_text(const SearchConfig& cfg);

/// Range checks across fields; returns the list of violations (empty if valid).
std::vector<std::string> validation_errors(const SearchConfig& cfg);
void validate(const SearchConfig& cfg);

/// FNV-1a 64 of to_text(cfg), hex encoded.
std::string config_hash(const SearchConfig& cfg);

std::string to_string(TrainMode m);
std::string to_string(Normalization n);

}  // namespace tnas
