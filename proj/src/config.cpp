#include "tnas/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "tnas/searchspace.hpp"

namespace tnas {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : "; ") + s;
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

struct Field {
  std::function<std::string(const SearchConfig&)> get;
  // Returns an error message, empty on success.
  std::function<std::string(SearchConfig&, const std::string&)> set;
};

template <class T>
Field int_field(T SearchConfig::*member) {
  return {[member](const SearchConfig& c) { return std::to_string(c.*member); },
          [member](SearchConfig& c, const std::string& v) -> std::string {
            T x{};
            if (!parse_number(v, x)) return "expected an integer, got '" + v + "'";
            c.*member = x;
            return "";
          }};
}

Field double_field(double SearchConfig::*member) {
  return {[member](const SearchConfig& c) { return format_double(c.*member); },
          [member](SearchConfig& c, const std::string& v) -> std::string {
            double x = 0.0;
            if (!parse_number(v, x) || !std::isfinite(x)) return "expected a finite number, got '" + v + "'";
            c.*member = x;
            return "";
          }};
}

Field bool_field(bool SearchConfig::*member) {
  return {[member](const SearchConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member](SearchConfig& c, const std::string& v) -> std::string {
            if (v == "true") {
              c.*member = true;
            } else if (v == "false") {
              c.*member = false;
            } else {
              return "expected true or false, got '" + v + "'";
            }
            return "";
          }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", int_field(&SearchConfig::seed)},
      {"blocks", int_field(&SearchConfig::blocks)},
      {"cells_per_block", int_field(&SearchConfig::cells_per_block)},
      {"base_width", int_field(&SearchConfig::base_width)},
      {"scale", int_field(&SearchConfig::scale)},
      {"pretrain_epochs", int_field(&SearchConfig::pretrain_epochs)},
      {"search_epochs", int_field(&SearchConfig::search_epochs)},
      {"train_epochs", int_field(&SearchConfig::train_epochs)},
      {"batch_size", int_field(&SearchConfig::batch_size)},
      {"patch_size", int_field(&SearchConfig::patch_size)},
      {"lr_w", double_field(&SearchConfig::lr_w)},
      {"lr_arch", double_field(&SearchConfig::lr_arch)},
      {"lambda_flops", double_field(&SearchConfig::lambda_flops)},
      {"lambda_order", double_field(&SearchConfig::lambda_order)},
      {"omega1", double_field(&SearchConfig::omega1)},
      {"omega2", double_field(&SearchConfig::omega2)},
      {"gumbel_tau_start", double_field(&SearchConfig::gumbel_tau_start)},
      {"gumbel_tau_end", double_field(&SearchConfig::gumbel_tau_end)},
      {"hinge_order", bool_field(&SearchConfig::hinge_order)},
      {"per_node_tail", bool_field(&SearchConfig::per_node_tail)},
      {"train_mode",
       {[](const SearchConfig& c) { return to_string(c.train_mode); },
        [](SearchConfig& c, const std::string& v) -> std::string {
          if (v == "from_search") {
            c.train_mode = TrainMode::kFromSearch;
          } else if (v == "from_scratch") {
            c.train_mode = TrainMode::kFromScratch;
          } else {
            return "expected from_search or from_scratch, got '" + v + "'";
          }
          return "";
        }}},
      {"normalization",
       {[](const SearchConfig& c) { return to_string(c.normalization); },
        [](SearchConfig& c, const std::string& v) -> std::string {
          if (v == "sparsestmax") {
            c.normalization = Normalization::kSparsestmax;
          } else if (v == "softmax") {
            c.normalization = Normalization::kSoftmax;
          } else {
            return "expected sparsestmax or softmax, got '" + v + "'";
          }
          return "";
        }}},
      {"flops_eval_height", int_field(&SearchConfig::flops_eval_height)},
      {"flops_eval_width", int_field(&SearchConfig::flops_eval_width)},
      {"num_images", int_field(&SearchConfig::num_images)},
      {"image_size", int_field(&SearchConfig::image_size)},
      {"holdout_images", int_field(&SearchConfig::holdout_images)},
      {"record_wall_seconds", bool_field(&SearchConfig::record_wall_seconds)},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid config: " + join(problems)), problems_(std::move(problems)) {}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(SearchConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError({"unknown key '" + key + "'"});
  const auto err = f->set(cfg, value);
  if (!err.empty()) throw ConfigError({key + ": " + err});
}

SearchConfig parse_config(const std::string& text, const SearchConfig& base, bool require_all) {
  SearchConfig cfg = base;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  std::map<std::string, int> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + "expected 'key = value'");
      continue;
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) {
      problems.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (seen.count(key)) {
      problems.push_back(where + "duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")");
      continue;
    }
    seen[key] = lineno;
    if (auto err = f->set(cfg, value); !err.empty()) problems.push_back(where + key + ": " + err);
  }
  if (require_all) {
    for (const auto& [name, f] : fields()) {
      if (!seen.count(name)) problems.push_back("missing key '" + name + "'");
    }
  }
  for (auto& v : validation_errors(cfg)) problems.push_back(std::move(v));
  if (!problems.empty()) throw ConfigError(problems);
  return cfg;
}

SearchConfig load_config(const std::string& path, bool require_all) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), SearchConfig{}, require_all);
}

std::string to_text(const SearchConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> validation_errors(const SearchConfig& cfg) {
  std::vector<std::string> p;
  auto positive = [&](const char* name, long long v) {
    if (v <= 0) p.push_back(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  auto nonneg = [&](const char* name, long long v) {
    if (v < 0) p.push_back(std::string(name) + " must be >= 0, got " + std::to_string(v));
  };
  positive("blocks", cfg.blocks);
  positive("cells_per_block", cfg.cells_per_block);
  positive("base_width", cfg.base_width);
  positive("scale", cfg.scale);
  nonneg("pretrain_epochs", cfg.pretrain_epochs);
  nonneg("search_epochs", cfg.search_epochs);
  nonneg("train_epochs", cfg.train_epochs);
  positive("batch_size", cfg.batch_size);
  nonneg("patch_size", cfg.patch_size);
  positive("flops_eval_height", cfg.flops_eval_height);
  positive("flops_eval_width", cfg.flops_eval_width);
  positive("num_images", cfg.num_images);
  nonneg("holdout_images", cfg.holdout_images);
  if (cfg.num_images > 0 && cfg.num_images < 2) p.push_back("num_images must be >= 2 to split into two halves");
  if (!(cfg.lr_w > 0.0)) p.push_back("lr_w must be positive");
  if (!(cfg.lr_arch > 0.0)) p.push_back("lr_arch must be positive");
  if (!(cfg.lambda_flops >= 0.0)) p.push_back("lambda_flops must be >= 0");
  if (!(cfg.lambda_order >= 0.0 && cfg.lambda_order <= 1.0)) p.push_back("lambda_order must lie in [0, 1]");
  if (!(cfg.omega1 >= 0.0)) p.push_back("omega1 must be >= 0");
  if (!(cfg.omega2 >= 0.0)) p.push_back("omega2 must be >= 0");
  if (!(cfg.gumbel_tau_start > 0.0)) p.push_back("gumbel_tau_start must be positive");
  if (!(cfg.gumbel_tau_end > 0.0)) p.push_back("gumbel_tau_end must be positive");
  if (cfg.image_size < 16) p.push_back("image_size must be >= 16, got " + std::to_string(cfg.image_size));
  if (cfg.scale > 0 && cfg.image_size % cfg.scale != 0) {
    p.push_back("image_size " + std::to_string(cfg.image_size) + " is not divisible by scale " +
                std::to_string(cfg.scale));
  }
  if (cfg.patch_size > 0) {
    if (cfg.scale > 0 && cfg.patch_size % cfg.scale != 0) p.push_back("patch_size must be divisible by scale");
    if (cfg.patch_size > cfg.image_size) p.push_back("patch_size must not exceed image_size");
  }
  if (cfg.base_width > 0) {
    for (std::size_t i = 0; i < kRatios.size(); ++i) {
      if (ratio_width(cfg.base_width, static_cast<int>(i)) < 1) {
        p.push_back("base_width " + std::to_string(cfg.base_width) + " gives zero channels at ratio index " +
                    std::to_string(i));
      }
    }
  }
  return p;
}

void validate(const SearchConfig& cfg) {
  auto p = validation_errors(cfg);
  if (!p.empty()) throw ConfigError(std::move(p));
}

std::string config_hash(const SearchConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : to_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string to_string(TrainMode m) { return m == TrainMode::kFromSearch ? "from_search" : "from_scratch"; }
std::string to_string(Normalization n) { return n == Normalization::kSparsestmax ? "sparsestmax" : "softmax"; }

}  // namespace tnas
