#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tnas/tensor.hpp"

namespace tnas::nd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update. `step` is the 1-based update count.
void adam_step(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::int64_t step,
               const AdamConfig& cfg);

/// Adam over a fixed parameter set; parameters without a gradient buffer are
/// treated as having zero gradient.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  void zero_grad();

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return steps_; }

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<AdamMoments>& moments() { return moments_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }
  void set_steps(std::int64_t s) { steps_ = s; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamMoments> moments_;
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
};

}  // namespace tnas::nd
