#include "tnas/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace tnas::nd {

void adam_step(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::int64_t step,
               const AdamConfig& cfg) {
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameter size");
  }
  if (!grad.empty() && grad.size() != param.size()) {
    throw std::invalid_argument("adam_step: gradient does not match parameter size");
  }
  if (step < 1) throw std::invalid_argument("adam_step: step count must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  moments_.reserve(params_.size());
  for (const auto& p : params_) {
    const auto n = static_cast<std::size_t>(p.numel());
    moments_.push_back(AdamMoments{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void Adam::step() {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const std::span<const double> g = p.has_grad() ? std::span<const double>(p.grad()) : std::span<const double>{};
    adam_step(p.data(), g, moments_[i], steps_, cfg_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p.has_grad()) p.zero_grad();
  }
}

}  // namespace tnas::nd
