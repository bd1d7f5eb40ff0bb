#include "tnas/projections.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tnas::proj {

namespace {

// Entries more negative than this after a radial step leave the support;
// anything in (-kNegTol, 0) is rounding noise and is clamped to zero.
constexpr double kNegTol = 1e-14;
constexpr double kRadiusTol = 1e-12;

void require_finite(std::span<const double> v, const char* op) {
  if (v.empty()) throw std::invalid_argument(std::string(op) + ": empty input");
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(op) + ": non-finite input");
  }
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

double circumradius(std::size_t k) {
  if (k == 0) throw std::invalid_argument("circumradius of an empty simplex");
  return std::sqrt(static_cast<double>(k - 1) / static_cast<double>(k));
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double RadiusSchedule::at(std::int64_t step) const {
  if (total_steps <= 0) return r_max;
  if (step <= 0) return 0.0;
  if (step >= total_steps) return r_max;
  return r_max * (static_cast<double>(step) / static_cast<double>(total_steps));
}

Vec softmax(std::span<const double> v) {
  require_finite(v, "softmax");
  const double m = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    s += out[i];
  }
  for (auto& x : out) x /= s;
  return out;
}

Vec sparsemax(std::span<const double> v) {
  require_finite(v, "sparsemax");
  Vec sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0;
  double support_sum = sorted[0];
  std::size_t rho = 1;
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    cumsum += sorted[k - 1];
    if (1.0 + static_cast<double>(k) * sorted[k - 1] > cumsum) {
      rho = k;
      support_sum = cumsum;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(rho);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  return out;
}

SparsestmaxSolution sparsestmax_solve(std::span<const double> v, double r) {
  require_finite(v, "sparsestmax");
  const std::size_t K = v.size();
  const double rc = circumradius(K);
  if (!(r >= 0.0) || r > rc + kRadiusTol) {
    throw std::invalid_argument("sparsestmax: radius " + std::to_string(r) + " outside [0, " +
                                std::to_string(rc) + "]");
  }

  SparsestmaxSolution sol;
  auto vertex = [&](std::size_t at) {
    sol.kind = ProjectionCase::kVertex;
    sol.q.assign(K, 0.0);
    sol.q[at] = 1.0;
    sol.support = {at};
    sol.inner_support = {at};
    return sol;
  };
  auto plain = [&](Vec p) {
    sol.kind = ProjectionCase::kSparsemax;
    sol.q = std::move(p);
    for (std::size_t i = 0; i < K; ++i) {
      if (sol.q[i] > 0.0) sol.support.push_back(i);
    }
    sol.inner_support = sol.support;
    return sol;
  };

  if (K == 1) return vertex(0);
  Vec p = sparsemax(v);
  if (r == 0.0) return plain(std::move(p));
  // At the circumradius the only feasible points are the vertices.
  if (r >= rc - kRadiusTol) return vertex(argmax(v));

  const double u = 1.0 / static_cast<double>(K);
  double dist2 = 0.0;
  for (double x : p) dist2 += (x - u) * (x - u);
  if (std::sqrt(dist2) >= r) return plain(std::move(p));

  std::vector<std::size_t> face(K);
  std::iota(face.begin(), face.end(), std::size_t{0});
  while (true) {
    const std::size_t k = face.size();
    if (k == 1) return vertex(face[0]);
    const double uf = 1.0 / static_cast<double>(k);

    Vec vf(k);
    for (std::size_t j = 0; j < k; ++j) vf[j] = v[face[j]];
    const Vec pf = sparsemax(vf);

    Vec d(k);
    for (std::size_t j = 0; j < k; ++j) d[j] = pf[j] - uf;
    double n = norm(d);
    bool escaped = false;
    if (n <= 1e-15) {
      // Fully tied on this face: leave the center toward the lowest index.
      for (std::size_t j = 0; j < k; ++j) d[j] = (j == 0 ? 1.0 : 0.0) - uf;
      n = norm(d);
      escaped = true;
    }
    const double face_r2 = r * r - (uf - u);
    const double face_r = std::sqrt(std::max(0.0, face_r2));

    Vec qf(k);
    std::vector<std::size_t> keep;
    keep.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      qf[j] = uf + face_r * d[j] / n;
      if (qf[j] >= -kNegTol) keep.push_back(j);
    }
    if (keep.size() == k) {
      sol.kind = ProjectionCase::kRadial;
      sol.q.assign(K, 0.0);
      for (std::size_t j = 0; j < k; ++j) sol.q[face[j]] = std::max(qf[j], 0.0);
      sol.support = face;
      if (!escaped) {
        for (std::size_t j = 0; j < k; ++j) {
          if (pf[j] > 0.0) sol.inner_support.push_back(face[j]);
        }
        sol.direction = std::move(d);
      }
      sol.face_radius = face_r;
      return sol;
    }
    std::vector<std::size_t> next;
    next.reserve(keep.size());
    for (auto j : keep) next.push_back(face[j]);
    face = std::move(next);
  }
}

Vec sparsestmax(std::span<const double> v, double r) { return sparsestmax_solve(v, r).q; }

Vec sparsestmax_grad(std::span<const double> v, double r, std::span<const double> upstream) {
  if (upstream.size() != v.size()) throw std::invalid_argument("sparsestmax_grad: upstream length mismatch");
  const auto sol = sparsestmax_solve(v, r);
  Vec out(v.size(), 0.0);
  switch (sol.kind) {
    case ProjectionCase::kVertex:
      return out;
    case ProjectionCase::kSparsemax: {
      double mean = 0.0;
      for (auto i : sol.support) mean += upstream[i];
      mean /= static_cast<double>(sol.support.size());
      for (auto i : sol.support) out[i] = upstream[i] - mean;
      return out;
    }
    case ProjectionCase::kRadial: {
      if (sol.direction.empty()) return out;  // tie escape: no defined derivative
      const auto& face = sol.support;
      const std::size_t k = face.size();
      const double n = norm(sol.direction);
      double along = 0.0;
      for (std::size_t j = 0; j < k; ++j) along += sol.direction[j] / n * upstream[face[j]];
      // w = (r_face / |d|) (I - dhat dhat^T) g on the face.
      Vec w(v.size(), 0.0);
      for (std::size_t j = 0; j < k; ++j) {
        w[face[j]] = sol.face_radius / n * (upstream[face[j]] - sol.direction[j] / n * along);
      }
      // d depends on v through the face sparsemax: center over its support.
      double mean = 0.0;
      for (auto i : sol.inner_support) mean += w[i];
      mean /= static_cast<double>(sol.inner_support.size());
      for (auto i : sol.inner_support) out[i] = w[i] - mean;
      return out;
    }
  }
  return out;
}

Vec softmax_grad(std::span<const double> probs, std::span<const double> upstream) {
  double dotp = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dotp += probs[i] * upstream[i];
  Vec out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (upstream[i] - dotp);
  return out;
}

Penalty ordering_penalty(std::span<const double> beta_path, double lambda, OrderingMode mode) {
  if (beta_path.empty()) throw std::invalid_argument("ordering_penalty: empty path");
  Penalty p;
  p.gradient.assign(beta_path.size(), 0.0);
  for (std::size_t j = 1; j < beta_path.size(); ++j) {
    const double diff = beta_path[j] - beta_path[j - 1];
    if (mode == OrderingMode::kHinge && diff <= 0.0) continue;
    p.value += lambda * diff;
    p.gradient[j] += lambda;
    p.gradient[j - 1] -= lambda;
  }
  return p;
}

GumbelSample gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax_sample: temperature must be positive");
  require_finite(logits, "gumbel_softmax_sample");
  GumbelSample s;
  s.noise.resize(logits.size());
  Vec scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    s.noise[i] = rng.gumbel();
    scaled[i] = (logits[i] + s.noise[i]) / tau;
  }
  s.soft = softmax(scaled);
  s.hard = argmax(s.soft);
  return s;
}

nd::Tensor softmax(nd::Graph& g, const nd::Tensor& logits) {
  nd::Tensor out(logits.shape(), softmax(logits.data()));
  if (g.needs_grad({&logits})) {
    g.record(out, [logits = logits, out = out]() mutable {
      const auto gv = softmax_grad(out.data(), out.grad());
      auto gl = logits.ensure_grad();
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gv[i];
    });
  }
  return out;
}

nd::Tensor sparsestmax(nd::Graph& g, const nd::Tensor& logits, double r) {
  nd::Tensor out(logits.shape(), sparsestmax(logits.data(), r));
  if (g.needs_grad({&logits})) {
    g.record(out, [logits = logits, out = out, r]() mutable {
      const auto gv = sparsestmax_grad(logits.data(), r, out.grad());
      auto gl = logits.ensure_grad();
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gv[i];
    });
  }
  return out;
}

nd::Tensor gumbel_softmax(nd::Graph& g, const nd::Tensor& logits, std::span<const double> noise, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  if (static_cast<std::int64_t>(noise.size()) != logits.numel()) {
    throw std::invalid_argument("gumbel_softmax: noise length does not match logits");
  }
  Vec scaled(noise.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = (logits[static_cast<std::int64_t>(i)] + noise[i]) / tau;
  nd::Tensor out(logits.shape(), softmax(scaled));
  if (g.needs_grad({&logits})) {
    g.record(out, [logits = logits, out = out, tau]() mutable {
      const auto gv = softmax_grad(out.data(), out.grad());
      auto gl = logits.ensure_grad();
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gv[i] / tau;
    });
  }
  return out;
}

nd::Tensor straight_through(nd::Graph& g, const nd::Tensor& soft, std::size_t index) {
  if (static_cast<std::int64_t>(index) >= soft.numel()) {
    throw std::invalid_argument("straight_through: index out of range");
  }
  nd::Tensor out = nd::Tensor::scalar(1.0);
  if (g.needs_grad({&soft})) {
    g.record(out, [soft = soft, out = out, index]() mutable { soft.ensure_grad()[index] += out.grad()[0]; });
  }
  return out;
}

}  // namespace tnas::proj
