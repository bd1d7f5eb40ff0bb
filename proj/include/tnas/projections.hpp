#pragma once

// Normalizations that turn architecture logits into mixture weights: softmax,
// sparsemax, sparsestmax (simplex projection outside a ball around the
// simplex center), the path-ordering penalty, and Gumbel-softmax sampling.
// Every output is a point of the probability simplex. Ties resolve to the
// lowest index throughout.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tnas/graph.hpp"
#include "tnas/rng.hpp"
#include "tnas/tensor.hpp"

namespace tnas::proj {

using Vec = std::vector<double>;

/// Distance from the simplex center to a vertex: sqrt((K-1)/K).
double circumradius(std::size_t k);

std::size_t argmax(std::span<const double> v);

/// Linear ramp r(t) = r_max * min(1, t / total_steps).
struct RadiusSchedule {
  double r_max = 0.0;
  std::int64_t total_steps = 1;

  double at(std::int64_t step) const;
};

Vec softmax(std::span<const double> v);
Vec sparsemax(std::span<const double> v);

enum class ProjectionCase {
  kSparsemax,  // ball constraint inactive, output = sparsemax(v)
  kRadial,     // output on the sphere ||q - u|| = r within the face `support`
  kVertex,     // output one-hot
};

struct SparsestmaxSolution {
  Vec q;
  ProjectionCase kind = ProjectionCase::kSparsemax;
  std::vector<std::size_t> support;        // final face (kRadial) or support of q
  std::vector<std::size_t> inner_support;  // support of the face sparsemax point (kRadial)
  Vec direction;                           // face sparsemax point minus face center (kRadial)
  double face_radius = 0.0;
};

/// argmin ||q - v||^2 over the simplex minus the open ball of radius r about
/// the center u = 1/K. Solved by sparsemax, radial expansion from u, then
/// repeated clipping of negative entries with re-projection onto the smaller
/// face. Requires 0 <= r <= circumradius(K).
SparsestmaxSolution sparsestmax_solve(std::span<const double> v, double r);
Vec sparsestmax(std::span<const double> v, double r);

/// Vector-Jacobian product of sparsestmax with the final support held fixed.
Vec sparsestmax_grad(std::span<const double> v, double r, std::span<const double> upstream);
Vec softmax_grad(std::span<const double> probs, std::span<const double> upstream);

enum class OrderingMode { kTelescoping, kHinge };

struct Penalty {
  double value = 0.0;
  Vec gradient;
};

/// lambda * sum_j (b_j - b_{j-1}) along one path, or its hinge variant
/// lambda * sum_j max(0, b_j - b_{j-1}).
Penalty ordering_penalty(std::span<const double> beta_path, double lambda,
                         OrderingMode mode = OrderingMode::kTelescoping);

struct GumbelSample {
  Vec soft;
  std::size_t hard = 0;
  Vec noise;
};

/// soft = softmax((logits + g) / tau) with g ~ Gumbel(0,1) i.i.d. from rng.
GumbelSample gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng);

// Graph-recording forms.

nd::Tensor softmax(nd::Graph& g, const nd::Tensor& logits);
nd::Tensor sparsestmax(nd::Graph& g, const nd::Tensor& logits, double r);
/// softmax((logits + noise) / tau), differentiable in logits.
nd::Tensor gumbel_softmax(nd::Graph& g, const nd::Tensor& logits, std::span<const double> noise, double tau);
/// Exactly 1.0 forward; passes the incoming gradient to soft[index]
/// (straight-through estimator for the hard sample).
nd::Tensor straight_through(nd::Graph& g, const nd::Tensor& soft, std::size_t index);

}  // namespace tnas::proj
