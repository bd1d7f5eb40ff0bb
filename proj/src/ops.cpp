#include "tnas/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "tnas/kernels.hpp"

namespace tnas::nd {

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

enum class Broadcast { kNone, kScalarB, kScalarA };

Broadcast broadcast_mode(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kScalarB;
  if (a.numel() == 1) return Broadcast::kScalarA;
  shape_error(op, "incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
}

// Gradient sink for a (possibly broadcast) operand: accumulates go*factor.
template <class F>
void accumulate(Tensor& target, bool broadcast, std::span<const double> go, F&& factor) {
  auto gt = target.ensure_grad();
  if (broadcast) {
    double s = 0.0;
    for (std::size_t i = 0; i < go.size(); ++i) s += go[i] * factor(i);
    gt[0] += s;
  } else {
    for (std::size_t i = 0; i < go.size(); ++i) gt[i] += go[i] * factor(i);
  }
}

template <class Fwd, class Bwd>
Tensor unary(Graph& g, const Tensor& a, Fwd fwd, Bwd dfdx) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = out.data();
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for simd if (n > 65536)
  for (std::int64_t i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = fwd(x[static_cast<std::size_t>(i)]);
  if (g.needs_grad({&a})) {
    g.record(out, [a = a, out = out, dfdx]() mutable {
      auto go = out.grad();
      auto gi = a.ensure_grad();
      auto xs = a.data();
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * dfdx(xs[i]);
    });
  }
  return out;
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding, int groups) {
  const std::string op = "conv2d";
  if (input.rank() != 4) shape_error(op, "input must be rank 4 [N,C,H,W], got " + to_string(input.shape()));
  if (kernel.rank() != 4) shape_error(op, "kernel must be rank 4 [Cout,Cin/groups,k,k], got " + to_string(kernel.shape()));
  const auto k = kernel.dim(2);
  if (kernel.dim(3) != k) shape_error(op, "kernel must be square, got " + to_string(kernel.shape()));
  if (k % 2 == 0) shape_error(op, "kernel size must be odd, got " + std::to_string(k));
  if (padding != (k - 1) / 2) {
    shape_error(op, "padding must be (k-1)/2 = " + std::to_string((k - 1) / 2) + ", got " + std::to_string(padding));
  }
  if (groups <= 0) shape_error(op, "groups must be positive");
  const auto cin = input.dim(1);
  if (cin % groups != 0) {
    shape_error(op, "input channels (dim 1) = " + std::to_string(cin) + " not divisible by groups = " +
                        std::to_string(groups));
  }
  if (kernel.dim(1) * groups != cin) {
    shape_error(op, "kernel dim 1 = " + std::to_string(kernel.dim(1)) + " but input channels / groups = " +
                        std::to_string(cin / groups));
  }
  const auto cout = kernel.dim(0);
  if (cout % groups != 0) {
    shape_error(op, "output channels (kernel dim 0) = " + std::to_string(cout) + " not divisible by groups");
  }
  if (bias.defined() && bias.numel() != cout) {
    shape_error(op, "bias length " + std::to_string(bias.numel()) + " does not match output channels " +
                        std::to_string(cout));
  }

  kernels::ConvGeometry geo{input.dim(0), cin, cout, input.dim(2), input.dim(3), k, groups};
  Tensor out(Shape{geo.batch, cout, geo.height, geo.width});
  kernels::conv2d_forward(geo, input.data(), kernel.data(), bias.defined() ? bias.data() : std::span<const double>{},
                          out.data());

  if (g.needs_grad({&input, &kernel, &bias})) {
    g.record(out, [geo, input = input, kernel = kernel, bias = bias, out = out]() mutable {
      auto go = out.grad();
      if (input.requires_grad()) kernels::conv2d_backward_input(geo, go, kernel.data(), input.ensure_grad());
      const bool wk = kernel.requires_grad();
      const bool wb = bias.defined() && bias.requires_grad();
      if (wk || wb) {
        kernels::conv2d_backward_params(geo, go, input.data(), wk ? kernel.ensure_grad() : std::span<double>{},
                                        wb ? bias.ensure_grad() : std::span<double>{});
      }
    });
  }
  return out;
}

Tensor pixel_shuffle(Graph& g, const Tensor& input, int factor) {
  if (input.rank() != 4) shape_error("pixel_shuffle", "input must be rank 4, got " + to_string(input.shape()));
  if (factor <= 0) shape_error("pixel_shuffle", "factor must be positive");
  const std::int64_t r2 = static_cast<std::int64_t>(factor) * factor;
  if (input.dim(1) % r2 != 0) {
    shape_error("pixel_shuffle", "channels (dim 1) = " + std::to_string(input.dim(1)) + " not divisible by " +
                                     std::to_string(r2));
  }
  const auto n = input.dim(0), c = input.dim(1) / r2, h = input.dim(2), w = input.dim(3);
  Tensor out(Shape{n, c, h * factor, w * factor});
  kernels::pixel_shuffle(n, c, h, w, factor, input.data(), out.data());
  if (g.needs_grad({&input})) {
    g.record(out, [input = input, out = out, n, c, h, w, factor]() mutable {
      std::vector<double> tmp(out.grad().size());
      kernels::pixel_unshuffle(n, c, h, w, factor, out.grad(), tmp);
      auto gi = input.ensure_grad();
      for (std::size_t i = 0; i < tmp.size(); ++i) gi[i] += tmp[i];
    });
  }
  return out;
}

Tensor space_to_depth(const Tensor& input, int factor) {
  if (input.rank() != 4) shape_error("space_to_depth", "input must be rank 4");
  if (factor <= 0 || input.dim(2) % factor != 0 || input.dim(3) % factor != 0) {
    shape_error("space_to_depth", "spatial extents " + to_string(input.shape()) + " not divisible by " +
                                      std::to_string(factor));
  }
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2) / factor, w = input.dim(3) / factor;
  Tensor out(Shape{n, c * factor * factor, h, w});
  kernels::pixel_unshuffle(n, c, h, w, factor, input.data(), out.data());
  return out;
}

namespace {

template <class Fwd, class GradA, class GradB>
Tensor binary(Graph& g, const std::string& name, const Tensor& a, const Tensor& b, Fwd fwd, GradA da, GradB db) {
  const auto mode = broadcast_mode(name, a, b);
  const Tensor& big = mode == Broadcast::kScalarA ? b : a;
  Tensor out(big.shape());
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  const std::size_t n = z.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double xa = mode == Broadcast::kScalarA ? x[0] : x[i];
    const double yb = mode == Broadcast::kScalarB ? y[0] : y[i];
    z[i] = fwd(xa, yb);
  }
  if (g.needs_grad({&a, &b})) {
    g.record(out, [a = a, b = b, out = out, mode, da, db]() mutable {
      auto go = out.grad();
      auto x = a.data();
      auto y = b.data();
      auto xa = [&](std::size_t i) { return mode == Broadcast::kScalarA ? x[0] : x[i]; };
      auto yb = [&](std::size_t i) { return mode == Broadcast::kScalarB ? y[0] : y[i]; };
      if (a.requires_grad()) {
        accumulate(a, mode == Broadcast::kScalarA, go, [&](std::size_t i) { return da(xa(i), yb(i)); });
      }
      if (b.requires_grad()) {
        accumulate(b, mode == Broadcast::kScalarB, go, [&](std::size_t i) { return db(xa(i), yb(i)); });
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  return binary(
      g, "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  return binary(
      g, "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  return binary(
      g, "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(Graph& g, const Tensor& a, double factor) {
  return unary(
      g, a, [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

Tensor add_scalar(Graph& g, const Tensor& a, double value) {
  return unary(
      g, a, [value](double x) { return x + value; }, [](double) { return 1.0; });
}

Tensor relu(Graph& g, const Tensor& a) {
  return unary(
      g, a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(Graph& g, const Tensor& a, double slope) {
  return unary(
      g, a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Tensor square(Graph& g, const Tensor& a) {
  return unary(
      g, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor abs(Graph& g, const Tensor& a) {
  return unary(
      g, a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(Graph& g, const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (g.needs_grad({&a})) {
    g.record(out, [a = a, out = out]() mutable {
      const double go = out.grad()[0];
      for (auto& gi : a.ensure_grad()) gi += go;
    });
  }
  return out;
}

Tensor mean(Graph& g, const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(s * inv);
  if (g.needs_grad({&a})) {
    g.record(out, [a = a, out = out, inv]() mutable {
      const double go = out.grad()[0] * inv;
      for (auto& gi : a.ensure_grad()) gi += go;
    });
  }
  return out;
}

namespace {

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

// Copies the leading `len` of `from_len` slots per outer index from src into dst
// laid out with `to_len` slots (one of from_len/to_len equals len).
void copy_blocks(std::span<const double> src, std::span<double> dst, const AxisSplit& sp, std::int64_t from_len,
                 std::int64_t to_len, std::int64_t len, bool accumulate_into) {
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    const double* s = src.data() + o * from_len * sp.inner;
    double* d = dst.data() + o * to_len * sp.inner;
    const std::int64_t count = len * sp.inner;
    if (accumulate_into) {
      for (std::int64_t i = 0; i < count; ++i) d[i] += s[i];
    } else {
      for (std::int64_t i = 0; i < count; ++i) d[i] = s[i];
    }
  }
}

}  // namespace

Tensor narrow(Graph& g, const Tensor& a, std::size_t axis, std::int64_t length) {
  if (axis >= a.rank()) shape_error("narrow", "axis " + std::to_string(axis) + " out of range");
  const auto full = a.dim(axis);
  if (length <= 0 || length > full) {
    shape_error("narrow", "length " + std::to_string(length) + " outside [1, " + std::to_string(full) +
                              "] on dim " + std::to_string(axis));
  }
  Shape s = a.shape();
  s[axis] = length;
  Tensor out(s);
  const auto sp = split_at(a.shape(), axis);
  copy_blocks(a.data(), out.data(), sp, full, length, length, false);
  if (g.needs_grad({&a})) {
    g.record(out, [a = a, out = out, sp, full, length]() mutable {
      copy_blocks(out.grad(), a.ensure_grad(), sp, length, full, length, true);
    });
  }
  return out;
}

Tensor pad_zeros(Graph& g, const Tensor& a, std::size_t axis, std::int64_t length) {
  if (axis >= a.rank()) shape_error("pad_zeros", "axis " + std::to_string(axis) + " out of range");
  const auto cur = a.dim(axis);
  if (length < cur) {
    shape_error("pad_zeros", "target length " + std::to_string(length) + " smaller than dim " +
                                 std::to_string(axis) + " = " + std::to_string(cur));
  }
  Shape s = a.shape();
  s[axis] = length;
  Tensor out(s);
  const auto sp = split_at(a.shape(), axis);
  copy_blocks(a.data(), out.data(), sp, cur, length, cur, false);
  if (g.needs_grad({&a})) {
    g.record(out, [a = a, out = out, sp, cur, length]() mutable {
      copy_blocks(out.grad(), a.ensure_grad(), sp, length, cur, cur, true);
    });
  }
  return out;
}

Tensor select(Graph& g, const Tensor& a, std::int64_t index) {
  if (index < 0 || index >= a.numel()) {
    shape_error("select", "index " + std::to_string(index) + " out of range for " + to_string(a.shape()));
  }
  Tensor out = Tensor::scalar(a[index]);
  if (g.needs_grad({&a})) {
    g.record(out, [a = a, out = out, index]() mutable {
      a.ensure_grad()[static_cast<std::size_t>(index)] += out.grad()[0];
    });
  }
  return out;
}

Tensor stack(Graph& g, const std::vector<Tensor>& scalars) {
  if (scalars.empty()) shape_error("stack", "needs at least one element");
  std::vector<double> values;
  values.reserve(scalars.size());
  for (const auto& s : scalars) {
    if (s.numel() != 1) shape_error("stack", "elements must have one entry, got " + to_string(s.shape()));
    values.push_back(s.item());
  }
  Tensor out = Tensor::vector(std::move(values));
  if (g.needs_grad(scalars)) {
    g.record(out, [scalars = scalars, out = out]() mutable {
      auto go = out.grad();
      for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].requires_grad()) scalars[i].ensure_grad()[0] += go[i];
      }
    });
  }
  return out;
}

Tensor dot(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    shape_error("dot", "lengths " + std::to_string(a.numel()) + " and " + std::to_string(b.numel()) + " differ");
  }
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  Tensor out = Tensor::scalar(s);
  if (g.needs_grad({&a, &b})) {
    g.record(out, [a = a, b = b, out = out]() mutable {
      const double go = out.grad()[0];
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        auto y = b.data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        auto x = a.data();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go * x[i];
      }
    });
  }
  return out;
}

Tensor grad_scale(Graph& g, const Tensor& a, double factor) {
  Tensor out = a.clone();
  if (g.needs_grad({&a})) {
    g.record(out, [a = a, out = out, factor]() mutable {
      auto go = out.grad();
      auto gi = a.ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += factor * go[i];
    });
  }
  return out;
}

Tensor constant_gradient(Graph& g, const Tensor& input, double value, std::vector<double> gradient) {
  if (static_cast<std::int64_t>(gradient.size()) != input.numel()) {
    shape_error("constant_gradient", "gradient length " + std::to_string(gradient.size()) +
                                         " does not match input length " + std::to_string(input.numel()));
  }
  Tensor out = Tensor::scalar(value);
  if (g.needs_grad({&input})) {
    g.record(out, [input = input, out = out, gradient = std::move(gradient)]() mutable {
      const double go = out.grad()[0];
      auto gi = input.ensure_grad();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go * gradient[i];
    });
  }
  return out;
}

}  // namespace tnas::nd
