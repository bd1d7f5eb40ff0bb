#include "tnas/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace tnas::nd::kernels {

namespace {

void check_sizes(const ConvGeometry& g, std::size_t in, std::size_t weight, std::size_t out) {
  if (g.kernel % 2 == 0 || g.groups <= 0 || g.in_channels % g.groups != 0 || g.out_channels % g.groups != 0) {
    throw std::invalid_argument("invalid convolution geometry");
  }
  if (in != static_cast<std::size_t>(g.input_size()) || weight != static_cast<std::size_t>(g.weight_size()) ||
      out != static_cast<std::size_t>(g.output_size())) {
    throw std::invalid_argument("convolution buffer sizes do not match geometry");
  }
}

// Valid output range [lo, hi) along an axis of length n for tap offset d.
inline std::int64_t lo_bound(std::int64_t d) { return std::max<std::int64_t>(0, -d); }
inline std::int64_t hi_bound(std::int64_t n, std::int64_t d) { return std::min<std::int64_t>(n, n - d); }

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  check_sizes(g, in.size(), weight.size(), out.size());
  const std::int64_t H = g.height, W = g.width, K = g.kernel, P = g.pad();
  const std::int64_t plane = H * W;
  const std::int64_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  const double* src_base = in.data();
  const double* w_base = weight.data();
  double* dst_base = out.data();
  const bool has_bias = !bias.empty();

#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      double* dst = dst_base + (n * g.out_channels + co) * plane;
      const double b = has_bias ? bias[static_cast<std::size_t>(co)] : 0.0;
      std::fill(dst, dst + plane, b);
      const std::int64_t group = co / cout_g;
      for (std::int64_t cl = 0; cl < cin_g; ++cl) {
        const double* src = src_base + (n * g.in_channels + group * cin_g + cl) * plane;
        const double* wk = w_base + (co * cin_g + cl) * K * K;
        for (std::int64_t ky = 0; ky < K; ++ky) {
          const std::int64_t dy = ky - P;
          const std::int64_t y0 = lo_bound(dy), y1 = hi_bound(H, dy);
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const std::int64_t dx = kx - P;
            const std::int64_t x0 = lo_bound(dx), x1 = hi_bound(W, dx);
            const double wv = wk[ky * K + kx];
            for (std::int64_t y = y0; y < y1; ++y) {
              double* drow = dst + y * W;
              const double* srow = src + (y + dy) * W + dx;
#pragma omp simd
              for (std::int64_t x = x0; x < x1; ++x) drow[x] += wv * srow[x];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  check_sizes(g, grad_in.size(), weight.size(), grad_out.size());
  const std::int64_t H = g.height, W = g.width, K = g.kernel, P = g.pad();
  const std::int64_t plane = H * W;
  const std::int64_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  const double* go_base = grad_out.data();
  const double* w_base = weight.data();
  double* gi_base = grad_in.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
      double* gi = gi_base + (n * g.in_channels + ci) * plane;
      const std::int64_t group = ci / cin_g;
      const std::int64_t cl = ci - group * cin_g;
      for (std::int64_t ol = 0; ol < cout_g; ++ol) {
        const std::int64_t co = group * cout_g + ol;
        const double* go = go_base + (n * g.out_channels + co) * plane;
        const double* wk = w_base + (co * cin_g + cl) * K * K;
        for (std::int64_t ky = 0; ky < K; ++ky) {
          const std::int64_t dy = ky - P;
          const std::int64_t y0 = lo_bound(dy), y1 = hi_bound(H, dy);
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const std::int64_t dx = kx - P;
            const std::int64_t x0 = lo_bound(dx), x1 = hi_bound(W, dx);
            const double wv = wk[ky * K + kx];
            for (std::int64_t y = y0; y < y1; ++y) {
              double* girow = gi + (y + dy) * W + dx;
              const double* gorow = go + y * W;
#pragma omp simd
              for (std::int64_t x = x0; x < x1; ++x) girow[x] += wv * gorow[x];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  if (!grad_weight.empty()) {
    check_sizes(g, in.size(), grad_weight.size(), grad_out.size());
  }
  if (!grad_bias.empty() && grad_bias.size() != static_cast<std::size_t>(g.out_channels)) {
    throw std::invalid_argument("bias gradient size does not match output channels");
  }
  const std::int64_t H = g.height, W = g.width, K = g.kernel, P = g.pad();
  const std::int64_t plane = H * W;
  const std::int64_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  const double* go_base = grad_out.data();
  const double* src_base = in.data();
  const bool want_w = !grad_weight.empty();
  const bool want_b = !grad_bias.empty();

#pragma omp parallel for schedule(static)
  for (std::int64_t co = 0; co < g.out_channels; ++co) {
    if (want_b) {
      double s = 0.0;
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const double* go = go_base + (n * g.out_channels + co) * plane;
#pragma omp simd reduction(+ : s)
        for (std::int64_t i = 0; i < plane; ++i) s += go[i];
      }
      grad_bias[static_cast<std::size_t>(co)] += s;
    }
    if (!want_w) continue;
    const std::int64_t group = co / cout_g;
    // Per-tap lane accumulators along x; the horizontal sum happens once per tap.
    std::vector<double> lanes(static_cast<std::size_t>(K * K * W));
    for (std::int64_t cl = 0; cl < cin_g; ++cl) {
      const std::int64_t ci = group * cin_g + cl;
      std::fill(lanes.begin(), lanes.end(), 0.0);
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const double* go = go_base + (n * g.out_channels + co) * plane;
        const double* src = src_base + (n * g.in_channels + ci) * plane;
        for (std::int64_t ky = 0; ky < K; ++ky) {
          const std::int64_t dy = ky - P;
          const std::int64_t y0 = lo_bound(dy), y1 = hi_bound(H, dy);
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const std::int64_t dx = kx - P;
            const std::int64_t x0 = lo_bound(dx), x1 = hi_bound(W, dx);
            double* lane = lanes.data() + (ky * K + kx) * W;
            for (std::int64_t y = y0; y < y1; ++y) {
              const double* gorow = go + y * W;
              const double* srow = src + (y + dy) * W + dx;
#pragma omp simd
              for (std::int64_t x = x0; x < x1; ++x) lane[x] += gorow[x] * srow[x];
            }
          }
        }
      }
      for (std::int64_t t = 0; t < K * K; ++t) {
        const double* lane = lanes.data() + t * W;
        double acc = 0.0;
        for (std::int64_t x = 0; x < W; ++x) acc += lane[x];
        grad_weight[static_cast<std::size_t>((co * cin_g + cl) * K * K + t)] += acc;
      }
    }
  }
}

void pixel_shuffle(std::int64_t batch, std::int64_t out_channels, std::int64_t height, std::int64_t width,
                   std::int64_t factor, std::span<const double> in, std::span<double> out) {
  const std::int64_t r = factor;
  const std::int64_t total = batch * out_channels * height * width * r * r;
  if (static_cast<std::int64_t>(in.size()) != total || static_cast<std::int64_t>(out.size()) != total) {
    throw std::invalid_argument("pixel_shuffle buffer sizes do not match geometry");
  }
  const std::int64_t oh = height * r, ow = width * r;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < out_channels; ++c) {
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < r; ++j) {
          const std::int64_t ic = c * r * r + i * r + j;
          const double* src = in.data() + (n * out_channels * r * r + ic) * height * width;
          double* dst = out.data() + (n * out_channels + c) * oh * ow;
          for (std::int64_t y = 0; y < height; ++y) {
            for (std::int64_t x = 0; x < width; ++x) dst[(y * r + i) * ow + x * r + j] = src[y * width + x];
          }
        }
      }
    }
  }
}

void pixel_unshuffle(std::int64_t batch, std::int64_t out_channels, std::int64_t height, std::int64_t width,
                     std::int64_t factor, std::span<const double> in, std::span<double> out) {
  const std::int64_t r = factor;
  const std::int64_t total = batch * out_channels * height * width * r * r;
  if (static_cast<std::int64_t>(in.size()) != total || static_cast<std::int64_t>(out.size()) != total) {
    throw std::invalid_argument("pixel_unshuffle buffer sizes do not match geometry");
  }
  const std::int64_t ih = height * r, iw = width * r;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < out_channels; ++c) {
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < r; ++j) {
          const std::int64_t oc = c * r * r + i * r + j;
          const double* src = in.data() + (n * out_channels + c) * ih * iw;
          double* dst = out.data() + (n * out_channels * r * r + oc) * height * width;
          for (std::int64_t y = 0; y < height; ++y) {
            for (std::int64_t x = 0; x < width; ++x) dst[y * width + x] = src[(y * r + i) * iw + x * r + j];
          }
        }
      }
    }
  }
}

namespace reference {

namespace {

inline std::size_t at4(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d, std::int64_t B,
                       std::int64_t C, std::int64_t D) {
  return static_cast<std::size_t>(((a * B + b) * C + c) * D + d);
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  check_sizes(g, in.size(), weight.size(), out.size());
  const std::int64_t H = g.height, W = g.width, K = g.kernel, P = g.pad();
  const std::int64_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      const std::int64_t group = co / cout_g;
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          double s = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(co)];
          for (std::int64_t cl = 0; cl < cin_g; ++cl) {
            const std::int64_t ci = group * cin_g + cl;
            for (std::int64_t ky = 0; ky < K; ++ky) {
              for (std::int64_t kx = 0; kx < K; ++kx) {
                const std::int64_t iy = y + ky - P, ix = x + kx - P;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += weight[at4(co, cl, ky, kx, cin_g, K, K)] * in[at4(n, ci, iy, ix, g.in_channels, H, W)];
              }
            }
          }
          out[at4(n, co, y, x, g.out_channels, H, W)] = s;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  check_sizes(g, grad_in.size(), weight.size(), grad_out.size());
  const std::int64_t H = g.height, W = g.width, K = g.kernel, P = g.pad();
  const std::int64_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      const std::int64_t group = co / cout_g;
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          const double go = grad_out[at4(n, co, y, x, g.out_channels, H, W)];
          for (std::int64_t cl = 0; cl < cin_g; ++cl) {
            const std::int64_t ci = group * cin_g + cl;
            for (std::int64_t ky = 0; ky < K; ++ky) {
              for (std::int64_t kx = 0; kx < K; ++kx) {
                const std::int64_t iy = y + ky - P, ix = x + kx - P;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                grad_in[at4(n, ci, iy, ix, g.in_channels, H, W)] += weight[at4(co, cl, ky, kx, cin_g, K, K)] * go;
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::int64_t H = g.height, W = g.width, K = g.kernel, P = g.pad();
  const std::int64_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      const std::int64_t group = co / cout_g;
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          const double go = grad_out[at4(n, co, y, x, g.out_channels, H, W)];
          if (!grad_bias.empty()) grad_bias[static_cast<std::size_t>(co)] += go;
          if (grad_weight.empty()) continue;
          for (std::int64_t cl = 0; cl < cin_g; ++cl) {
            const std::int64_t ci = group * cin_g + cl;
            for (std::int64_t ky = 0; ky < K; ++ky) {
              for (std::int64_t kx = 0; kx < K; ++kx) {
                const std::int64_t iy = y + ky - P, ix = x + kx - P;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                grad_weight[at4(co, cl, ky, kx, cin_g, K, K)] += go * in[at4(n, ci, iy, ix, g.in_channels, H, W)];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace reference

}  // namespace tnas::nd::kernels
