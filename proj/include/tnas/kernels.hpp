#pragma once

// Raw NCHW kernels behind the differentiable ops.
//
// The default kernels are OpenMP-parallel. Work is partitioned so that every
// output element is produced by exactly one thread with a fixed summation
// order, which makes results independent of the thread count. The serial
// `reference` namespace holds the textbook loop nests the parallel kernels are
// tested and benchmarked against.

#include <cstdint>
#include <span>

namespace tnas::nd::kernels {

/// Same-size ("half" padded) 2-D cross-correlation geometry.
struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t kernel = 1;  // odd
  std::int64_t groups = 1;

  std::int64_t pad() const { return (kernel - 1) / 2; }
  std::int64_t in_per_group() const { return in_channels / groups; }
  std::int64_t out_per_group() const { return out_channels / groups; }
  std::int64_t input_size() const { return batch * in_channels * height * width; }
  std::int64_t output_size() const { return batch * out_channels * height * width; }
  std::int64_t weight_size() const { return out_channels * in_per_group() * kernel * kernel; }
};

/// out = conv(in, weight) + bias. `bias` may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);

/// grad_in += conv_transpose(grad_out, weight).
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in);

/// grad_weight += corr(in, grad_out); grad_bias += sum(grad_out). Either output may be empty.
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight,
                            std::span<double> grad_bias);

/// Depth-to-space: [N, C*r*r, H, W] -> [N, C, H*r, W*r].
void pixel_shuffle(std::int64_t batch, std::int64_t out_channels, std::int64_t height, std::int64_t width,
                   std::int64_t factor, std::span<const double> in, std::span<double> out);

/// Space-to-depth, the exact inverse of pixel_shuffle: [N, C, H*r, W*r] -> [N, C*r*r, H, W].
void pixel_unshuffle(std::int64_t batch, std::int64_t out_channels, std::int64_t height, std::int64_t width,
                     std::int64_t factor, std::span<const double> in, std::span<double> out);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in);
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> grad_out,
                            std::span<const double> in, std::span<double> grad_weight,
                            std::span<double> grad_bias);

}  // namespace reference

}  // namespace tnas::nd::kernels
