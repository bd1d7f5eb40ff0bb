#pragma once

// Synthetic images, LR synthesis, PSNR, the two-way split and PGM file I/O.
// Images are [C, H, W] tensors with values in [0, 1].

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tnas/tensor.hpp"

namespace tnas::data {

/// `count` HR images [3, h, w], image i a pure function of (seed, i): smooth
/// Gaussian fields, checkerboards, linear gradients or sinusoid sums, blended
/// and clamped to [0, 1]. Requires h, w >= 16.
std::vector<nd::Tensor> gen_synthetic(std::uint64_t seed, int count, int h, int w);

/// n x n box mean; extents must be divisible by n. Accepts [C,H,W] or [N,C,H,W].
nd::Tensor downsample(const nd::Tensor& hr, int n);

/// Catmull-Rom (a = -0.5) bicubic upsampling by n with half-pixel centers
/// and clamp-to-edge borders. Accepts [C,H,W] or [N,C,H,W].
nd::Tensor bicubic_upsample(const nd::Tensor& img, int n);

/// 10 log10(peak^2 / MSE), 100 dB when MSE < 1e-10.
double psnr(const nd::Tensor& a, const nd::Tensor& b, double peak = 1.0);
double psnr_from_mse(double mse, double peak = 1.0);

/// Seeded disjoint halves of {0..count-1}; with odd count the first half gets
/// the extra item. Each half is in ascending order.
std::pair<std::vector<int>, std::vector<int>> split(int count, std::uint64_t seed);

class PgmError : public std::runtime_error {
 public:
  PgmError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Binary P5, maxval 255. A 3-channel image is written as three P5 images
/// back to back; the first carries the comment "# planes 3".
std::string encode_pgm(const nd::Tensor& image);
nd::Tensor decode_pgm(const std::string& bytes);
void write_pgm(const std::string& path, const nd::Tensor& image);
nd::Tensor read_pgm(const std::string& path);

/// Value after an 8-bit round trip: round(clamp(v, 0, 1) * 255) / 255.
double quantize8(double v);

struct ManifestEntry {
  int id = 0;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
  std::string file;
};

std::string manifest_text(const std::vector<ManifestEntry>& entries);

}  // namespace tnas::data
