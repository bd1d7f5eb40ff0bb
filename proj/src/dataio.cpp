#include "tnas/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tnas/rng.hpp"

namespace tnas::data {

namespace {

using Plane = std::vector<double>;

void normalize01(Plane& p) {
  const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
  const double a = *lo, span = *hi - *lo;
  for (auto& v : p) v = span > 0.0 ? (v - a) / span : 0.5;
}

Plane blur(const Plane& src, int h, int w, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  Plane tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * src[static_cast<std::size_t>(y * w + std::clamp(x + i, 0, w - 1))];
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1) * w + x)];
      out[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  return out;
}

Plane pattern(Rng& rng, int h, int w) {
  Plane p(static_cast<std::size_t>(h * w));
  const auto kind = rng.below(4);
  if (kind == 0) {  // smoothed Gaussian field
    for (auto& v : p) v = rng.normal();
    p = blur(p, h, w, rng.uniform(1.5, 4.0));
  } else if (kind == 1) {  // checkerboard
    const int period = 2 + static_cast<int>(rng.below(7));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(period)));
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(period)));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) p[static_cast<std::size_t>(y * w + x)] = static_cast<double>(((x + ox) / period + (y + oy) / period) % 2);
    }
  } else if (kind == 2) {  // linear gradient
    const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) p[static_cast<std::size_t>(y * w + x)] = std::cos(th) * x + std::sin(th) * y;
    }
  } else {  // superposed sinusoids
    for (int s = 0; s < 3; ++s) {
      const double f = rng.uniform(0.05, 0.5) * 2.0 * std::numbers::pi;
      const double th = rng.uniform(0.0, std::numbers::pi);
      const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double amp = rng.uniform(0.3, 1.0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          p[static_cast<std::size_t>(y * w + x)] += amp * std::sin(f * (std::cos(th) * x + std::sin(th) * y) + ph);
        }
      }
    }
  }
  normalize01(p);
  return p;
}

std::int64_t leading(const nd::Tensor& t, const char* op) {
  if (t.rank() == 3) return 1;
  if (t.rank() == 4) return t.dim(0);
  throw std::invalid_argument(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + nd::to_string(t.shape()));
}

// Catmull-Rom weights for fractional offset t in [0, 1) over taps -1..2.
std::array<double, 4> cubic_weights(double t) {
  constexpr double a = -0.5;
  auto near = [](double x) { return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0; };
  auto far = [](double x) { return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a; };
  return {far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)};
}

}  // namespace

std::vector<nd::Tensor> gen_synthetic(std::uint64_t seed, int count, int h, int w) {
  if (h < 16 || w < 16) throw std::invalid_argument("gen_synthetic: images must be at least 16x16");
  if (count < 0) throw std::invalid_argument("gen_synthetic: negative count");
  std::vector<nd::Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Plane a = pattern(rng, h, w);
    const Plane b = pattern(rng, h, w);
    const double mix = rng.uniform(0.3, 0.7);
    nd::Tensor img(nd::Shape{3, h, w});
    for (int c = 0; c < 3; ++c) {
      const double lo_a = rng.uniform(), hi_a = rng.uniform();
      const double lo_b = rng.uniform(), hi_b = rng.uniform();
      Plane ch(a.size());
      for (std::size_t j = 0; j < a.size(); ++j) {
        ch[j] = mix * (lo_a + (hi_a - lo_a) * a[j]) + (1.0 - mix) * (lo_b + (hi_b - lo_b) * b[j]);
      }
      // Stretch slightly past [0, 1] so both ends saturate.
      normalize01(ch);
      auto dst = img.data().subspan(static_cast<std::size_t>(c) * a.size(), a.size());
      for (std::size_t j = 0; j < a.size(); ++j) dst[j] = std::clamp(ch[j] * 1.1 - 0.05, 0.0, 1.0);
    }
    out.push_back(std::move(img));
  }
  return out;
}

nd::Tensor downsample(const nd::Tensor& hr, int n) {
  const auto batch = leading(hr, "downsample");
  const std::size_t r = hr.rank();
  const auto c = hr.dim(r - 3), H = hr.dim(r - 2), W = hr.dim(r - 1);
  if (n <= 0 || H % n != 0 || W % n != 0) {
    throw std::invalid_argument("downsample: extents " + std::to_string(H) + "x" + std::to_string(W) +
                                " not divisible by " + std::to_string(n));
  }
  nd::Shape s = hr.shape();
  s[r - 2] = H / n;
  s[r - 1] = W / n;
  nd::Tensor out(s);
  const double inv = 1.0 / static_cast<double>(n * n);
  const auto h = H / n, w = W / n;
  auto src = hr.data();
  auto dst = out.data();
  for (std::int64_t p = 0; p < batch * c; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) acc += src[static_cast<std::size_t>((p * H + y * n + i) * W + x * n + j)];
        }
        dst[static_cast<std::size_t>((p * h + y) * w + x)] = acc * inv;
      }
    }
  }
  return out;
}

nd::Tensor bicubic_upsample(const nd::Tensor& img, int n) {
  const auto batch = leading(img, "bicubic_upsample");
  if (n <= 0) throw std::invalid_argument("bicubic_upsample: factor must be positive");
  const std::size_t r = img.rank();
  const auto c = img.dim(r - 3), h = img.dim(r - 2), w = img.dim(r - 1);
  const auto H = h * n, W = w * n;
  // Output pixel o samples source coordinate (o + 0.5) / n - 0.5.
  auto taps = [n](std::int64_t len, std::int64_t out_len) {
    std::vector<std::array<std::int64_t, 4>> idx(static_cast<std::size_t>(out_len));
    std::vector<std::array<double, 4>> wt(static_cast<std::size_t>(out_len));
    for (std::int64_t o = 0; o < out_len; ++o) {
      const double src = (static_cast<double>(o) + 0.5) / n - 0.5;
      const double f = std::floor(src);
      wt[static_cast<std::size_t>(o)] = cubic_weights(src - f);
      for (int k = 0; k < 4; ++k) {
        idx[static_cast<std::size_t>(o)][static_cast<std::size_t>(k)] =
            std::clamp<std::int64_t>(static_cast<std::int64_t>(f) - 1 + k, 0, len - 1);
      }
    }
    return std::make_pair(idx, wt);
  };
  const auto [yi, yw] = taps(h, H);
  const auto [xi, xw] = taps(w, W);
  nd::Shape s = img.shape();
  s[r - 2] = H;
  s[r - 1] = W;
  nd::Tensor out(s);
  auto src = img.data();
  auto dst = out.data();
  std::vector<double> rows(static_cast<std::size_t>(h * W));
  for (std::int64_t p = 0; p < batch * c; ++p) {
    const double* plane = src.data() + p * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += xw[static_cast<std::size_t>(x)][static_cast<std::size_t>(k)] * plane[y * w + xi[static_cast<std::size_t>(x)][static_cast<std::size_t>(k)]];
        rows[static_cast<std::size_t>(y * W + x)] = acc;
      }
    }
    double* o = dst.data() + p * H * W;
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += yw[static_cast<std::size_t>(y)][static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(yi[static_cast<std::size_t>(y)][static_cast<std::size_t>(k)] * W + x)];
        o[y * W + x] = acc;
      }
    }
  }
  return out;
}

double psnr_from_mse(double mse, double peak) {
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const nd::Tensor& a, const nd::Tensor& b, double peak) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("psnr: shapes " + nd::to_string(a.shape()) + " and " + nd::to_string(b.shape()) +
                                " differ");
  }
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return psnr_from_mse(s / static_cast<double>(x.size()), peak);
}

std::pair<std::vector<int>, std::vector<int>> split(int count, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (int i = count - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const auto first = static_cast<std::size_t>((count + 1) / 2);
  std::vector<int> a(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(first));
  std::vector<int> b(idx.begin() + static_cast<std::ptrdiff_t>(first), idx.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

namespace {

std::string encode_plane(std::span<const double> plane, std::int64_t h, std::int64_t w, const std::string& comment) {
  std::string out = "P5\n" + comment + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : plane) out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  return out;
}

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;

  bool at_end() const { return pos >= s.size(); }
  // Skips whitespace and comments; returns the comments seen.
  std::string skip_space() {
    std::string comments;
    while (!at_end()) {
      const char c = s[pos];
      if (c == '#') {
        const auto e = s.find('\n', pos);
        comments += s.substr(pos, e == std::string::npos ? std::string::npos : e - pos) + "\n";
        pos = e == std::string::npos ? s.size() : e + 1;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
    return comments;
  }
  long number(const char* what) {
    skip_space();
    const auto start = pos;
    long v = 0;
    while (!at_end() && s[pos] >= '0' && s[pos] <= '9') {
      v = v * 10 + (s[pos] - '0');
      if (v > 1'000'000) throw PgmError(std::string("pgm: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw PgmError(std::string("pgm: expected ") + what, start);
    return v;
  }
};

struct PlaneHeader {
  long w = 0, h = 0;
  int planes = 1;
};

PlaneHeader read_header(Cursor& cur) {
  const auto start = cur.pos;
  if (cur.s.size() < start + 2 || cur.s[start] != 'P') throw PgmError("pgm: missing magic number", start);
  if (cur.s[start + 1] != '5') {
    throw PgmError(std::string("pgm: unsupported format P") + cur.s[start + 1] + " (only binary P5)", start);
  }
  cur.pos += 2;
  PlaneHeader hd;
  const auto comments = cur.skip_space();
  if (comments.find("# planes 3") != std::string::npos) hd.planes = 3;
  hd.w = cur.number("width");
  hd.h = cur.number("height");
  const auto mv_pos = cur.pos;
  const long maxval = cur.number("maxval");
  if (maxval != 255) throw PgmError("pgm: maxval must be 255, got " + std::to_string(maxval), mv_pos);
  if (hd.w <= 0 || hd.h <= 0) throw PgmError("pgm: zero image extent", start);
  if (cur.at_end()) throw PgmError("pgm: missing whitespace after maxval", cur.pos);
  ++cur.pos;  // single whitespace byte before the raster
  return hd;
}

}  // namespace

std::string encode_pgm(const nd::Tensor& image) {
  std::int64_t c = 1, h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    c = image.dim(0);
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw std::invalid_argument("encode_pgm: expected [H,W], [1,H,W] or [3,H,W], got " + nd::to_string(image.shape()));
  }
  std::string out;
  const auto plane = static_cast<std::size_t>(h * w);
  for (std::int64_t p = 0; p < c; ++p) {
    out += encode_plane(image.data().subspan(static_cast<std::size_t>(p) * plane, plane), h, w,
                        c == 3 && p == 0 ? "# planes 3\n" : "");
  }
  return out;
}

nd::Tensor decode_pgm(const std::string& bytes) {
  Cursor cur{bytes};
  const auto first = read_header(cur);
  const auto plane = static_cast<std::size_t>(first.w * first.h);
  nd::Tensor out(nd::Shape{first.planes, first.h, first.w});
  for (int p = 0; p < first.planes; ++p) {
    if (p > 0) {
      const auto at = cur.pos;
      const auto hd = read_header(cur);
      if (hd.w != first.w || hd.h != first.h) throw PgmError("pgm: plane extents differ from the first plane", at);
    }
    if (bytes.size() - cur.pos < plane) {
      throw PgmError("pgm: truncated raster, need " + std::to_string(plane) + " bytes, have " +
                         std::to_string(bytes.size() - cur.pos) + " from byte " + std::to_string(cur.pos),
                     bytes.size());
    }
    auto dst = out.data().subspan(static_cast<std::size_t>(p) * plane, plane);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<unsigned char>(bytes[cur.pos + i]) / 255.0;
    cur.pos += plane;
  }
  return out;
}

void write_pgm(const std::string& path, const nd::Tensor& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  const auto bytes = encode_pgm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

nd::Tensor read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_pgm(ss.str());
}

std::string manifest_text(const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  os << "id seed height width file\n";
  for (const auto& e : entries) os << e.id << ' ' << e.seed << ' ' << e.height << ' ' << e.width << ' ' << e.file << '\n';
  return os.str();
}

}  // namespace tnas::data
