#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tnas::nd {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what lets
/// the tape accumulate gradients into parameters owned elsewhere. Use clone()
/// for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(std::size_t axis) const;
  std::int64_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double& operator[](std::int64_t i) { return data()[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data()[static_cast<std::size_t>(i)]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates a zero gradient buffer on first use.
  std::span<double> ensure_grad();
  void zero_grad();
  void drop_grad();

  /// Index of the producing node in the active tape, or -1 for leaves.
  int node_id() const;
  void set_node_id(int id);

  Tensor clone() const;
  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  Impl& impl();
  const Impl& impl() const;
};

bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Little-endian: u32 rank, rank x i64 extents, numel x f64 values.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace tnas::nd
