#include "tnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tnas/binio.hpp"

namespace tnas::nd {

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  int node_id = -1;
};

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw std::invalid_argument("tensor extent " + std::to_string(i) + " must be positive, got " +
                                  std::to_string(shape[i]));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  check_extents(shape);
  impl_->data.assign(static_cast<std::size_t>(nd::numel(shape)), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  check_extents(shape);
  if (static_cast<std::int64_t>(values.size()) != nd::numel(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, value); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  return Tensor(Shape{n}, std::move(values));
}

Tensor::Impl& Tensor::impl() {
  if (!impl_) throw std::logic_error("access to an undefined tensor");
  return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("access to an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl().data.size()); }

std::span<double> Tensor::data() { return impl().data; }
std::span<const double> Tensor::data() const { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
  }
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<double> Tensor::grad() { return impl().grad; }
std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::ensure_grad() {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
  return im.grad;
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::drop_grad() {
  impl().grad.clear();
  impl().grad.shrink_to_fit();
}

int Tensor::node_id() const { return impl().node_id; }
void Tensor::set_node_id(int id) { impl().node_id = id; }

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(da[i]) != std::bit_cast<std::uint64_t>(db[i])) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("max_abs_diff: shapes " + to_string(a.shape()) + " and " +
                                to_string(b.shape()) + " differ");
  }
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  binio::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) binio::put_i64(os, e);
  for (double v : t.data()) binio::put_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  const auto rank = binio::get_u32(is);
  if (rank == 0 || rank > 8) {
    throw std::runtime_error("tensor record has invalid rank " + std::to_string(rank));
  }
  Shape shape(rank);
  for (auto& e : shape) {
    e = binio::get_i64(is);
    if (e <= 0 || e > (std::int64_t{1} << 32)) {
      throw std::runtime_error("tensor record has invalid extent " + std::to_string(e));
    }
  }
  std::vector<double> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = binio::get_f64(is);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace tnas::nd
