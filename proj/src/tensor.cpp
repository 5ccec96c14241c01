#include "parc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace parc {

std::size_t dtype_size(Dtype dt) {
  switch (dt) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::U32: return 4;
  }
  throw ArgumentError("unknown dtype");
}

const char* dtype_name(Dtype dt) {
  switch (dt) {
    case Dtype::F32: return "f32";
    case Dtype::F64: return "f64";
    case Dtype::U32: return "u32";
  }
  return "?";
}

namespace {

std::size_t checked_product(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] == 0) {
      throw ArgumentError("tensor dim " + std::to_string(i) + " must be positive");
    }
    if (dims[i] > std::numeric_limits<std::size_t>::max() / n) {
      throw ArgumentError("tensor size overflow");
    }
    n *= dims[i];
  }
  return n;
}

template <typename T>
std::shared_ptr<void> make_storage(std::size_t n) {
  return std::make_shared<std::vector<T>>(n);
}

}  // namespace

template <typename T>
std::vector<T>& Tensor::vec() {
  return *static_cast<std::vector<T>*>(storage_.get());
}
template <typename T>
const std::vector<T>& Tensor::vec() const {
  return *static_cast<const std::vector<T>*>(storage_.get());
}

Tensor Tensor::empty(Dtype dt, std::vector<std::size_t> dims) {
  Tensor t;
  t.size_ = checked_product(dims);
  t.dims_ = std::move(dims);
  t.dtype_ = dt;
  switch (dt) {
    case Dtype::F32: t.storage_ = make_storage<float>(t.size_); break;
    case Dtype::F64: t.storage_ = make_storage<double>(t.size_); break;
    case Dtype::U32: t.storage_ = make_storage<std::uint32_t>(t.size_); break;
  }
  return t;
}

Tensor Tensor::zeros(Dtype dt, std::vector<std::size_t> dims) {
  return empty(dt, std::move(dims));  // vector storage is value-initialized
}

Tensor Tensor::full(Dtype dt, std::vector<std::size_t> dims, double value) {
  Tensor t = empty(dt, std::move(dims));
  switch (dt) {
    case Dtype::F32: std::fill(t.vec<float>().begin(), t.vec<float>().end(), static_cast<float>(value)); break;
    case Dtype::F64: std::fill(t.vec<double>().begin(), t.vec<double>().end(), value); break;
    case Dtype::U32: std::fill(t.vec<std::uint32_t>().begin(), t.vec<std::uint32_t>().end(), static_cast<std::uint32_t>(value)); break;
  }
  return t;
}

Tensor Tensor::from_f32(std::vector<std::size_t> dims, std::vector<float> data) {
  std::size_t n = checked_product(dims);
  if (n != data.size()) {
    throw ShapeError("from_f32: dims imply " + std::to_string(n) + " elements, got " +
                     std::to_string(data.size()));
  }
  Tensor t;
  t.dims_ = std::move(dims);
  t.size_ = n;
  t.dtype_ = Dtype::F32;
  t.storage_ = std::make_shared<std::vector<float>>(std::move(data));
  return t;
}

Tensor Tensor::from_f64(std::vector<std::size_t> dims, std::vector<double> data) {
  std::size_t n = checked_product(dims);
  if (n != data.size()) {
    throw ShapeError("from_f64: dims imply " + std::to_string(n) + " elements, got " +
                     std::to_string(data.size()));
  }
  Tensor t;
  t.dims_ = std::move(dims);
  t.size_ = n;
  t.dtype_ = Dtype::F64;
  t.storage_ = std::make_shared<std::vector<double>>(std::move(data));
  return t;
}

Tensor Tensor::from_u32(std::vector<std::size_t> dims, std::vector<std::uint32_t> data) {
  std::size_t n = checked_product(dims);
  if (n != data.size()) {
    throw ShapeError("from_u32: dims imply " + std::to_string(n) + " elements, got " +
                     std::to_string(data.size()));
  }
  Tensor t;
  t.dims_ = std::move(dims);
  t.size_ = n;
  t.dtype_ = Dtype::U32;
  t.storage_ = std::make_shared<std::vector<std::uint32_t>>(std::move(data));
  return t;
}

Tensor Tensor::scalar(Dtype dt, double value) { return full(dt, {1}, value); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= dims_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(dims_.size()));
  }
  return dims_[axis];
}

std::span<const float> Tensor::f32() const {
  if (dtype_ != Dtype::F32) throw ContractError("tensor is not f32");
  return {vec<float>().data(), size_};
}
std::span<const double> Tensor::f64() const {
  if (dtype_ != Dtype::F64) throw ContractError("tensor is not f64");
  return {vec<double>().data(), size_};
}
std::span<const std::uint32_t> Tensor::u32() const {
  if (dtype_ != Dtype::U32) throw ContractError("tensor is not u32");
  return {vec<std::uint32_t>().data(), size_};
}

namespace {
template <typename T>
std::span<T> mut_span(std::shared_ptr<void>& storage, std::size_t n) {
  auto* v = static_cast<std::vector<T>*>(storage.get());
  if (storage.use_count() > 1) {
    storage = std::make_shared<std::vector<T>>(*v);
    v = static_cast<std::vector<T>*>(storage.get());
  }
  return {v->data(), n};
}
}  // namespace

std::span<float> Tensor::f32_mut() {
  if (dtype_ != Dtype::F32) throw ContractError("tensor is not f32");
  return mut_span<float>(storage_, size_);
}
std::span<double> Tensor::f64_mut() {
  if (dtype_ != Dtype::F64) throw ContractError("tensor is not f64");
  return mut_span<double>(storage_, size_);
}
std::span<std::uint32_t> Tensor::u32_mut() {
  if (dtype_ != Dtype::U32) throw ContractError("tensor is not u32");
  return mut_span<std::uint32_t>(storage_, size_);
}

double Tensor::item() const {
  if (size_ != 1) throw ContractError("item() on tensor of size " + std::to_string(size_));
  return at(0);
}

double Tensor::at(std::size_t flat) const {
  if (flat >= size_) throw ArgumentError("flat index out of range");
  switch (dtype_) {
    case Dtype::F32: return static_cast<double>(vec<float>()[flat]);
    case Dtype::F64: return vec<double>()[flat];
    case Dtype::U32: return static_cast<double>(vec<std::uint32_t>()[flat]);
  }
  return 0.0;
}

Tensor Tensor::astype(Dtype dt) const {
  if (dt == dtype_) return *this;
  Tensor out = Tensor::empty(dt, dims_);
  for (std::size_t i = 0; i < size_; ++i) {
    double v = at(i);
    switch (dt) {
      case Dtype::F32: out.vec<float>()[i] = static_cast<float>(v); break;
      case Dtype::F64: out.vec<double>()[i] = v; break;
      case Dtype::U32: out.vec<std::uint32_t>()[i] = static_cast<std::uint32_t>(v); break;
    }
  }
  return out;
}

Tensor Tensor::reshaped(std::vector<std::size_t> dims) const {
  std::size_t n = checked_product(dims);
  if (n != size_) {
    throw ShapeError("reshape to " + std::to_string(n) + " elements from " + std::to_string(size_));
  }
  Tensor t = *this;
  t.dims_ = std::move(dims);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype() || a.dims() != b.dims()) return false;
  std::size_t bytes = a.size() * dtype_size(a.dtype());
  const void* pa = nullptr;
  const void* pb = nullptr;
  switch (a.dtype()) {
    case Dtype::F32: pa = a.f32().data(); pb = b.f32().data(); break;
    case Dtype::F64: pa = a.f64().data(); pb = b.f64().data(); break;
    case Dtype::U32: pa = a.u32().data(); pb = b.u32().data(); break;
  }
  return std::memcmp(pa, pb, bytes) == 0;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("max_rel_err: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a.at(i), y = b.at(i);
    double denom = std::max(1.0, std::fabs(y));
    worst = std::max(worst, std::fabs(x - y) / denom);
  }
  return worst;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(a.at(i) - b.at(i)));
  }
  return worst;
}

double Rng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ArgumentError("uniform_int(0)");
  std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform01();
  } while (u1 <= 0.0);
  u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

double Rng::truncated_normal(double stddev) {
  double z;
  do {
    z = normal();
  } while (std::fabs(z) > 2.0);
  return z * stddev;
}

Tensor Rng::uniform_tensor(Dtype dt, std::vector<std::size_t> dims, double lo, double hi) {
  Tensor t = Tensor::empty(dt, std::move(dims));
  if (dt == Dtype::F32) {
    auto s = t.f32_mut();
    for (auto& v : s) v = static_cast<float>(uniform(lo, hi));
  } else if (dt == Dtype::F64) {
    auto s = t.f64_mut();
    for (auto& v : s) v = uniform(lo, hi);
  } else {
    throw ArgumentError("uniform_tensor: float dtypes only");
  }
  return t;
}

Tensor Rng::normal_tensor(Dtype dt, std::vector<std::size_t> dims, double stddev) {
  Tensor t = Tensor::empty(dt, std::move(dims));
  if (dt == Dtype::F32) {
    auto s = t.f32_mut();
    for (auto& v : s) v = static_cast<float>(normal() * stddev);
  } else if (dt == Dtype::F64) {
    auto s = t.f64_mut();
    for (auto& v : s) v = normal() * stddev;
  } else {
    throw ArgumentError("normal_tensor: float dtypes only");
  }
  return t;
}

}  // namespace parc
