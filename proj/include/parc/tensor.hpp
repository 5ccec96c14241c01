#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "parc/errors.hpp"

namespace parc {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1, U32 = 2 };

std::size_t dtype_size(Dtype dt);
const char* dtype_name(Dtype dt);

// Dense row-major N-d array. Storage is shared between copies and treated as
// immutable once an op returns; activations use NCHW order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(Dtype dt, std::vector<std::size_t> dims);  // uninitialized
  static Tensor zeros(Dtype dt, std::vector<std::size_t> dims);
  static Tensor full(Dtype dt, std::vector<std::size_t> dims, double value);
  static Tensor from_f32(std::vector<std::size_t> dims, std::vector<float> data);
  static Tensor from_f64(std::vector<std::size_t> dims, std::vector<double> data);
  static Tensor from_u32(std::vector<std::size_t> dims, std::vector<std::uint32_t> data);
  static Tensor scalar(Dtype dt, double value);  // dims {1}

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return size_; }
  Dtype dtype() const { return dtype_; }
  bool defined() const { return size_ > 0; }
  std::size_t dim(std::size_t axis) const;

  std::span<const float> f32() const;
  std::span<const double> f64() const;
  std::span<const std::uint32_t> u32() const;

  // Mutable access; clones the buffer first if it is shared (copy-on-write).
  std::span<float> f32_mut();
  std::span<double> f64_mut();
  std::span<std::uint32_t> u32_mut();

  double item() const;                     // scalar read, any float dtype
  double at(std::size_t flat) const;       // element read widened to double
  Tensor astype(Dtype dt) const;
  Tensor reshaped(std::vector<std::size_t> dims) const;  // same buffer, new dims

  std::string shape_str() const;

 private:
  std::vector<std::size_t> dims_;
  std::size_t size_ = 0;
  Dtype dtype_ = Dtype::F32;
  std::shared_ptr<void> storage_;  // shared_ptr<std::vector<T>>

  template <typename T>
  std::vector<T>& vec();
  template <typename T>
  const std::vector<T>& vec() const;
};

bool bit_equal(const Tensor& a, const Tensor& b);
// max over elements of |a-b| / max(1, |b|); shapes must match
double max_rel_err(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Deterministic RNG: the mt19937_64 engine (fully specified by the standard)
// with hand-rolled transforms, so sampled values are identical across
// standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform01();                           // [0, 1)
  double uniform(double lo, double hi);
  std::uint64_t uniform_int(std::uint64_t n);   // [0, n), unbiased
  double normal();                              // standard normal, Box-Muller
  double truncated_normal(double stddev);       // resample outside 2 stddev

  Tensor uniform_tensor(Dtype dt, std::vector<std::size_t> dims, double lo, double hi);
  Tensor normal_tensor(Dtype dt, std::vector<std::size_t> dims, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace parc
