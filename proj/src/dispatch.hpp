#pragma once

#include <span>
#include <string>

#include "parc/tensor.hpp"

namespace parc::detail {

template <typename T>
std::span<const T> cdata(const Tensor& t);
template <>
inline std::span<const float> cdata<float>(const Tensor& t) { return t.f32(); }
template <>
inline std::span<const double> cdata<double>(const Tensor& t) { return t.f64(); }

template <typename T>
std::span<T> mdata(Tensor& t);
template <>
inline std::span<float> mdata<float>(Tensor& t) { return t.f32_mut(); }
template <>
inline std::span<double> mdata<double>(Tensor& t) { return t.f64_mut(); }

template <typename F>
auto dispatch_float(Dtype dt, F&& f) {
  switch (dt) {
    case Dtype::F32: return f(float{});
    case Dtype::F64: return f(double{});
    default: throw ContractError("operation requires a float tensor, got u32");
  }
}

inline void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 NCHW tensor, got rank " +
                     std::to_string(x.rank()));
  }
}

}  // namespace parc::detail
