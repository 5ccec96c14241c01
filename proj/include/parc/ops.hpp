#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "parc/tensor.hpp"

namespace parc::ops {

struct Stride {
  std::size_t y = 1, x = 1;
};
struct Pad {
  std::size_t y = 0, x = 0;
};

// Grouped 2D convolution, direct summation, zero padding.
// x: N x Cin x H x W, kernel: Cout x Cin/groups x kh x kw, bias: Cout.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, Stride stride, Pad pad,
              std::size_t groups);

// Accumulates into any non-null gradient output (dx/dk must be zero-initialized
// by the caller; same dims as x/kernel/bias).
void conv2d_backward(const Tensor& x, const Tensor& kernel, Stride stride, Pad pad,
                     std::size_t groups, const Tensor& gout, Tensor* dx, Tensor* dk, Tensor* db);

Tensor global_avg_pool(const Tensor& x);  // N x C x H x W -> N x C x 1 x 1

// Align-corners linear interpolation of a 1-d sequence.
std::vector<float> bilinear_resize_1d(const std::vector<float>& v, std::size_t target_len);
std::vector<double> bilinear_resize_1d(const std::vector<double>& v, std::size_t target_len);

// Row-wise align-corners resize: rows C x L -> C x target_len.
Tensor resize_rows(const Tensor& rows, std::size_t target_len);
// Transpose of resize_rows as a linear map: gout C x target_len -> C x L.
Tensor resize_rows_backward(const Tensor& gout, std::size_t base_len);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void accumulate(Tensor& dst, const Tensor& src);  // dst += src, in place

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

// x: N x K, w: M x K (row per output), bias: M (optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps);

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);

// Mean row-wise cross entropy between softmax(logits) and target distributions.
// Both N x K. Stores softmax(logits) into *softmax_out when non-null.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets,
                             Tensor* softmax_out = nullptr);

// Per-channel gate: x N x C x H x W, gate N x C -> x * gate broadcast over H, W.
Tensor scale_channels(const Tensor& x, const Tensor& gate);

// Backward kernels. Gradient outputs are accumulated into (caller zero-inits).
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* dx, Tensor* dw,
                     Tensor* db);
Tensor group_norm_backward(const Tensor& x, std::size_t groups, const Tensor& gamma, double eps,
                           const Tensor& gout, Tensor* dgamma, Tensor* dbeta);
Tensor global_avg_pool_backward(const Tensor& gout, std::size_t h, std::size_t w);
// d loss/d logits for mean-reduced cross entropy: (softmax - target) * upstream / N.
Tensor softmax_cross_entropy_backward(const Tensor& softmax, const Tensor& targets,
                                      double upstream);
void scale_channels_backward(const Tensor& x, const Tensor& gate, const Tensor& gout, Tensor* dx,
                             Tensor* dgate);

Tensor sum(const Tensor& x);  // scalar tensor {1}

// Circular shift along one axis: out[i] = x[(i - amount) mod n] on that axis.
Tensor circular_shift(const Tensor& x, std::size_t axis, long long amount);

}  // namespace parc::ops
