#pragma once

#include <vector>

#include "parc/ops.hpp"
#include "parc/tensor.hpp"

namespace parc {

enum class Orientation { Vertical, Horizontal };

const char* orientation_name(Orientation o);

// Learnable state of one ParC operator: a per-channel base kernel and base
// position embedding, both C x L_base, resized to the runtime extent on use.
struct ParCParams {
  Orientation orientation = Orientation::Vertical;
  Tensor base_kernel;  // C x L_base
  Tensor base_pe;      // C x L_base; undefined tensor when the op runs without PE

  std::size_t channels() const { return base_kernel.dim(0); }
  std::size_t l_base() const { return base_kernel.dim(1); }
};

// y_j = sum_t k_t * x_{(j+t) mod n}; the project-wide semantic oracle.
std::vector<float> circular_conv_1d_oracle(const std::vector<float>& x,
                                           const std::vector<float>& k);
std::vector<double> circular_conv_1d_oracle(const std::vector<double>& x,
                                            const std::vector<double>& k);

// Copies pe (length h) w times and concatenates the copies horizontally.
Tensor expand_vertical(const Tensor& pe, std::size_t w);  // -> h x w
// Stacks pe (length w) h times along the vertical direction.
Tensor expand_horizontal(const Tensor& pe, std::size_t h);  // -> h x w

// Depthwise circular convolution along one spatial axis of an NCHW tensor,
// applying the 1-d oracle line by line. kernels: C x extent.
Tensor circular_conv_direct(const Tensor& x, const Tensor& kernels, Orientation orient);

// Same semantics via the doubling trick: concatenate x with itself along the
// axis, run an ordinary valid depthwise convolution, keep the first n outputs.
Tensor circular_conv_concat(const Tensor& x, const Tensor& kernels, Orientation orient);

// Backward of the circular convolution; scatters with accumulation at wrapped
// indices. dx/dk accumulated into when non-null (zero-initialized by caller).
void circular_conv_backward(const Tensor& x, const Tensor& kernels, Orientation orient,
                            const Tensor& gout, Tensor* dx, Tensor* dk);

// x + expand(pe) where pe is C x extent, broadcast along batch and the other axis.
Tensor add_line_embedding(const Tensor& x, const Tensor& pe, Orientation orient);
void add_line_embedding_backward(const Tensor& gout, Orientation orient, Tensor* dpe);

// Instance kernel/PE: base resized to the runtime extent (align corners).
Tensor instance_kernel(const ParCParams& p, std::size_t extent);
Tensor instance_pe(const ParCParams& p, std::size_t extent);

// Full ParC op: resize kernel and PE to the axis extent, add the expanded PE
// when use_pe, then convolve circularly along the orientation axis.
Tensor parc_forward(const Tensor& x, const ParCParams& p, bool use_pe);

// Big-kernel ablation: zero-padded local depthwise conv along the orientation
// axis, kernel length round(fraction * extent) forced odd. No PE, no wrap.
std::size_t big_kernel_length(double fraction, std::size_t extent);
Tensor big_kernel_conv(const Tensor& x, double fraction, const ParCParams& p);

}  // namespace parc
