#include "parc/parc_ops.hpp"

#include <cmath>
#include <string>

#include "dispatch.hpp"

namespace parc {

using detail::cdata;
using detail::dispatch_float;
using detail::mdata;
using detail::require_rank4;

const char* orientation_name(Orientation o) {
  return o == Orientation::Vertical ? "vertical" : "horizontal";
}

namespace {

template <typename T>
std::vector<T> oracle_impl(const std::vector<T>& x, const std::vector<T>& k) {
  if (x.size() != k.size()) {
    throw ContractError("circular_conv_1d_oracle: kernel length " + std::to_string(k.size()) +
                        " != signal length " + std::to_string(x.size()));
  }
  const std::size_t n = x.size();
  std::vector<T> y(n);
  for (std::size_t j = 0; j < n; ++j) {
    T acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      acc += k[t] * x[(j + t) % n];
    }
    y[j] = acc;
  }
  return y;
}

void check_kernel_extent(const Tensor& x, const Tensor& kernels, Orientation orient,
                         const char* op) {
  require_rank4(x, op);
  if (kernels.rank() != 2) {
    throw ShapeError(std::string(op) + ": kernels must be C x extent, got " + kernels.shape_str());
  }
  const std::size_t c = x.dim(1);
  const std::size_t extent = orient == Orientation::Vertical ? x.dim(2) : x.dim(3);
  if (kernels.dim(0) != c) {
    throw ContractError(std::string(op) + ": kernel channels " + std::to_string(kernels.dim(0)) +
                        " != input channels " + std::to_string(c));
  }
  if (kernels.dim(1) != extent) {
    throw ContractError(std::string(op) + ": kernel length " + std::to_string(kernels.dim(1)) +
                        " != " + orientation_name(orient) + " extent " + std::to_string(extent));
  }
}

}  // namespace

std::vector<float> circular_conv_1d_oracle(const std::vector<float>& x,
                                           const std::vector<float>& k) {
  return oracle_impl(x, k);
}
std::vector<double> circular_conv_1d_oracle(const std::vector<double>& x,
                                            const std::vector<double>& k) {
  return oracle_impl(x, k);
}

Tensor expand_vertical(const Tensor& pe, std::size_t w) {
  if (pe.rank() != 1) throw ArgumentError("expand_vertical: pe must be rank 1");
  if (w == 0) throw ArgumentError("expand_vertical: w must be >= 1");
  const std::size_t h = pe.dim(0);
  return dispatch_float(pe.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(pe.dtype(), {h, w});
    auto ps = cdata<T>(pe);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) os[i * w + j] = ps[i];
    }
    return out;
  });
}

Tensor expand_horizontal(const Tensor& pe, std::size_t h) {
  if (pe.rank() != 1) throw ArgumentError("expand_horizontal: pe must be rank 1");
  if (h == 0) throw ArgumentError("expand_horizontal: h must be >= 1");
  const std::size_t w = pe.dim(0);
  return dispatch_float(pe.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(pe.dtype(), {h, w});
    auto ps = cdata<T>(pe);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) os[i * w + j] = ps[j];
    }
    return out;
  });
}

// Line-by-line oracle semantics (ascending-t summation); the loops are inlined
// with a wrapped running index so outputs stay bit-identical to the 1-d oracle.
Tensor circular_conv_direct(const Tensor& x, const Tensor& kernels, Orientation orient) {
  check_kernel_extent(x, kernels, orient, "circular_conv_direct");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto ks = cdata<T>(kernels);
    auto os = mdata<T>(out);
    auto convolve_line = [](const T* line, const T* kv, T* dst, std::size_t len) {
      for (std::size_t j = 0; j < len; ++j) {
        T acc = 0;
        std::size_t idx = j;
        for (std::size_t t = 0; t < len; ++t) {
          acc += kv[t] * line[idx];
          if (++idx == len) idx = 0;
        }
        dst[j] = acc;
      }
    };
    if (orient == Orientation::Horizontal) {
      std::vector<T> dst(w);
      for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const T* kv = ks.data() + ci * w;
          for (std::size_t i = 0; i < h; ++i) {
            const T* row = xs.data() + ((in * c + ci) * h + i) * w;
            convolve_line(row, kv, dst.data(), w);
            std::copy(dst.begin(), dst.end(), os.begin() + ((in * c + ci) * h + i) * w);
          }
        }
      }
    } else {
      std::vector<T> line(h), dst(h);
      for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const T* kv = ks.data() + ci * h;
          const T* plane = xs.data() + (in * c + ci) * h * w;
          T* oplane = os.data() + (in * c + ci) * h * w;
          for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t i = 0; i < h; ++i) line[i] = plane[i * w + j];
            convolve_line(line.data(), kv, dst.data(), h);
            for (std::size_t i = 0; i < h; ++i) oplane[i * w + j] = dst[i];
          }
        }
      }
    }
    return out;
  });
}

Tensor circular_conv_concat(const Tensor& x, const Tensor& kernels, Orientation orient) {
  check_kernel_extent(x, kernels, orient, "circular_conv_concat");
  const std::size_t c = x.dim(1);
  const std::size_t extent = orient == Orientation::Vertical ? x.dim(2) : x.dim(3);
  const std::size_t axis = orient == Orientation::Vertical ? 2 : 3;
  // y = conv2d(cat(x, x, axis), k) with a valid depthwise conv, first n outputs
  Tensor doubled = ops::concat({x, x}, axis);
  Tensor k4 = orient == Orientation::Vertical ? kernels.reshaped({c, 1, extent, 1})
                                              : kernels.reshaped({c, 1, 1, extent});
  Tensor full = ops::conv2d(doubled, k4, nullptr, {1, 1}, {0, 0}, c);
  return ops::slice(full, axis, 0, extent);
}

void circular_conv_backward(const Tensor& x, const Tensor& kernels, Orientation orient,
                            const Tensor& gout, Tensor* dx, Tensor* dk) {
  check_kernel_extent(x, kernels, orient, "circular_conv_backward");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = cdata<T>(x);
    auto ks = cdata<T>(kernels);
    auto gs = cdata<T>(gout);
    std::span<T> dxs, dks;
    if (dx) dxs = mdata<T>(*dx);
    if (dk) dks = mdata<T>(*dk);
    const std::size_t extent = orient == Orientation::Vertical ? h : w;
    // forward gathered x at ((i or j) + t) mod extent; scatter back with a
    // running wrapped index
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const T* kv = ks.data() + ci * extent;
        T* dkrow = dk ? dks.data() + ci * extent : nullptr;
        const std::size_t plane = (in * c + ci) * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const T g = gs[plane + i * w + j];
            std::size_t idx = orient == Orientation::Vertical ? i : j;
            for (std::size_t t = 0; t < extent; ++t) {
              const std::size_t src = orient == Orientation::Vertical
                                          ? plane + idx * w + j
                                          : plane + i * w + idx;
              if (dx) dxs[src] += kv[t] * g;
              if (dkrow) dkrow[t] += xs[src] * g;
              if (++idx == extent) idx = 0;
            }
          }
        }
      }
    }
  });
}

Tensor add_line_embedding(const Tensor& x, const Tensor& pe, Orientation orient) {
  check_kernel_extent(x, pe, orient, "add_line_embedding");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto ps = cdata<T>(pe);
    auto os = mdata<T>(out);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t plane = (in * c + ci) * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const T p = orient == Orientation::Vertical ? ps[ci * h + i] : ps[ci * w + j];
            os[plane + i * w + j] = xs[plane + i * w + j] + p;
          }
        }
      }
    }
    return out;
  });
}

void add_line_embedding_backward(const Tensor& gout, Orientation orient, Tensor* dpe) {
  if (!dpe) return;
  const std::size_t n = gout.dim(0), c = gout.dim(1), h = gout.dim(2), w = gout.dim(3);
  dispatch_float(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto gs = cdata<T>(gout);
    auto ds = mdata<T>(*dpe);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t plane = (in * c + ci) * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t pi = orient == Orientation::Vertical ? ci * h + i : ci * w + j;
            ds[pi] += gs[plane + i * w + j];
          }
        }
      }
    }
  });
}

Tensor instance_kernel(const ParCParams& p, std::size_t extent) {
  return ops::resize_rows(p.base_kernel, extent);
}

Tensor instance_pe(const ParCParams& p, std::size_t extent) {
  if (!p.base_pe.defined()) throw ContractError("instance_pe: params carry no position embedding");
  return ops::resize_rows(p.base_pe, extent);
}

Tensor parc_forward(const Tensor& x, const ParCParams& p, bool use_pe) {
  require_rank4(x, "parc_forward");
  if (x.dim(1) != p.channels()) {
    throw ContractError("parc_forward: input channels " + std::to_string(x.dim(1)) +
                        " != params channels " + std::to_string(p.channels()));
  }
  const std::size_t extent = p.orientation == Orientation::Vertical ? x.dim(2) : x.dim(3);
  Tensor k = instance_kernel(p, extent);
  Tensor xp = x;
  if (use_pe) {
    xp = add_line_embedding(x, instance_pe(p, extent), p.orientation);
  }
  return circular_conv_direct(xp, k, p.orientation);
}

std::size_t big_kernel_length(double fraction, std::size_t extent) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw ArgumentError("big_kernel_length: fraction must be in (0, 1]");
  }
  long long len = std::llround(fraction * static_cast<double>(extent));
  if (len < 1) {
    throw ArgumentError("big_kernel_length: extent " + std::to_string(extent) +
                        " too small for fraction " + std::to_string(fraction));
  }
  if (len % 2 == 0) ++len;  // symmetric zero padding needs an odd kernel
  return static_cast<std::size_t>(len);
}

Tensor big_kernel_conv(const Tensor& x, double fraction, const ParCParams& p) {
  require_rank4(x, "big_kernel_conv");
  if (x.dim(1) != p.channels()) {
    throw ContractError("big_kernel_conv: input channels " + std::to_string(x.dim(1)) +
                        " != params channels " + std::to_string(p.channels()));
  }
  const std::size_t c = x.dim(1);
  const std::size_t extent = p.orientation == Orientation::Vertical ? x.dim(2) : x.dim(3);
  const std::size_t len = big_kernel_length(fraction, extent);
  Tensor k = ops::resize_rows(p.base_kernel, len);
  const std::size_t pad = (len - 1) / 2;
  if (p.orientation == Orientation::Vertical) {
    return ops::conv2d(x, k.reshaped({c, 1, len, 1}), nullptr, {1, 1}, {pad, 0}, c);
  }
  return ops::conv2d(x, k.reshaped({c, 1, 1, len}), nullptr, {1, 1}, {0, pad}, c);
}

}  // namespace parc
