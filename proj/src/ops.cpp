#include "parc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dispatch.hpp"

namespace parc::ops {

using detail::cdata;
using detail::dispatch_float;
using detail::mdata;
using detail::require_rank4;

namespace {

void require_same_float(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch");
  }
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, Stride stride, Pad pad,
              std::size_t groups) {
  require_rank4(x, "conv2d input");
  require_rank4(kernel, "conv2d kernel");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (groups == 0) throw ArgumentError("conv2d: groups must be >= 1");
  if (cin % groups != 0) {
    throw ShapeError("conv2d: input channels (axis 1) " + std::to_string(cin) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (cout % groups != 0) {
    throw ShapeError("conv2d: output channels (kernel axis 0) " + std::to_string(cout) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (kc != cin / groups) {
    throw ShapeError("conv2d: kernel axis 1 is " + std::to_string(kc) + ", expected " +
                     std::to_string(cin / groups) + " (= in_channels/groups)");
  }
  if (h + 2 * pad.y < kh) {
    throw ShapeError("conv2d: padded input height (axis 2) " + std::to_string(h + 2 * pad.y) +
                     " smaller than kernel height " + std::to_string(kh));
  }
  if (w + 2 * pad.x < kw) {
    throw ShapeError("conv2d: padded input width (axis 3) " + std::to_string(w + 2 * pad.x) +
                     " smaller than kernel width " + std::to_string(kw));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv2d: bias must have length " + std::to_string(cout));
  }
  if (stride.y == 0 || stride.x == 0) throw ArgumentError("conv2d: stride must be >= 1");

  const std::size_t ho = (h + 2 * pad.y - kh) / stride.y + 1;
  const std::size_t wo = (w + 2 * pad.x - kw) / stride.x + 1;
  const std::size_t cg = cout / groups;

  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), {n, cout, ho, wo});
    auto xs = cdata<T>(x);
    auto ks = cdata<T>(kernel);
    auto os = mdata<T>(out);
    std::span<const T> bs;
    if (bias) bs = cdata<T>(*bias);

    // pointwise path: y[co] = bias + sum_ci k[co,ci] * x[ci], axpy over positions
    if (kh == 1 && kw == 1 && stride.y == 1 && stride.x == 1 && pad.y == 0 && pad.x == 0 &&
        groups == 1) {
      const std::size_t hw = h * w;
      for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t co = 0; co < cout; ++co) {
          T* dst = os.data() + (in * cout + co) * hw;
          const T init = bias ? bs[co] : T(0);
          for (std::size_t i = 0; i < hw; ++i) dst[i] = init;
          const T* kk = ks.data() + co * cin;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T kv = kk[ci];
            const T* src = xs.data() + (in * cin + ci) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] += kv * src[i];
          }
        }
      }
      return out;
    }

    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t co = 0; co < cout; ++co) {
        const std::size_t g = co / cg;
        const std::size_t ci0 = g * kc;
        const T* kbase = ks.data() + co * kc * kh * kw;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long long y0 = static_cast<long long>(oy * stride.y) - static_cast<long long>(pad.y);
          const std::size_t ky_lo = y0 < 0 ? static_cast<std::size_t>(-y0) : 0;
          const std::size_t ky_hi =
              std::min(kh, static_cast<std::size_t>(std::max<long long>(0, static_cast<long long>(h) - y0)));
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long long x0 = static_cast<long long>(ox * stride.x) - static_cast<long long>(pad.x);
            const std::size_t kx_lo = x0 < 0 ? static_cast<std::size_t>(-x0) : 0;
            const std::size_t kx_hi =
                std::min(kw, static_cast<std::size_t>(std::max<long long>(0, static_cast<long long>(w) - x0)));
            T acc = bias ? bs[co] : T(0);
            for (std::size_t ci = 0; ci < kc; ++ci) {
              const T* xbase = xs.data() + ((in * cin + ci0 + ci) * h) * w;
              const T* kk = kbase + ci * kh * kw;
              for (std::size_t ky = ky_lo; ky < ky_hi; ++ky) {
                const T* xrow = xbase + (y0 + static_cast<long long>(ky)) * static_cast<long long>(w) + x0;
                const T* krow = kk + ky * kw;
                for (std::size_t kx = kx_lo; kx < kx_hi; ++kx) {
                  acc += krow[kx] * xrow[kx];
                }
              }
            }
            os[((in * cout + co) * ho + oy) * wo + ox] = acc;
          }
        }
      }
    }
    return out;
  });
}

void conv2d_backward(const Tensor& x, const Tensor& kernel, Stride stride, Pad pad,
                     std::size_t groups, const Tensor& gout, Tensor* dx, Tensor* dk, Tensor* db) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t ho = gout.dim(2), wo = gout.dim(3);
  const std::size_t cg = cout / groups;

  dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = cdata<T>(x);
    auto ks = cdata<T>(kernel);
    auto gs = cdata<T>(gout);
    std::span<T> dxs, dks, dbs;
    if (dx) dxs = mdata<T>(*dx);
    if (dk) dks = mdata<T>(*dk);
    if (db) dbs = mdata<T>(*db);

    if (kh == 1 && kw == 1 && stride.y == 1 && stride.x == 1 && pad.y == 0 && pad.x == 0 &&
        groups == 1) {
      const std::size_t hw = h * w;
      for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t co = 0; co < cout; ++co) {
          const T* g = gs.data() + (in * cout + co) * hw;
          if (db) {
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) acc += g[i];
            dbs[co] += acc;
          }
          if (!dx && !dk) continue;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xrow = xs.data() + (in * cin + ci) * hw;
            if (dx) {
              const T kv = ks[co * cin + ci];
              T* d = dxs.data() + (in * cin + ci) * hw;
              for (std::size_t i = 0; i < hw; ++i) d[i] += kv * g[i];
            }
            if (dk) {
              T acc = 0;
              for (std::size_t i = 0; i < hw; ++i) acc += xrow[i] * g[i];
              dks[co * cin + ci] += acc;
            }
          }
        }
      }
      return;
    }

    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t co = 0; co < cout; ++co) {
        const std::size_t g = co / cg;
        const std::size_t ci0 = g * kc;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long long y0 = static_cast<long long>(oy * stride.y) - static_cast<long long>(pad.y);
          const std::size_t ky_lo = y0 < 0 ? static_cast<std::size_t>(-y0) : 0;
          const std::size_t ky_hi =
              std::min(kh, static_cast<std::size_t>(std::max<long long>(0, static_cast<long long>(h) - y0)));
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long long x0 = static_cast<long long>(ox * stride.x) - static_cast<long long>(pad.x);
            const std::size_t kx_lo = x0 < 0 ? static_cast<std::size_t>(-x0) : 0;
            const std::size_t kx_hi =
                std::min(kw, static_cast<std::size_t>(std::max<long long>(0, static_cast<long long>(w) - x0)));
            const T gv = gs[((in * cout + co) * ho + oy) * wo + ox];
            if (db) dbs[co] += gv;
            if ((!dx && !dk) || kx_lo >= kx_hi) continue;
            for (std::size_t ci = 0; ci < kc; ++ci) {
              const std::size_t xc = ci0 + ci;
              const std::size_t xplane = (in * cin + xc) * h * w;
              for (std::size_t ky = ky_lo; ky < ky_hi; ++ky) {
                const std::size_t row = static_cast<std::size_t>(y0 + static_cast<long long>(ky));
                const std::size_t xoff =
                    xplane + row * w + static_cast<std::size_t>(x0 + static_cast<long long>(kx_lo));
                const std::size_t koff = ((co * kc + ci) * kh + ky) * kw + kx_lo;
                const std::size_t span = kx_hi - kx_lo;
                for (std::size_t kx = 0; kx < span; ++kx) {
                  if (dx) dxs[xoff + kx] += ks[koff + kx] * gv;
                  if (dk) dks[koff + kx] += xs[xoff + kx] * gv;
                }
              }
            }
          }
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), {n, c, 1, 1});
    auto xs = cdata<T>(x);
    auto os = mdata<T>(out);
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t i = 0; i < n * c; ++i) {
      T acc = 0;
      const T* p = xs.data() + i * h * w;
      for (std::size_t j = 0; j < h * w; ++j) acc += p[j];
      os[i] = static_cast<T>(acc * static_cast<T>(inv));
    }
    return out;
  });
}

namespace {

template <typename T>
std::vector<T> resize_1d_impl(const std::vector<T>& v, std::size_t m) {
  if (v.empty()) throw ArgumentError("bilinear_resize_1d: empty input");
  if (m == 0) throw ArgumentError("bilinear_resize_1d: target_len must be >= 1");
  const std::size_t L = v.size();
  if (m == L) return v;
  std::vector<T> out(m);
  if (L == 1) {
    std::fill(out.begin(), out.end(), v[0]);
    return out;
  }
  if (m == 1) {
    out[0] = v[0];
    return out;
  }
  const double step = static_cast<double>(L - 1) / static_cast<double>(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * step;
    std::size_t i0 = static_cast<std::size_t>(pos);
    if (i0 >= L - 1) i0 = L - 2;
    const double frac = pos - static_cast<double>(i0);
    out[i] = static_cast<T>((1.0 - frac) * static_cast<double>(v[i0]) +
                            frac * static_cast<double>(v[i0 + 1]));
  }
  return out;
}

}  // namespace

std::vector<float> bilinear_resize_1d(const std::vector<float>& v, std::size_t target_len) {
  return resize_1d_impl(v, target_len);
}
std::vector<double> bilinear_resize_1d(const std::vector<double>& v, std::size_t target_len) {
  return resize_1d_impl(v, target_len);
}

Tensor resize_rows(const Tensor& rows, std::size_t target_len) {
  if (rows.rank() != 2) throw ShapeError("resize_rows: expected C x L tensor");
  const std::size_t c = rows.dim(0), L = rows.dim(1);
  return dispatch_float(rows.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(rows.dtype(), {c, target_len});
    auto in = cdata<T>(rows);
    auto os = mdata<T>(out);
    std::vector<T> row(L);
    for (std::size_t i = 0; i < c; ++i) {
      std::copy(in.begin() + i * L, in.begin() + (i + 1) * L, row.begin());
      std::vector<T> r = resize_1d_impl(row, target_len);
      std::copy(r.begin(), r.end(), os.begin() + i * target_len);
    }
    return out;
  });
}

Tensor resize_rows_backward(const Tensor& gout, std::size_t base_len) {
  if (gout.rank() != 2) throw ShapeError("resize_rows_backward: expected C x len tensor");
  const std::size_t c = gout.dim(0), m = gout.dim(1);
  const std::size_t L = base_len;
  return dispatch_float(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::zeros(gout.dtype(), {c, L});
    auto gs = cdata<T>(gout);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < c; ++i) {
      const T* g = gs.data() + i * m;
      T* d = os.data() + i * L;
      if (m == L) {
        for (std::size_t j = 0; j < m; ++j) d[j] += g[j];
        continue;
      }
      if (L == 1) {
        for (std::size_t j = 0; j < m; ++j) d[0] += g[j];
        continue;
      }
      if (m == 1) {
        d[0] += g[0];
        continue;
      }
      const double step = static_cast<double>(L - 1) / static_cast<double>(m - 1);
      for (std::size_t j = 0; j < m; ++j) {
        const double pos = static_cast<double>(j) * step;
        std::size_t i0 = static_cast<std::size_t>(pos);
        if (i0 >= L - 1) i0 = L - 2;
        const double frac = pos - static_cast<double>(i0);
        d[i0] += static_cast<T>((1.0 - frac) * static_cast<double>(g[j]));
        d[i0 + 1] += static_cast<T>(frac * static_cast<double>(g[j]));
      }
    }
    return out;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_float(a, b, "add");
  return dispatch_float(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(a.dtype(), a.dims());
    auto as = cdata<T>(a);
    auto bs = cdata<T>(b);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] + bs[i];
    return out;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_float(a, b, "sub");
  return dispatch_float(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(a.dtype(), a.dims());
    auto as = cdata<T>(a);
    auto bs = cdata<T>(b);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] - bs[i];
    return out;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_float(a, b, "mul");
  return dispatch_float(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(a.dtype(), a.dims());
    auto as = cdata<T>(a);
    auto bs = cdata<T>(b);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] * bs[i];
    return out;
  });
}

Tensor scale(const Tensor& a, double s) {
  return dispatch_float(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(a.dtype(), a.dims());
    auto as = cdata<T>(a);
    auto os = mdata<T>(out);
    const T sv = static_cast<T>(s);
    for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] * sv;
    return out;
  });
}

void accumulate(Tensor& dst, const Tensor& src) {
  require_same_float(dst, src, "accumulate");
  dispatch_float(dst.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = mdata<T>(dst);
    auto s = cdata<T>(src);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];

  });
}

Tensor sigmoid(const Tensor& x) {
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      os[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xs[i]))));
    }
    return out;
  });
}

Tensor silu(const Tensor& x) {
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double v = static_cast<double>(xs[i]);
      os[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
    }
    return out;
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (x.rank() != 2 || w.rank() != 2) throw ShapeError("linear: x and w must be rank 2");
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(0);
  if (w.dim(1) != k) {
    throw ShapeError("linear: w axis 1 is " + std::to_string(w.dim(1)) + ", expected " +
                     std::to_string(k));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != m)) {
    throw ShapeError("linear: bias must have length " + std::to_string(m));
  }
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), {n, m});
    auto xs = cdata<T>(x);
    auto ws = cdata<T>(w);
    auto os = mdata<T>(out);
    std::span<const T> bs;
    if (bias) bs = cdata<T>(*bias);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        T acc = bias ? bs[j] : T(0);
        const T* xr = xs.data() + i * k;
        const T* wr = ws.data() + j * k;
        for (std::size_t t = 0; t < k; ++t) acc += xr[t] * wr[t];
        os[i * m + j] = acc;
      }
    }
    return out;
  });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_rank4(x, "group_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: channels (axis 1) " + std::to_string(c) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("group_norm: gamma/beta must have length " + std::to_string(c));
  }
  const std::size_t cg = c / groups;
  const std::size_t gsz = cg * h * w;
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto gs = cdata<T>(gamma);
    auto bs = cdata<T>(beta);
    auto os = mdata<T>(out);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t g = 0; g < groups; ++g) {
        const T* p = xs.data() + (in * c + g * cg) * h * w;
        double mean = 0.0;
        for (std::size_t i = 0; i < gsz; ++i) mean += static_cast<double>(p[i]);
        mean /= static_cast<double>(gsz);
        double var = 0.0;
        for (std::size_t i = 0; i < gsz; ++i) {
          const double d = static_cast<double>(p[i]) - mean;
          var += d * d;
        }
        var /= static_cast<double>(gsz);
        const double inv = 1.0 / std::sqrt(var + eps);
        T* q = os.data() + (in * c + g * cg) * h * w;
        for (std::size_t ci = 0; ci < cg; ++ci) {
          const T ga = gs[g * cg + ci];
          const T be = bs[g * cg + ci];
          for (std::size_t i = 0; i < h * w; ++i) {
            const double xn = (static_cast<double>(p[ci * h * w + i]) - mean) * inv;
            q[ci * h * w + i] = static_cast<T>(xn) * ga + be;
          }
        }
      }
    }
    return out;
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw ArgumentError("concat: no operands");
  const Tensor& first = xs.front();
  if (axis >= first.rank()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(first.rank()));
  }
  std::size_t total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != first.rank() || t.dtype() != first.dtype()) {
      throw ShapeError("concat: operands must share rank and dtype");
    }
    for (std::size_t a = 0; a < first.rank(); ++a) {
      if (a != axis && t.dim(a) != first.dim(a)) {
        throw ShapeError("concat: operand mismatch on axis " + std::to_string(a));
      }
    }
    total += t.dim(axis);
  }
  std::vector<std::size_t> odims = first.dims();
  odims[axis] = total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first.dim(a);
  for (std::size_t a = axis + 1; a < first.rank(); ++a) inner *= first.dim(a);

  return dispatch_float(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(first.dtype(), odims);
    auto os = mdata<T>(out);
    const std::size_t orow = total * inner;
    std::size_t off = 0;
    for (const Tensor& t : xs) {
      auto ts = cdata<T>(t);
      const std::size_t trow = t.dim(axis) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(os.data() + o * orow + off, ts.data() + o * trow, trow * sizeof(T));
      }
      off += trow;
    }
    return out;
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank()) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " out of range");
  }
  if (start + len > x.dim(axis) || len == 0) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for axis " + std::to_string(axis) + " of size " +
                     std::to_string(x.dim(axis)));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  std::vector<std::size_t> odims = x.dims();
  odims[axis] = len;
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), odims);
    auto xs = cdata<T>(x);
    auto os = mdata<T>(out);
    const std::size_t xrow = x.dim(axis) * inner;
    const std::size_t orow = len * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(os.data() + o * orow, xs.data() + o * xrow + start * inner, orow * sizeof(T));
    }
    return out;
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets, Tensor* softmax_out) {
  require_same_float(logits, targets, "softmax_cross_entropy");
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expected N x K logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  return dispatch_float(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto zs = cdata<T>(logits);
    auto ts = cdata<T>(targets);
    Tensor sm = Tensor::empty(logits.dtype(), logits.dims());
    auto ss = mdata<T>(sm);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* z = zs.data() + i * k;
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) zmax = std::max(zmax, static_cast<double>(z[j]));
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j]) - zmax);
      const double lse = zmax + std::log(denom);
      double row = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        ss[i * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - lse));
        row += static_cast<double>(ts[i * k + j]) * (lse - static_cast<double>(z[j]));
      }
      loss += row;
    }
    if (softmax_out) *softmax_out = sm;
    return Tensor::scalar(logits.dtype(), loss / static_cast<double>(n));
  });
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  require_rank4(x, "scale_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gate.rank() != 2 || gate.dim(0) != n || gate.dim(1) != c) {
    throw ShapeError("scale_channels: gate must be N x C = " + std::to_string(n) + " x " +
                     std::to_string(c) + ", got " + gate.shape_str());
  }
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto gs = cdata<T>(gate);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < n * c; ++i) {
      const T g = gs[i];
      for (std::size_t j = 0; j < hw; ++j) os[i * hw + j] = xs[i * hw + j] * g;
    }
    return out;
  });
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* dx, Tensor* dw,
                     Tensor* db) {
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(0);
  dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = cdata<T>(x);
    auto ws = cdata<T>(w);
    auto gs = cdata<T>(gout);
    std::span<T> dxs, dws, dbs;
    if (dx) dxs = mdata<T>(*dx);
    if (dw) dws = mdata<T>(*dw);
    if (db) dbs = mdata<T>(*db);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const T g = gs[i * m + j];
        if (db) dbs[j] += g;
        for (std::size_t t = 0; t < k; ++t) {
          if (dx) dxs[i * k + t] += g * ws[j * k + t];
          if (dw) dws[j * k + t] += g * xs[i * k + t];
        }
      }
    }
  });
}

Tensor group_norm_backward(const Tensor& x, std::size_t groups, const Tensor& gamma, double eps,
                           const Tensor& gout, Tensor* dgamma, Tensor* dbeta) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cg = c / groups;
  const std::size_t gsz = cg * h * w;
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor dx = Tensor::zeros(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto gas = cdata<T>(gamma);
    auto gs = cdata<T>(gout);
    auto dxs = mdata<T>(dx);
    std::span<T> dgs, dbs;
    if (dgamma) dgs = mdata<T>(*dgamma);
    if (dbeta) dbs = mdata<T>(*dbeta);
    std::vector<double> xhat(gsz), dxh(gsz);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = (in * c + g * cg) * h * w;
        const T* p = xs.data() + base;
        const T* go = gs.data() + base;
        double mean = 0.0;
        for (std::size_t i = 0; i < gsz; ++i) mean += static_cast<double>(p[i]);
        mean /= static_cast<double>(gsz);
        double var = 0.0;
        for (std::size_t i = 0; i < gsz; ++i) {
          const double d = static_cast<double>(p[i]) - mean;
          var += d * d;
        }
        var /= static_cast<double>(gsz);
        const double inv = 1.0 / std::sqrt(var + eps);
        double mean_dxh = 0.0, mean_dxh_xhat = 0.0;
        for (std::size_t ci = 0; ci < cg; ++ci) {
          const double ga = static_cast<double>(gas[g * cg + ci]);
          for (std::size_t i = 0; i < h * w; ++i) {
            const std::size_t idx = ci * h * w + i;
            xhat[idx] = (static_cast<double>(p[idx]) - mean) * inv;
            dxh[idx] = static_cast<double>(go[idx]) * ga;
            mean_dxh += dxh[idx];
            mean_dxh_xhat += dxh[idx] * xhat[idx];
            if (dgamma) dgs[g * cg + ci] += static_cast<T>(static_cast<double>(go[idx]) * xhat[idx]);
            if (dbeta) dbs[g * cg + ci] += go[idx];
          }
        }
        mean_dxh /= static_cast<double>(gsz);
        mean_dxh_xhat /= static_cast<double>(gsz);
        T* d = dxs.data() + base;
        for (std::size_t i = 0; i < gsz; ++i) {
          d[i] += static_cast<T>(inv * (dxh[i] - mean_dxh - xhat[i] * mean_dxh_xhat));
        }
      }
    }
    return dx;
  });
}

Tensor global_avg_pool_backward(const Tensor& gout, std::size_t h, std::size_t w) {
  const std::size_t n = gout.dim(0), c = gout.dim(1);
  return dispatch_float(gout.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor dx = Tensor::empty(gout.dtype(), {n, c, h, w});
    auto gs = cdata<T>(gout);
    auto dxs = mdata<T>(dx);
    const T inv = static_cast<T>(1.0 / static_cast<double>(h * w));
    for (std::size_t i = 0; i < n * c; ++i) {
      const T v = gs[i] * inv;
      for (std::size_t j = 0; j < h * w; ++j) dxs[i * h * w + j] = v;
    }
    return dx;
  });
}

Tensor softmax_cross_entropy_backward(const Tensor& softmax, const Tensor& targets,
                                      double upstream) {
  const std::size_t n = softmax.dim(0);
  return dispatch_float(softmax.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor dz = Tensor::empty(softmax.dtype(), softmax.dims());
    auto ss = cdata<T>(softmax);
    auto ts = cdata<T>(targets);
    auto ds = mdata<T>(dz);
    const T s = static_cast<T>(upstream / static_cast<double>(n));
    for (std::size_t i = 0; i < ss.size(); ++i) ds[i] = (ss[i] - ts[i]) * s;
    return dz;
  });
}

void scale_channels_backward(const Tensor& x, const Tensor& gate, const Tensor& gout, Tensor* dx,
                             Tensor* dgate) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = cdata<T>(x);
    auto gs = cdata<T>(gate);
    auto go = cdata<T>(gout);
    std::span<T> dxs, dgs;
    if (dx) dxs = mdata<T>(*dx);
    if (dgate) dgs = mdata<T>(*dgate);
    for (std::size_t i = 0; i < n * c; ++i) {
      const T g = gs[i];
      T acc = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        const T u = go[i * hw + j];
        if (dx) dxs[i * hw + j] += u * g;
        acc += u * xs[i * hw + j];
      }
      if (dgate) dgs[i] += acc;
    }
  });
}

Tensor sum(const Tensor& x) {
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = cdata<T>(x);
    T acc = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += xs[i];
    return Tensor::scalar(x.dtype(), static_cast<double>(acc));
  });
}

Tensor circular_shift(const Tensor& x, std::size_t axis, long long amount) {
  if (axis >= x.rank()) throw ShapeError("circular_shift: axis out of range");
  const long long n = static_cast<long long>(x.dim(axis));
  long long s = amount % n;
  if (s < 0) s += n;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto os = mdata<T>(out);
    for (std::size_t o = 0; o < outer; ++o) {
      for (long long i = 0; i < n; ++i) {
        long long src = i - s;
        if (src < 0) src += n;
        std::memcpy(os.data() + (o * n + i) * inner, xs.data() + (o * n + src) * inner,
                    inner * sizeof(T));
      }
    }
    return out;
  });
}

}  // namespace parc::ops
