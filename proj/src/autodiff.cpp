#include "parc/autodiff.hpp"

#include <cmath>

#include "dispatch.hpp"

namespace parc::autodiff {

using detail::cdata;
using detail::dispatch_float;
using detail::mdata;

namespace {

Tensor sigmoid_grad(const Tensor& y, const Tensor& g) {
  return dispatch_float(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(y.dtype(), y.dims());
    auto ys = cdata<T>(y);
    auto gs = cdata<T>(g);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < ys.size(); ++i) os[i] = gs[i] * ys[i] * (T(1) - ys[i]);
    return out;
  });
}

Tensor silu_grad(const Tensor& x, const Tensor& g) {
  return dispatch_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::empty(x.dtype(), x.dims());
    auto xs = cdata<T>(x);
    auto gs = cdata<T>(g);
    auto os = mdata<T>(out);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double v = static_cast<double>(xs[i]);
      const double s = 1.0 / (1.0 + std::exp(-v));
      os[i] = gs[i] * static_cast<T>(s * (1.0 + v * (1.0 - s)));
    }
    return out;
  });
}

// scatter g into a zero tensor of shape `dims` at [start, start+len) on axis
Tensor slice_scatter(const Tensor& g, const std::vector<std::size_t>& dims, std::size_t axis,
                     std::size_t start) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= dims[a];
  for (std::size_t a = axis + 1; a < dims.size(); ++a) inner *= dims[a];
  const std::size_t len = g.dim(axis);
  const std::size_t full = dims[axis];
  return dispatch_float(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor out = Tensor::zeros(g.dtype(), dims);
    auto gs = cdata<T>(g);
    auto os = mdata<T>(out);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(gs.begin() + o * len * inner, gs.begin() + (o + 1) * len * inner,
                os.begin() + (o * full + start) * inner);
    }
    return out;
  });
}

}  // namespace

int Tape::push(Tensor value, bool wants_grad, std::function<void(Tape&, const Tensor&)> bw) {
  Node node;
  node.value = std::move(value);
  node.wants_grad = recording_ && wants_grad;
  if (node.wants_grad) node.backward = std::move(bw);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor t) { return {push(std::move(t), true, nullptr)}; }

Var Tape::constant(Tensor t) { return {push(std::move(t), false, nullptr)}; }

Var Tape::param(const std::string& name, Tensor t) {
  Var v = leaf(std::move(t));
  params_.emplace_back(name, v.id);
  return v;
}

const Tensor& Tape::value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

void Tape::accum(Var v, const Tensor& delta) {
  if (!wants(v)) return;
  Tensor& g = grads_[static_cast<std::size_t>(v.id)];
  if (!g.defined()) {
    g = delta;  // shares storage; copy-on-write protects later accumulation
  } else {
    ops::accumulate(g, delta);
  }
}

Var Tape::add(Var a, Var b) {
  Tensor v = ops::add(value(a), value(b));
  return {push(std::move(v), wants(a) || wants(b), [a, b](Tape& t, const Tensor& g) {
            t.accum(a, g);
            t.accum(b, g);
          })};
}

Var Tape::mul(Var a, Var b) {
  Tensor v = ops::mul(value(a), value(b));
  Tensor av = value(a), bv = value(b);
  return {push(std::move(v), wants(a) || wants(b), [a, b, av, bv](Tape& t, const Tensor& g) {
            if (t.wants(a)) t.accum(a, ops::mul(g, bv));
            if (t.wants(b)) t.accum(b, ops::mul(g, av));
          })};
}

Var Tape::scale(Var a, double s) {
  Tensor v = ops::scale(value(a), s);
  return {push(std::move(v), wants(a), [a, s](Tape& t, const Tensor& g) {
            t.accum(a, ops::scale(g, s));
          })};
}

Var Tape::sigmoid(Var a) {
  Tensor y = ops::sigmoid(value(a));
  Tensor saved = y;
  return {push(std::move(y), wants(a), [a, saved](Tape& t, const Tensor& g) {
            t.accum(a, sigmoid_grad(saved, g));
          })};
}

Var Tape::silu(Var a) {
  Tensor y = ops::silu(value(a));
  Tensor xv = value(a);
  return {push(std::move(y), wants(a), [a, xv](Tape& t, const Tensor& g) {
            t.accum(a, silu_grad(xv, g));
          })};
}

Var Tape::sum(Var a) {
  Tensor y = ops::sum(value(a));
  const std::vector<std::size_t> dims = value(a).dims();
  const Dtype dt = value(a).dtype();
  return {push(std::move(y), wants(a), [a, dims, dt](Tape& t, const Tensor& g) {
            t.accum(a, Tensor::full(dt, dims, g.item()));
          })};
}

Var Tape::reshape(Var a, std::vector<std::size_t> dims) {
  Tensor y = value(a).reshaped(dims);
  const std::vector<std::size_t> in_dims = value(a).dims();
  return {push(std::move(y), wants(a), [a, in_dims](Tape& t, const Tensor& g) {
            t.accum(a, g.reshaped(in_dims));
          })};
}

Var Tape::conv2d(Var x, Var k, std::optional<Var> bias, ops::Stride stride, ops::Pad pad,
                 std::size_t groups) {
  const Tensor* b = bias ? &value(*bias) : nullptr;
  Tensor y = ops::conv2d(value(x), value(k), b, stride, pad, groups);
  Tensor xv = value(x), kv = value(k);
  bool w = wants(x) || wants(k) || (bias && wants(*bias));
  return {push(std::move(y), w, [x, k, bias, xv, kv, stride, pad, groups](Tape& t, const Tensor& g) {
            Tensor dx, dk, db;
            if (t.wants(x)) dx = Tensor::zeros(xv.dtype(), xv.dims());
            if (t.wants(k)) dk = Tensor::zeros(kv.dtype(), kv.dims());
            if (bias && t.wants(*bias)) db = Tensor::zeros(kv.dtype(), {kv.dim(0)});
            ops::conv2d_backward(xv, kv, stride, pad, groups, g, dx.defined() ? &dx : nullptr,
                                 dk.defined() ? &dk : nullptr, db.defined() ? &db : nullptr);
            if (dx.defined()) t.accum(x, dx);
            if (dk.defined()) t.accum(k, dk);
            if (db.defined()) t.accum(*bias, db);
          })};
}

Var Tape::linear(Var x, Var w, std::optional<Var> bias) {
  const Tensor* b = bias ? &value(*bias) : nullptr;
  Tensor y = ops::linear(value(x), value(w), b);
  Tensor xv = value(x), wv = value(w);
  bool wg = wants(x) || wants(w) || (bias && wants(*bias));
  return {push(std::move(y), wg, [x, w, bias, xv, wv](Tape& t, const Tensor& g) {
            Tensor dx, dw, db;
            if (t.wants(x)) dx = Tensor::zeros(xv.dtype(), xv.dims());
            if (t.wants(w)) dw = Tensor::zeros(wv.dtype(), wv.dims());
            if (bias && t.wants(*bias)) db = Tensor::zeros(wv.dtype(), {wv.dim(0)});
            ops::linear_backward(xv, wv, g, dx.defined() ? &dx : nullptr,
                                 dw.defined() ? &dw : nullptr, db.defined() ? &db : nullptr);
            if (dx.defined()) t.accum(x, dx);
            if (dw.defined()) t.accum(w, dw);
            if (db.defined()) t.accum(*bias, db);
          })};
}

Var Tape::group_norm(Var x, std::size_t groups, Var gamma, Var beta, double eps) {
  Tensor y = ops::group_norm(value(x), groups, value(gamma), value(beta), eps);
  Tensor xv = value(x), gv = value(gamma);
  bool w = wants(x) || wants(gamma) || wants(beta);
  return {push(std::move(y), w, [x, gamma, beta, groups, eps, xv, gv](Tape& t, const Tensor& g) {
            Tensor dgamma, dbeta;
            if (t.wants(gamma)) dgamma = Tensor::zeros(gv.dtype(), gv.dims());
            if (t.wants(beta)) dbeta = Tensor::zeros(gv.dtype(), gv.dims());
            Tensor dx = ops::group_norm_backward(xv, groups, gv, eps, g,
                                                 dgamma.defined() ? &dgamma : nullptr,
                                                 dbeta.defined() ? &dbeta : nullptr);
            t.accum(x, dx);
            if (dgamma.defined()) t.accum(gamma, dgamma);
            if (dbeta.defined()) t.accum(beta, dbeta);
          })};
}

Var Tape::concat(const std::vector<Var>& xs, std::size_t axis) {
  std::vector<Tensor> vals;
  vals.reserve(xs.size());
  bool w = false;
  for (Var v : xs) {
    vals.push_back(value(v));
    w = w || wants(v);
  }
  Tensor y = ops::concat(vals, axis);
  std::vector<std::size_t> sizes;
  sizes.reserve(xs.size());
  for (const Tensor& t : vals) sizes.push_back(t.dim(axis));
  std::vector<Var> inputs = xs;
  return {push(std::move(y), w, [inputs, sizes, axis](Tape& t, const Tensor& g) {
            std::size_t off = 0;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
              if (t.wants(inputs[i])) {
                t.accum(inputs[i], ops::slice(g, axis, off, sizes[i]));
              }
              off += sizes[i];
            }
          })};
}

Var Tape::slice(Var x, std::size_t axis, std::size_t start, std::size_t len) {
  Tensor y = ops::slice(value(x), axis, start, len);
  const std::vector<std::size_t> in_dims = value(x).dims();
  return {push(std::move(y), wants(x), [x, axis, start, in_dims](Tape& t, const Tensor& g) {
            t.accum(x, slice_scatter(g, in_dims, axis, start));
          })};
}

Var Tape::global_avg_pool(Var x) {
  Tensor y = ops::global_avg_pool(value(x));
  const std::size_t h = value(x).dim(2), w = value(x).dim(3);
  return {push(std::move(y), wants(x), [x, h, w](Tape& t, const Tensor& g) {
            t.accum(x, ops::global_avg_pool_backward(g, h, w));
          })};
}

Var Tape::resize_rows(Var base, std::size_t target_len) {
  Tensor y = ops::resize_rows(value(base), target_len);
  const std::size_t L = value(base).dim(1);
  return {push(std::move(y), wants(base), [base, L](Tape& t, const Tensor& g) {
            t.accum(base, ops::resize_rows_backward(g, L));
          })};
}

Var Tape::circular_conv(Var x, Var k, Orientation orient) {
  Tensor y = circular_conv_direct(value(x), value(k), orient);
  Tensor xv = value(x), kv = value(k);
  bool w = wants(x) || wants(k);
  return {push(std::move(y), w, [x, k, orient, xv, kv](Tape& t, const Tensor& g) {
            Tensor dx, dk;
            if (t.wants(x)) dx = Tensor::zeros(xv.dtype(), xv.dims());
            if (t.wants(k)) dk = Tensor::zeros(kv.dtype(), kv.dims());
            circular_conv_backward(xv, kv, orient, g, dx.defined() ? &dx : nullptr,
                                   dk.defined() ? &dk : nullptr);
            if (dx.defined()) t.accum(x, dx);
            if (dk.defined()) t.accum(k, dk);
          })};
}

Var Tape::add_line_embedding(Var x, Var pe, Orientation orient) {
  Tensor y = parc::add_line_embedding(value(x), value(pe), orient);
  Tensor pev = value(pe);
  bool w = wants(x) || wants(pe);
  return {push(std::move(y), w, [x, pe, orient, pev](Tape& t, const Tensor& g) {
            t.accum(x, g);
            if (t.wants(pe)) {
              Tensor dpe = Tensor::zeros(pev.dtype(), pev.dims());
              add_line_embedding_backward(g, orient, &dpe);
              t.accum(pe, dpe);
            }
          })};
}

Var Tape::scale_channels(Var x, Var gate) {
  Tensor y = ops::scale_channels(value(x), value(gate));
  Tensor xv = value(x), gv = value(gate);
  bool w = wants(x) || wants(gate);
  return {push(std::move(y), w, [x, gate, xv, gv](Tape& t, const Tensor& g) {
            Tensor dx, dgate;
            if (t.wants(x)) dx = Tensor::zeros(xv.dtype(), xv.dims());
            if (t.wants(gate)) dgate = Tensor::zeros(gv.dtype(), gv.dims());
            ops::scale_channels_backward(xv, gv, g, dx.defined() ? &dx : nullptr,
                                         dgate.defined() ? &dgate : nullptr);
            if (dx.defined()) t.accum(x, dx);
            if (dgate.defined()) t.accum(gate, dgate);
          })};
}

Var Tape::softmax_cross_entropy(Var logits, Var targets) {
  Tensor softmax;
  Tensor loss = ops::softmax_cross_entropy(value(logits), value(targets), &softmax);
  Tensor tv = value(targets);
  return {push(std::move(loss), wants(logits), [logits, softmax, tv](Tape& t, const Tensor& g) {
            t.accum(logits, ops::softmax_cross_entropy_backward(softmax, tv, g.item()));
          })};
}

void Tape::backward(Var loss) {
  if (!recording_) throw ContractError("backward on a non-recording tape");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + lv.shape_str());
  }
  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<std::size_t>(loss.id)] = Tensor::full(lv.dtype(), lv.dims(), 1.0);
  for (int i = loss.id; i >= 0; --i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.backward && grads_[static_cast<std::size_t>(i)].defined()) {
      node.backward(*this, grads_[static_cast<std::size_t>(i)]);
    }
  }
}

Tensor Tape::grad(Var v) const {
  if (grads_.empty()) throw ContractError("grad queried before backward");
  const Tensor& g = grads_[static_cast<std::size_t>(v.id)];
  if (g.defined()) return g;
  const Tensor& val = value(v);
  return Tensor::zeros(val.dtype(), val.dims());
}

Tensor Tape::grad(const std::string& name) const {
  for (const auto& [n, id] : params_) {
    if (n == name) return grad(Var{id});
  }
  throw ContractError("unknown parameter: " + name);
}

std::map<std::string, Tensor> grad(const LossFn& loss_fn,
                                   const std::map<std::string, Tensor>& params,
                                   const std::vector<Tensor>& inputs) {
  Tape tape(true);
  std::map<std::string, Var> pvars;
  for (const auto& [name, t] : params) pvars[name] = tape.param(name, t);
  std::vector<Var> ivars;
  ivars.reserve(inputs.size());
  for (const Tensor& t : inputs) ivars.push_back(tape.constant(t));
  Var loss = loss_fn(tape, pvars, ivars);
  tape.backward(loss);
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : pvars) out[name] = tape.grad(v);
  return out;
}

double finite_diff_check(const LossFn& loss_fn, const std::map<std::string, Tensor>& params,
                         const std::vector<Tensor>& inputs, double eps,
                         std::size_t max_coords_per_param) {
  for (const auto& [name, t] : params) {
    if (t.dtype() != Dtype::F64) {
      throw ContractError("finite_diff_check requires f64 parameters: " + name);
    }
  }
  for (const Tensor& t : inputs) {
    if (t.dtype() != Dtype::F64) throw ContractError("finite_diff_check requires f64 inputs");
  }

  Tape tape(true);
  std::map<std::string, Var> pvars;
  for (const auto& [name, t] : params) pvars[name] = tape.param(name, t);
  std::vector<Var> ivars;
  for (const Tensor& t : inputs) ivars.push_back(tape.constant(t));
  Var loss = loss_fn(tape, pvars, ivars);
  if (!std::isfinite(tape.value(loss).item())) {
    throw DiagnosticError("finite_diff_check: non-finite loss at the base point");
  }
  tape.backward(loss);

  auto eval = [&](const std::map<std::string, Tensor>& ps) {
    Tape t2(false);
    std::map<std::string, Var> pv;
    for (const auto& [name, t] : ps) pv[name] = t2.param(name, t);
    std::vector<Var> iv;
    for (const Tensor& t : inputs) iv.push_back(t2.constant(t));
    return t2.value(loss_fn(t2, pv, iv)).item();
  };

  double worst = 0.0;
  std::map<std::string, Tensor> work = params;
  for (const auto& [name, p] : params) {
    Tensor analytic = tape.grad(name);
    const std::size_t sz = p.size();
    std::size_t step = 1;
    if (max_coords_per_param > 0 && sz > max_coords_per_param) {
      step = (sz + max_coords_per_param - 1) / max_coords_per_param;
    }
    for (std::size_t i = 0; i < sz; i += step) {
      Tensor plus = p;
      plus.f64_mut()[i] += eps;
      work[name] = plus;
      const double lp = eval(work);
      Tensor minus = p;
      minus.f64_mut()[i] -= eps;
      work[name] = minus;
      const double lm = eval(work);
      work[name] = p;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw DiagnosticError("finite_diff_check: non-finite loss perturbing parameter " + name);
      }
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic.f64()[i];
      worst = std::max(worst, std::fabs(a - numeric) / std::max(1.0, std::fabs(numeric)));
    }
  }
  return worst;
}

}  // namespace parc::autodiff
