#include "parc/checks.hpp"

#include <cmath>

#include "parc/autodiff.hpp"
#include "parc/blocks.hpp"
#include "parc/model.hpp"
#include "parc/ops.hpp"
#include "parc/parc_ops.hpp"

namespace parc::checks {

void witness_params(model::Model& m, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> names;
  for (const auto& [name, t] : m.params().entries()) names.push_back(name);
  for (const std::string& name : names) {
    if (name.find("norm") != std::string::npos) continue;
    const Tensor& t = m.params().get(name);
    const double mag = name.ends_with(".pe") ? 1.5 : 0.4;
    m.params().set(name, rng.uniform_tensor(t.dtype(), t.dims(), -mag, mag));
  }
}

namespace {

using autodiff::Tape;
using autodiff::Var;

PropertyResult result(const std::string& name, double worst, double threshold,
                      bool pass_when_below = true) {
  PropertyResult r;
  r.name = name;
  r.worst = worst;
  r.threshold = threshold;
  r.pass = pass_when_below ? worst < threshold : worst > threshold;
  return r;
}

PropertyResult oracle_equivalence(std::uint64_t seed, std::size_t trials) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t extent = 1 + rng.uniform_int(64);
    const std::size_t other = 1 + rng.uniform_int(8);
    const std::size_t c = 1 + rng.uniform_int(4);
    const std::size_t n = 1 + rng.uniform_int(2);
    const Orientation orient = rng.uniform_int(2) == 0 ? Orientation::Vertical
                                                       : Orientation::Horizontal;
    const std::size_t h = orient == Orientation::Vertical ? extent : other;
    const std::size_t w = orient == Orientation::Vertical ? other : extent;
    Tensor x = rng.uniform_tensor(Dtype::F32, {n, c, h, w}, -1.0, 1.0);
    Tensor k = rng.uniform_tensor(Dtype::F32, {c, extent}, -1.0, 1.0);
    worst = std::max(worst, max_rel_err(circular_conv_concat(x, k, orient),
                                        circular_conv_direct(x, k, orient)));
  }
  return result("oracle_equivalence", worst, 1e-6);
}

PropertyResult oracle_delta_identity(std::uint64_t seed, std::size_t trials) {
  Rng rng(seed + 17);
  std::size_t failures = 0;
  const std::size_t cases = std::max<std::size_t>(1, trials / 20);
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t extent = 1 + rng.uniform_int(32);
    const std::size_t c = 1 + rng.uniform_int(4);
    Tensor x = rng.uniform_tensor(Dtype::F32, {1, c, extent, 3}, -1.0, 1.0);
    Tensor k = Tensor::zeros(Dtype::F32, {c, extent});
    for (std::size_t ci = 0; ci < c; ++ci) k.f32_mut()[ci * extent] = 1.0f;
    if (!bit_equal(circular_conv_concat(x, k, Orientation::Vertical), x)) ++failures;
    if (!bit_equal(circular_conv_direct(x, k, Orientation::Vertical), x)) ++failures;
  }
  PropertyResult r = result("oracle_delta_identity", static_cast<double>(failures), 0.5);
  r.detail = "delta kernels must reproduce the input bit-exactly";
  return r;
}

// loss = sum(op_output * fixed_random_weights) exercises non-uniform upstreams
Var weighted_sum(Tape& t, Var y, std::uint64_t seed) {
  Rng rng(seed);
  Var w = t.constant(rng.uniform_tensor(t.value(y).dtype(), t.value(y).dims(), -1.0, 1.0));
  return t.sum(t.mul(y, w));
}

PropertyResult primitive_gradients(std::uint64_t seed) {
  Rng rng(seed + 5);
  double worst = 0.0;
  auto check = [&](const char* name, const std::map<std::string, Tensor>& params,
                   const std::vector<Tensor>& inputs, const autodiff::LossFn& fn) {
    const double err = autodiff::finite_diff_check(fn, params, inputs, 1e-5);
    (void)name;
    worst = std::max(worst, err);
  };

  auto ru = [&](std::vector<std::size_t> dims) {
    return rng.uniform_tensor(Dtype::F64, std::move(dims), -1.0, 1.0);
  };

  check("conv2d", {{"k", ru({4, 2, 3, 3})}, {"b", ru({4})}}, {ru({2, 4, 5, 6})},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>& in) {
          Var y = t.conv2d(in[0], p.at("k"), p.at("b"), {2, 1}, {1, 1}, 2);
          return weighted_sum(t, y, 11);
        });
  check("global_avg_pool", {{"x", ru({2, 3, 4, 5})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          return weighted_sum(t, t.global_avg_pool(p.at("x")), 12);
        });
  check("resize_rows", {{"base", ru({3, 4})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          return weighted_sum(t, t.resize_rows(p.at("base"), 7), 13);
        });
  check("group_norm", {{"x", ru({2, 8, 3, 3})}, {"gamma", ru({8})}, {"beta", ru({8})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          Var y = t.group_norm(p.at("x"), 4, p.at("gamma"), p.at("beta"), 1e-5);
          return weighted_sum(t, y, 14);
        });
  check("linear", {{"x", ru({3, 5})}, {"w", ru({4, 5})}, {"b", ru({4})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          return weighted_sum(t, t.linear(p.at("x"), p.at("w"), p.at("b")), 15);
        });
  check("sigmoid_silu_mul", {{"a", ru({2, 3, 2, 2})}, {"b", ru({2, 3, 2, 2})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          Var y = t.mul(t.sigmoid(p.at("a")), t.silu(p.at("b")));
          return weighted_sum(t, t.add(y, p.at("a")), 16);
        });
  check("circular_conv_v", {{"x", ru({2, 3, 5, 4})}, {"k", ru({3, 5})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          Var y = t.circular_conv(p.at("x"), p.at("k"), Orientation::Vertical);
          return weighted_sum(t, y, 17);
        });
  check("circular_conv_h", {{"x", ru({2, 3, 4, 5})}, {"k", ru({3, 5})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          Var y = t.circular_conv(p.at("x"), p.at("k"), Orientation::Horizontal);
          return weighted_sum(t, y, 18);
        });
  check("add_line_embedding", {{"x", ru({2, 3, 4, 5})}, {"pe", ru({3, 4})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          Var y = t.add_line_embedding(p.at("x"), p.at("pe"), Orientation::Vertical);
          return weighted_sum(t, y, 19);
        });
  check("scale_channels", {{"x", ru({2, 3, 4, 4})}, {"gate", ru({2, 3})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          return weighted_sum(t, t.scale_channels(p.at("x"), p.at("gate")), 20);
        });
  check("concat_slice", {{"a", ru({2, 3, 2, 2})}, {"b", ru({2, 5, 2, 2})}}, {},
        [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
          Var y = t.concat({p.at("a"), p.at("b")}, 1);
          return weighted_sum(t, t.slice(y, 1, 1, 6), 21);
        });
  {
    Tensor target = Tensor::from_f64({2, 4}, {0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25});
    check("softmax_cross_entropy", {{"z", ru({2, 4})}}, {target},
          [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>& in) {
            return t.softmax_cross_entropy(p.at("z"), in[0]);
          });
  }
  return result("primitive_gradients", worst, 1e-6);
}

std::map<std::string, Tensor> store_as_map(const ParamStore& store) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : store.entries()) out[name] = t;
  return out;
}

autodiff::LossFn block_loss_fn(const blocks::BlockConfig& cfg, std::uint64_t wseed) {
  return [cfg, wseed](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>& in) {
    blocks::ParamGetter getter = [&p](const std::string& name) { return p.at(name); };
    Var y = blocks::parc_block_forward(t, in[0], cfg, getter, "block");
    return weighted_sum(t, y, wseed);
  };
}

PropertyResult parc_block_grad(std::uint64_t seed) {
  blocks::BlockConfig cfg;
  cfg.channels = 8;
  cfg.l_base_v = 8;
  cfg.l_base_h = 8;
  cfg.use_pe = true;
  cfg.use_channel_attention = true;
  cfg.ca_ratio = 4;
  ParamStore store;
  Rng rng(seed + 23);
  blocks::init_parc_block(store, "block", cfg, rng, Dtype::F64);
  Tensor x = rng.uniform_tensor(Dtype::F64, {4, 8, 8, 8}, -1.0, 1.0);
  // finite-diff vs tape over every block parameter coordinate
  const double err = autodiff::finite_diff_check(block_loss_fn(cfg, 31), store_as_map(store), {x});
  return result("parc_block_grad", err, 1e-4);
}

PropertyResult circular_adjoint(std::uint64_t seed) {
  Rng rng(seed + 29);
  double worst = 0.0;
  for (Orientation orient : {Orientation::Vertical, Orientation::Horizontal}) {
    const std::size_t n = 1, c = 2;
    const std::size_t h = orient == Orientation::Vertical ? 7 : 3;
    const std::size_t w = orient == Orientation::Vertical ? 3 : 7;
    const std::size_t extent = orient == Orientation::Vertical ? h : w;
    Tensor x = rng.uniform_tensor(Dtype::F64, {n, c, h, w}, -1.0, 1.0);
    Tensor k = rng.uniform_tensor(Dtype::F64, {c, extent}, -1.0, 1.0);
    Tensor up = rng.uniform_tensor(Dtype::F64, {n, c, h, w}, -1.0, 1.0);

    Tape tape(true);
    Var xv = tape.leaf(x);
    Var y = tape.circular_conv(xv, tape.constant(k), orient);
    Var loss = tape.sum(tape.mul(y, tape.constant(up)));
    tape.backward(loss);
    Tensor dx = tape.grad(xv);

    // closed form: (dL/dx)_m = sum_t k_t * g_{(m - t) mod n} along the axis
    Tensor expect = Tensor::zeros(Dtype::F64, x.dims());
    auto ks = k.f64();
    auto gs = up.f64();
    auto es = expect.f64_mut();
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t m = orient == Orientation::Vertical ? i : j;
          double acc = 0.0;
          for (std::size_t t = 0; t < extent; ++t) {
            const std::size_t src = (m + extent - t) % extent;
            const std::size_t gi = orient == Orientation::Vertical
                                       ? (ci * h + src) * w + j
                                       : (ci * h + i) * w + src;
            acc += ks[ci * extent + t] * gs[gi];
          }
          es[(ci * h + i) * w + j] = acc;
        }
      }
    }
    worst = std::max(worst, max_rel_err(dx, expect));
  }
  return result("circular_adjoint", worst, 1e-10);
}

ParCParams random_parc_params(Rng& rng, Orientation orient, std::size_t c, std::size_t l_base,
                              bool with_pe) {
  ParCParams p;
  p.orientation = orient;
  p.base_kernel = rng.uniform_tensor(Dtype::F32, {c, l_base}, -1.0, 1.0);
  if (with_pe) p.base_pe = rng.uniform_tensor(Dtype::F32, {c, l_base}, -1.0, 1.0);
  return p;
}

PropertyResult parc_shift_equivariance(std::uint64_t seed, std::size_t trials) {
  Rng rng(seed + 41);
  double worst = 0.0;
  const std::size_t cases = std::max<std::size_t>(1, trials / 10);
  for (std::size_t t = 0; t < cases; ++t) {
    const Orientation orient = rng.uniform_int(2) == 0 ? Orientation::Vertical
                                                       : Orientation::Horizontal;
    const std::size_t extent = 2 + rng.uniform_int(15);
    const std::size_t other = 1 + rng.uniform_int(6);
    const std::size_t c = 1 + rng.uniform_int(3);
    const std::size_t h = orient == Orientation::Vertical ? extent : other;
    const std::size_t w = orient == Orientation::Vertical ? other : extent;
    const std::size_t l_base = 1 + rng.uniform_int(12);
    ParCParams params = random_parc_params(rng, orient, c, l_base, false);
    Tensor x = rng.uniform_tensor(Dtype::F32, {1, c, h, w}, -1.0, 1.0);
    const long long s = 1 + static_cast<long long>(rng.uniform_int(extent));
    const std::size_t axis = orient == Orientation::Vertical ? 2 : 3;
    Tensor lhs = parc_forward(ops::circular_shift(x, axis, s), params, false);
    Tensor rhs = ops::circular_shift(parc_forward(x, params, false), axis, s);
    worst = std::max(worst, max_rel_err(lhs, rhs));
  }
  return result("parc_shift_equivariance", worst, 1e-6);
}

PropertyResult pe_breaks_equivariance(std::uint64_t seed) {
  Rng rng(seed + 43);
  const std::size_t c = 2, h = 8, w = 5;
  ParCParams params = random_parc_params(rng, Orientation::Vertical, c, h, true);
  Tensor x = rng.uniform_tensor(Dtype::F32, {1, c, h, w}, -1.0, 1.0);
  const long long s = 3;
  Tensor lhs = parc_forward(ops::circular_shift(x, 2, s), params, true);
  Tensor rhs = ops::circular_shift(parc_forward(x, params, true), 2, s);
  const double diff = max_abs_diff(lhs, rhs);
  PropertyResult r = result("pe_breaks_equivariance", diff, 1e-3, /*pass_when_below=*/false);
  r.detail = "a non-constant PE must break shift equivariance";
  return r;
}

PropertyResult circtestnet_invariance(std::uint64_t seed, std::size_t trials) {
  // invariance with PE off is structural: it must hold even for O(1) weights
  model::Model m = model::Model::build(model::circtestnet_config(16, false), seed + 47);
  witness_params(m, seed + 48);
  Rng rng(seed + 53);
  double worst = 0.0;
  const std::size_t cases = std::max<std::size_t>(1, std::min<std::size_t>(trials / 100, 8));
  for (std::size_t t = 0; t < cases; ++t) {
    Tensor x = rng.uniform_tensor(Dtype::F32, {2, 1, 16, 16}, -1.0, 1.0);
    const long long dy = 1 + static_cast<long long>(rng.uniform_int(15));
    const long long dx = 1 + static_cast<long long>(rng.uniform_int(15));
    Tensor shifted = ops::circular_shift(ops::circular_shift(x, 2, dy), 3, dx);
    worst = std::max(worst, max_rel_err(m.forward(shifted), m.forward(x)));
  }
  return result("circtestnet_invariance", worst, 1e-4);
}

PropertyResult pe_breaks_model_invariance(std::uint64_t seed) {
  model::Model m = model::Model::build(model::circtestnet_config(16, true), seed + 47);
  witness_params(m, seed + 48);
  Rng rng(seed + 59);
  double diff = 0.0;  // existence: any probe exceeding the bound is a witness
  for (int probe = 0; probe < 4; ++probe) {
    Tensor x = rng.uniform_tensor(Dtype::F32, {1, 1, 16, 16}, -1.0, 1.0);
    const long long dy = 1 + static_cast<long long>(rng.uniform_int(15));
    const long long dx = 1 + static_cast<long long>(rng.uniform_int(15));
    Tensor shifted = ops::circular_shift(ops::circular_shift(x, 2, dy), 3, dx);
    diff = std::max(diff, max_abs_diff(m.forward(shifted), m.forward(x)));
  }
  PropertyResult r = result("pe_breaks_model_invariance", diff, 1e-2, /*pass_when_below=*/false);
  r.detail = "PE must make CircTestNet logits shift-dependent";
  return r;
}

}  // namespace

std::vector<PropertyResult> run_suite(const std::string& suite, std::uint64_t seed,
                                      std::size_t trials) {
  std::vector<PropertyResult> out;
  const bool all = suite == "all";
  if (suite == "oracle" || all) {
    out.push_back(oracle_equivalence(seed, trials));
    out.push_back(oracle_delta_identity(seed, trials));
  }
  if (suite == "grad" || all) {
    out.push_back(primitive_gradients(seed));
    out.push_back(parc_block_grad(seed));
    out.push_back(circular_adjoint(seed));
  }
  if (suite == "shift" || all) {
    out.push_back(parc_shift_equivariance(seed, trials));
    out.push_back(pe_breaks_equivariance(seed));
    out.push_back(circtestnet_invariance(seed, trials));
    out.push_back(pe_breaks_model_invariance(seed));
  }
  if (out.empty()) throw ArgumentError("unknown check suite: " + suite);
  return out;
}

bool all_pass(const std::vector<PropertyResult>& results) {
  for (const PropertyResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace parc::checks
