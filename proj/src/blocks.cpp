#include "parc/blocks.hpp"

#include <cmath>

namespace parc {

void ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ContractError("duplicate parameter: " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].second;
}

void ParamStore::set(const std::string& name, Tensor t) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  entries_[it->second].second = std::move(t);
}

}  // namespace parc

namespace parc::blocks {

namespace {

void add_weight(ParamStore& s, const std::string& name, std::vector<std::size_t> dims, Rng& rng,
                Dtype dt) {
  Tensor t = Tensor::empty(dt, std::move(dims));
  if (dt == Dtype::F64) {
    for (auto& v : t.f64_mut()) v = rng.truncated_normal(0.02);
  } else {
    for (auto& v : t.f32_mut()) v = static_cast<float>(rng.truncated_normal(0.02));
  }
  s.add(name, t);
}

// ParC op initialization. Base kernels start as averaging taps (1/L plus
// noise): the op has its full-line receptive field from step one and passes
// line energy through at O(1). PEs start at 0.25 so the position code is
// visible to the nonlinearities. With 0.02 everywhere the position signal
// reaching global pooling is a product of three near-zero factors and
// gradient descent stalls on a flat plateau.
void add_parc_kernel(ParamStore& s, const std::string& name, std::size_t c, std::size_t l,
                     Rng& rng, Dtype dt) {
  Tensor t = Tensor::empty(dt, {c, l});
  const double mean = 1.0 / static_cast<double>(l);
  if (dt == Dtype::F64) {
    for (auto& v : t.f64_mut()) v = mean + rng.truncated_normal(0.02);
  } else {
    for (auto& v : t.f32_mut()) v = static_cast<float>(mean + rng.truncated_normal(0.02));
  }
  s.add(name, t);
}

// Position embeddings start as per-channel sinusoids (rising frequency,
// alternating sin/cos phase) plus noise, so absolute position is linearly
// decodable from the first step for any seed.
void add_parc_pe(ParamStore& s, const std::string& name, std::size_t c, std::size_t l, Rng& rng,
                 Dtype dt) {
  Tensor t = Tensor::empty(dt, {c, l});
  auto code = [&](std::size_t ci, std::size_t i) {
    const double freq = 1.0 + static_cast<double>(ci / 2);
    const double phase = static_cast<double>(ci % 2) * 1.5707963267948966;
    const double angle = 2.0 * 3.14159265358979323846 * freq * static_cast<double>(i) /
                         static_cast<double>(l);
    return 0.5 * std::sin(angle + phase) + rng.truncated_normal(0.02);
  };
  if (dt == Dtype::F64) {
    auto sp = t.f64_mut();
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t i = 0; i < l; ++i) sp[ci * l + i] = code(ci, i);
    }
  } else {
    auto sp = t.f32_mut();
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t i = 0; i < l; ++i) sp[ci * l + i] = static_cast<float>(code(ci, i));
    }
  }
  s.add(name, t);
}

void add_norm(ParamStore& s, const std::string& prefix, std::size_t channels, Dtype dt) {
  if (channels % kNormGroups != 0) {
    throw ConfigError("group norm at " + prefix + ": channels " + std::to_string(channels) +
                      " not divisible by " + std::to_string(kNormGroups) + " groups");
  }
  s.add(prefix + ".gamma", Tensor::full(dt, {channels}, 1.0));
  s.add(prefix + ".beta", Tensor::zeros(dt, {channels}));
}

void add_bias(ParamStore& s, const std::string& name, std::size_t n, Dtype dt) {
  s.add(name, Tensor::zeros(dt, {n}));
}

Var gn(Tape& t, Var x, const ParamGetter& p, const std::string& prefix) {
  return t.group_norm(x, kNormGroups, p(prefix + ".gamma"), p(prefix + ".beta"), kNormEps);
}

}  // namespace

void init_parc_block(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                     Rng& rng, Dtype dt) {
  const std::size_t c = cfg.channels;
  if (c < 2) throw ConfigError("parc block at " + prefix + ": needs at least 2 channels");
  if (cfg.l_base_v == 0 || cfg.l_base_h == 0) {
    throw ConfigError("parc block at " + prefix + ": base kernel length must be >= 1");
  }
  if (cfg.use_channel_attention && c % cfg.ca_ratio != 0) {
    throw ConfigError("parc block at " + prefix + ": channels " + std::to_string(c) +
                      " not divisible by channel-attention ratio " + std::to_string(cfg.ca_ratio));
  }
  if (cfg.use_metaformer) add_norm(store, prefix + ".norm1", c, dt);
  add_parc_kernel(store, prefix + ".parc_v.kernel", cfg.channels_v(), cfg.l_base_v, rng, dt);
  if (cfg.use_pe) add_parc_pe(store, prefix + ".parc_v.pe", cfg.channels_v(), cfg.l_base_v, rng, dt);
  add_parc_kernel(store, prefix + ".parc_h.kernel", cfg.channels_h(), cfg.l_base_h, rng, dt);
  if (cfg.use_pe) add_parc_pe(store, prefix + ".parc_h.pe", cfg.channels_h(), cfg.l_base_h, rng, dt);
  add_weight(store, prefix + ".spatial_pw.weight", {c, c, 1, 1}, rng, dt);
  add_bias(store, prefix + ".spatial_pw.bias", c, dt);
  if (cfg.use_metaformer) add_norm(store, prefix + ".norm2", c, dt);
  add_weight(store, prefix + ".mix1.weight", {c, c, 1, 1}, rng, dt);
  add_bias(store, prefix + ".mix1.bias", c, dt);
  if (cfg.use_channel_attention) {
    const std::size_t hidden = c / cfg.ca_ratio;
    add_weight(store, prefix + ".ca.w1", {hidden, c}, rng, dt);
    add_bias(store, prefix + ".ca.b1", hidden, dt);
    add_weight(store, prefix + ".ca.w2", {c, hidden}, rng, dt);
    add_bias(store, prefix + ".ca.b2", c, dt);
  }
  add_weight(store, prefix + ".mix2.weight", {c, c, 1, 1}, rng, dt);
  add_bias(store, prefix + ".mix2.bias", c, dt);
}

void init_inverted_residual(ParamStore& store, const std::string& prefix, const InvResConfig& cfg,
                            Rng& rng, Dtype dt) {
  if (cfg.expansion < 1) throw ConfigError("inverted residual at " + prefix + ": expansion must be >= 1");
  const std::size_t hidden = cfg.hidden();
  add_weight(store, prefix + ".expand.weight", {hidden, cfg.in_channels, 1, 1}, rng, dt);
  add_norm(store, prefix + ".expand_norm", hidden, dt);
  add_weight(store, prefix + ".dw.weight", {hidden, 1, 3, 3}, rng, dt);
  add_norm(store, prefix + ".dw_norm", hidden, dt);
  add_weight(store, prefix + ".project.weight", {cfg.out_channels, hidden, 1, 1}, rng, dt);
  add_norm(store, prefix + ".project_norm", cfg.out_channels, dt);
}

void init_fusion(ParamStore& store, const std::string& prefix, const FusionConfig& cfg, Rng& rng,
                 Dtype dt) {
  if (cfg.groups == 0 || cfg.concat_channels % cfg.groups != 0) {
    throw ConfigError("fusion at " + prefix + ": concatenated channels " +
                      std::to_string(cfg.concat_channels) + " not divisible by groups " +
                      std::to_string(cfg.groups));
  }
  add_weight(store, prefix + ".fuse_grouped.weight",
             {cfg.concat_channels, cfg.concat_channels / cfg.groups, 3, 3}, rng, dt);
  add_norm(store, prefix + ".fuse_grouped_norm", cfg.concat_channels, dt);
  add_weight(store, prefix + ".fuse_pw.weight", {cfg.out_channels, cfg.concat_channels, 1, 1}, rng,
             dt);
  add_norm(store, prefix + ".fuse_pw_norm", cfg.out_channels, dt);
}

Var channel_attention(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2) {
  const Tensor& xv = t.value(x);
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  Var pooled = t.reshape(t.global_avg_pool(x), {n, c});
  Var h = t.silu(t.linear(pooled, w1, b1));
  Var gate = t.sigmoid(t.linear(h, w2, b2));
  return t.scale_channels(x, gate);
}

namespace {

// split -> ParC-V | ParC-H -> concat -> pointwise mix
Var spatial_mixer(Tape& t, Var z, const BlockConfig& cfg, const ParamGetter& p,
                  const std::string& prefix) {
  const Tensor& zv = t.value(z);
  const std::size_t h = zv.dim(2), w = zv.dim(3);
  Var zv_half = t.slice(z, 1, 0, cfg.channels_v());
  Var zh_half = t.slice(z, 1, cfg.channels_v(), cfg.channels_h());

  Var kv = t.resize_rows(p(prefix + ".parc_v.kernel"), h);
  if (cfg.use_pe) {
    Var pev = t.resize_rows(p(prefix + ".parc_v.pe"), h);
    zv_half = t.add_line_embedding(zv_half, pev, Orientation::Vertical);
  }
  Var v = t.circular_conv(zv_half, kv, Orientation::Vertical);

  Var kh = t.resize_rows(p(prefix + ".parc_h.kernel"), w);
  if (cfg.use_pe) {
    Var peh = t.resize_rows(p(prefix + ".parc_h.pe"), w);
    zh_half = t.add_line_embedding(zh_half, peh, Orientation::Horizontal);
  }
  Var hh = t.circular_conv(zh_half, kh, Orientation::Horizontal);

  Var mixed = t.concat({v, hh}, 1);
  return t.conv2d(mixed, p(prefix + ".spatial_pw.weight"), p(prefix + ".spatial_pw.bias"), {1, 1},
                  {0, 0}, 1);
}

Var channel_mixer(Tape& t, Var z, const BlockConfig& cfg, const ParamGetter& p,
                  const std::string& prefix) {
  Var h = t.silu(t.conv2d(z, p(prefix + ".mix1.weight"), p(prefix + ".mix1.bias"), {1, 1}, {0, 0}, 1));
  if (cfg.use_channel_attention) {
    h = channel_attention(t, h, p(prefix + ".ca.w1"), p(prefix + ".ca.b1"), p(prefix + ".ca.w2"),
                          p(prefix + ".ca.b2"));
  }
  return t.conv2d(h, p(prefix + ".mix2.weight"), p(prefix + ".mix2.bias"), {1, 1}, {0, 0}, 1);
}

}  // namespace

Var parc_block_forward(Tape& t, Var x, const BlockConfig& cfg, const ParamGetter& p,
                       const std::string& prefix) {
  const Tensor& xv = t.value(x);
  if (xv.dim(1) != cfg.channels) {
    throw ShapeError("parc block " + prefix + ": input channels (axis 1) " +
                     std::to_string(xv.dim(1)) + " != configured " + std::to_string(cfg.channels));
  }
  if (!cfg.use_metaformer) {
    Var s = spatial_mixer(t, x, cfg, p, prefix);
    return channel_mixer(t, s, cfg, p, prefix);
  }
  Var u = t.add(x, spatial_mixer(t, gn(t, x, p, prefix + ".norm1"), cfg, p, prefix));
  return t.add(u, channel_mixer(t, gn(t, u, p, prefix + ".norm2"), cfg, p, prefix));
}

Var inverted_residual_forward(Tape& t, Var x, const InvResConfig& cfg, const ParamGetter& p,
                              const std::string& prefix) {
  Var h = t.conv2d(x, p(prefix + ".expand.weight"), std::nullopt, {1, 1}, {0, 0}, 1);
  h = t.silu(gn(t, h, p, prefix + ".expand_norm"));
  h = t.conv2d(h, p(prefix + ".dw.weight"), std::nullopt, {cfg.stride, cfg.stride}, {1, 1},
               cfg.hidden());
  h = t.silu(gn(t, h, p, prefix + ".dw_norm"));
  h = t.conv2d(h, p(prefix + ".project.weight"), std::nullopt, {1, 1}, {0, 0}, 1);
  h = gn(t, h, p, prefix + ".project_norm");
  if (cfg.stride == 1 && cfg.in_channels == cfg.out_channels) {
    h = t.add(h, x);
  }
  return h;
}

void init_local_branch(ParamStore& store, const std::string& prefix, std::size_t in_channels,
                       std::size_t out_channels, Rng& rng, Dtype dt) {
  add_weight(store, prefix + ".dw.weight", {in_channels, 1, 3, 3}, rng, dt);
  add_norm(store, prefix + ".dw_norm", in_channels, dt);
  add_weight(store, prefix + ".pw.weight", {out_channels, in_channels, 1, 1}, rng, dt);
  add_norm(store, prefix + ".pw_norm", out_channels, dt);
}

Var local_branch_forward(Tape& t, Var x, std::size_t stride, const ParamGetter& p,
                         const std::string& prefix) {
  const std::size_t c = t.value(x).dim(1);
  Var h = t.conv2d(x, p(prefix + ".dw.weight"), std::nullopt, {stride, stride}, {1, 1}, c);
  h = t.silu(gn(t, h, p, prefix + ".dw_norm"));
  h = t.conv2d(h, p(prefix + ".pw.weight"), std::nullopt, {1, 1}, {0, 0}, 1);
  return t.silu(gn(t, h, p, prefix + ".pw_norm"));
}

Var fusion_forward(Tape& t, Var local, Var global_feat, const FusionConfig& cfg,
                   const ParamGetter& p, const std::string& prefix) {
  const Tensor& lv = t.value(local);
  const Tensor& gv = t.value(global_feat);
  for (std::size_t a : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
    if (lv.dim(a) != gv.dim(a)) {
      throw ShapeError("fusion " + prefix + ": local/global mismatch on axis " + std::to_string(a));
    }
  }
  if (lv.dim(1) + gv.dim(1) != cfg.concat_channels) {
    throw ShapeError("fusion " + prefix + ": concatenated channels " +
                     std::to_string(lv.dim(1) + gv.dim(1)) + " != configured " +
                     std::to_string(cfg.concat_channels));
  }
  Var z = t.concat({local, global_feat}, 1);
  z = t.conv2d(z, p(prefix + ".fuse_grouped.weight"), std::nullopt, {1, 1}, {1, 1}, cfg.groups);
  z = t.silu(gn(t, z, p, prefix + ".fuse_grouped_norm"));
  z = t.conv2d(z, p(prefix + ".fuse_pw.weight"), std::nullopt, {1, 1}, {0, 0}, 1);
  return gn(t, z, p, prefix + ".fuse_pw_norm");
}

}  // namespace parc::blocks
