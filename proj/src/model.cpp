#include "parc/model.hpp"

#include <chrono>
#include <set>

#include <json.hpp>

#include "parc/serialize.hpp"

namespace parc::model {

using json = nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key in " + where + ": " + key);
    }
  }
}

std::size_t get_size(const json& obj, const char* key, std::size_t fallback, bool required,
                     const std::string& where) {
  if (!obj.contains(key)) {
    if (required) throw ConfigError("missing key in " + where + ": " + std::string(key));
    return fallback;
  }
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) {
    throw ConfigError("key " + std::string(key) + " in " + where +
                      " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

ModelConfig config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");
  reject_unknown_keys(root, {"input_resolution", "in_channels", "num_classes", "stem", "stages",
                             "head"},
                      "config");

  ModelConfig cfg;
  if (root.contains("input_resolution")) {
    const json& r = root.at("input_resolution");
    if (!r.is_array() || r.size() != 2) {
      throw ConfigError("input_resolution must be [H, W]");
    }
    cfg.input_h = r.at(0).get<std::size_t>();
    cfg.input_w = r.at(1).get<std::size_t>();
  }
  cfg.in_channels = get_size(root, "in_channels", 3, false, "config");
  cfg.num_classes = get_size(root, "num_classes", 0, true, "config");

  if (!root.contains("stem")) throw ConfigError("missing key in config: stem");
  const json& stem = root.at("stem");
  reject_unknown_keys(stem, {"kind", "out_channels", "stride"}, "stem");
  cfg.stem.kind = stem.value("kind", std::string("conv3x3"));
  cfg.stem.out_channels = get_size(stem, "out_channels", 0, true, "stem");
  cfg.stem.stride = get_size(stem, "stride", 1, false, "stem");

  if (!root.contains("stages")) throw ConfigError("missing key in config: stages");
  const json& stages = root.at("stages");
  if (!stages.is_array()) throw ConfigError("stages must be an array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const json& s = stages.at(i);
    const std::string where = "stage " + std::to_string(i);
    StageSpec spec;
    if (!s.contains("kind")) throw ConfigError("missing key in " + where + ": kind");
    spec.kind = s.at("kind").get<std::string>();
    if (spec.kind == "local") {
      reject_unknown_keys(s, {"kind", "out_channels", "depth", "stride", "expansion"}, where);
      spec.expansion = get_size(s, "expansion", 4, false, where);
    } else if (spec.kind == "parc") {
      reject_unknown_keys(s,
                          {"kind", "out_channels", "depth", "stride", "l_base", "use_pe",
                           "use_channel_attention", "fusion_groups", "ca_ratio", "use_metaformer"},
                          where);
      spec.l_base = get_size(s, "l_base", 0, false, where);
      spec.use_pe = s.value("use_pe", true);
      spec.use_channel_attention = s.value("use_channel_attention", true);
      spec.fusion_groups = get_size(s, "fusion_groups", 4, false, where);
      spec.ca_ratio = get_size(s, "ca_ratio", 4, false, where);
      spec.use_metaformer = s.value("use_metaformer", true);
    } else {
      throw ConfigError(where + ": kind must be \"local\" or \"parc\"");
    }
    spec.out_channels = get_size(s, "out_channels", 0, true, where);
    spec.depth = get_size(s, "depth", 0, true, where);
    spec.stride = get_size(s, "stride", 1, false, where);
    cfg.stages.push_back(spec);
  }

  if (root.contains("head")) {
    const json& head = root.at("head");
    reject_unknown_keys(head, {"pool"}, "head");
    cfg.head_pool = head.value("pool", std::string("avg"));
  }
  return cfg;
}

std::string config_to_json_text(const ModelConfig& cfg) {
  json root;
  root["input_resolution"] = {cfg.input_h, cfg.input_w};
  root["in_channels"] = cfg.in_channels;
  root["num_classes"] = cfg.num_classes;
  root["stem"] = {{"kind", cfg.stem.kind},
                  {"out_channels", cfg.stem.out_channels},
                  {"stride", cfg.stem.stride}};
  root["stages"] = json::array();
  for (const StageSpec& s : cfg.stages) {
    json j = {{"kind", s.kind},
              {"out_channels", s.out_channels},
              {"depth", s.depth},
              {"stride", s.stride}};
    if (s.kind == "local") {
      j["expansion"] = s.expansion;
    } else {
      j["l_base"] = s.l_base;
      j["use_pe"] = s.use_pe;
      j["use_channel_attention"] = s.use_channel_attention;
      j["fusion_groups"] = s.fusion_groups;
      j["ca_ratio"] = s.ca_ratio;
      j["use_metaformer"] = s.use_metaformer;
    }
    root["stages"].push_back(j);
  }
  root["head"] = {{"pool", cfg.head_pool}};
  return root.dump(2);
}

namespace {

// out extent of a stride-s conv that preserves extent at s=1
// (3x3 pad 1 and 1x1 pad 0 share the formula)
std::size_t strided_extent(std::size_t e, std::size_t s) { return (e - 1) / s + 1; }

void validate(const ModelConfig& cfg) {
  if (cfg.input_h == 0 || cfg.input_w == 0) throw ConfigError("input_resolution must be positive");
  if (cfg.in_channels == 0) throw ConfigError("in_channels must be >= 1");
  if (cfg.num_classes == 0) throw ConfigError("num_classes must be >= 1");
  if (cfg.stem.kind != "conv3x3" && cfg.stem.kind != "pointwise") {
    throw ConfigError("stem.kind must be \"conv3x3\" or \"pointwise\"");
  }
  if (cfg.stem.out_channels == 0) throw ConfigError("stem.out_channels must be >= 1");
  if (cfg.stem.stride == 0) throw ConfigError("stem.stride must be >= 1");
  if (cfg.head_pool != "avg") throw ConfigError("head.pool: only \"avg\" is supported");

  bool saw_local = false;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& s = cfg.stages[i];
    const std::string where = "stage " + std::to_string(i);
    if (s.depth == 0) throw ConfigError(where + ": depth must be >= 1");
    if (s.out_channels == 0) throw ConfigError(where + ": out_channels must be >= 1");
    if (s.stride == 0) throw ConfigError(where + ": stride must be >= 1");
    if (s.kind == "local") {
      if (s.expansion == 0) throw ConfigError(where + ": expansion must be >= 1");
      saw_local = true;
    } else if (s.kind == "parc") {
      if (s.out_channels < 2) throw ConfigError(where + ": parc stage needs >= 2 channels");
      if (s.fusion_groups > 0 && !saw_local) {
        throw ConfigError(where + ": a fusion-wrapped parc stage requires a preceding local stage");
      }
    } else {
      throw ConfigError(where + ": unknown stage kind " + s.kind);
    }
  }
}

}  // namespace

std::vector<StageGeometry> resolve_geometry(const ModelConfig& cfg) {
  validate(cfg);
  std::vector<StageGeometry> out;
  std::size_t c = cfg.stem.out_channels;
  std::size_t h = strided_extent(cfg.input_h, cfg.stem.stride);
  std::size_t w = strided_extent(cfg.input_w, cfg.stem.stride);
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& s = cfg.stages[i];
    StageGeometry g;
    g.in_channels = c;
    g.out_channels = s.out_channels;
    g.in_h = h;
    g.in_w = w;
    g.out_h = strided_extent(h, s.stride);
    g.out_w = strided_extent(w, s.stride);
    g.l_base_v = s.l_base != 0 ? s.l_base : g.out_h;
    g.l_base_h = s.l_base != 0 ? s.l_base : g.out_w;
    if (s.kind == "parc" && s.fusion_groups == 0) {
      if (s.stride != 1 || g.in_channels != s.out_channels) {
        throw ConfigError("stage " + std::to_string(i) +
                          ": a bare parc stage (fusion_groups=0) requires stride 1 and matching "
                          "channel counts");
      }
    }
    out.push_back(g);
    c = s.out_channels;
    h = g.out_h;
    w = g.out_w;
  }
  return out;
}

namespace {

blocks::BlockConfig block_config(const StageSpec& s, const StageGeometry& g) {
  blocks::BlockConfig bc;
  bc.channels = s.out_channels;
  bc.l_base_v = g.l_base_v;
  bc.l_base_h = g.l_base_h;
  bc.use_pe = s.use_pe;
  bc.use_channel_attention = s.use_channel_attention;
  bc.use_metaformer = s.use_metaformer;
  bc.ca_ratio = s.ca_ratio;
  return bc;
}

std::string stage_prefix(std::size_t i) { return "stage" + std::to_string(i); }

}  // namespace

Model Model::build(const ModelConfig& cfg, std::uint64_t seed, Dtype dt) {
  std::vector<StageGeometry> geo = resolve_geometry(cfg);
  Rng rng(seed);
  ParamStore store;

  const std::size_t stem_k = cfg.stem.kind == "conv3x3" ? 3 : 1;
  {
    Tensor wt = Tensor::empty(dt, {cfg.stem.out_channels, cfg.in_channels, stem_k, stem_k});
    if (dt == Dtype::F64) {
      for (auto& v : wt.f64_mut()) v = rng.truncated_normal(0.02);
    } else {
      for (auto& v : wt.f32_mut()) v = static_cast<float>(rng.truncated_normal(0.02));
    }
    store.add("stem.conv.weight", wt);
    if (cfg.stem.out_channels % blocks::kNormGroups != 0) {
      throw ConfigError("stem.out_channels " + std::to_string(cfg.stem.out_channels) +
                        " not divisible by " + std::to_string(blocks::kNormGroups) + " groups");
    }
    store.add("stem.norm.gamma", Tensor::full(dt, {cfg.stem.out_channels}, 1.0));
    store.add("stem.norm.beta", Tensor::zeros(dt, {cfg.stem.out_channels}));
  }

  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& s = cfg.stages[i];
    const StageGeometry& g = geo[i];
    const std::string prefix = stage_prefix(i);
    if (s.kind == "local") {
      for (std::size_t j = 0; j < s.depth; ++j) {
        blocks::InvResConfig rc;
        rc.in_channels = j == 0 ? g.in_channels : s.out_channels;
        rc.out_channels = s.out_channels;
        rc.stride = j == 0 ? s.stride : 1;
        rc.expansion = s.expansion;
        blocks::init_inverted_residual(store, prefix + ".block" + std::to_string(j), rc, rng, dt);
      }
    } else {
      if (s.fusion_groups > 0) {
        blocks::init_local_branch(store, prefix + ".local", g.in_channels, s.out_channels, rng, dt);
      }
      for (std::size_t j = 0; j < s.depth; ++j) {
        blocks::init_parc_block(store, prefix + ".block" + std::to_string(j), block_config(s, g),
                                rng, dt);
      }
      if (s.fusion_groups > 0) {
        blocks::FusionConfig fc;
        fc.concat_channels = 2 * s.out_channels;
        fc.out_channels = s.out_channels;
        fc.groups = s.fusion_groups;
        blocks::init_fusion(store, prefix + ".fusion", fc, rng, dt);
      }
    }
  }

  const std::size_t c_last = cfg.stages.empty() ? cfg.stem.out_channels : cfg.stages.back().out_channels;
  {
    Tensor wt = Tensor::empty(dt, {cfg.num_classes, c_last});
    if (dt == Dtype::F64) {
      for (auto& v : wt.f64_mut()) v = rng.truncated_normal(0.02);
    } else {
      for (auto& v : wt.f32_mut()) v = static_cast<float>(rng.truncated_normal(0.02));
    }
    store.add("head.linear.weight", wt);
    store.add("head.linear.bias", Tensor::zeros(dt, {cfg.num_classes}));
  }

  Model m;
  m.config_ = cfg;
  m.store_ = std::move(store);
  m.geometry_ = std::move(geo);
  m.dtype_ = dt;
  return m;
}

Model Model::from_store(const ModelConfig& cfg, ParamStore store) {
  if (store.size() == 0) throw ContractError("from_store: empty parameter store");
  const Dtype dt = store.entries().front().second.dtype();
  Model ref = build(cfg, 0, dt);
  const auto& expected = ref.store_.entries();
  if (expected.size() != store.size()) {
    throw FormatError("parameter store has " + std::to_string(store.size()) + " tensors, model needs " +
                      std::to_string(expected.size()));
  }
  for (const auto& [name, t] : expected) {
    if (!store.has(name)) throw FormatError("missing parameter tensor: " + name);
    const Tensor& got = store.get(name);
    if (got.dims() != t.dims()) {
      throw FormatError("parameter " + name + " has shape " + got.shape_str() + ", expected " +
                        t.shape_str());
    }
    if (got.dtype() != dt) throw FormatError("parameter " + name + " has mixed dtype");
  }
  Model m;
  m.config_ = cfg;
  m.store_ = std::move(store);
  m.geometry_ = resolve_geometry(cfg);
  m.dtype_ = dt;
  return m;
}

blocks::ParamGetter Model::bind(autodiff::Tape& tape) const {
  auto bound = std::make_shared<std::unordered_map<std::string, autodiff::Var>>();
  for (const auto& [name, t] : store_.entries()) {
    (*bound)[name] = tape.param(name, t);
  }
  return [bound](const std::string& name) {
    auto it = bound->find(name);
    if (it == bound->end()) throw ContractError("unbound parameter: " + name);
    return it->second;
  };
}

autodiff::Var Model::run_stem(autodiff::Tape& tape, autodiff::Var x,
                              const blocks::ParamGetter& p) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != config_.in_channels) {
    throw ShapeError("forward: expected N x " + std::to_string(config_.in_channels) +
                     " x H x W input, got " + xv.shape_str());
  }
  const std::size_t pad = config_.stem.kind == "conv3x3" ? 1 : 0;
  autodiff::Var h = tape.conv2d(x, p("stem.conv.weight"), std::nullopt,
                                {config_.stem.stride, config_.stem.stride}, {pad, pad}, 1);
  return tape.silu(tape.group_norm(h, blocks::kNormGroups, p("stem.norm.gamma"),
                                   p("stem.norm.beta"), blocks::kNormEps));
}

autodiff::Var Model::run_stage(autodiff::Tape& tape, std::size_t i, autodiff::Var x,
                               const blocks::ParamGetter& p) const {
  const StageSpec& s = config_.stages[i];
  const std::string prefix = stage_prefix(i);
  if (s.kind == "local") {
    autodiff::Var h = x;
    for (std::size_t j = 0; j < s.depth; ++j) {
      blocks::InvResConfig rc;
      rc.in_channels = tape.value(h).dim(1);
      rc.out_channels = s.out_channels;
      rc.stride = j == 0 ? s.stride : 1;
      rc.expansion = s.expansion;
      h = blocks::inverted_residual_forward(tape, h, rc, p, prefix + ".block" + std::to_string(j));
    }
    return h;
  }
  blocks::BlockConfig bc = block_config(s, geometry_[i]);
  autodiff::Var local = x;
  if (s.fusion_groups > 0) {
    local = blocks::local_branch_forward(tape, x, s.stride, p, prefix + ".local");
  }
  autodiff::Var g = local;
  for (std::size_t j = 0; j < s.depth; ++j) {
    g = blocks::parc_block_forward(tape, g, bc, p, prefix + ".block" + std::to_string(j));
  }
  if (s.fusion_groups == 0) return g;
  blocks::FusionConfig fc;
  fc.concat_channels = 2 * s.out_channels;
  fc.out_channels = s.out_channels;
  fc.groups = s.fusion_groups;
  return blocks::fusion_forward(tape, local, g, fc, p, prefix + ".fusion");
}

autodiff::Var Model::run_head(autodiff::Tape& tape, autodiff::Var x,
                              const blocks::ParamGetter& p) const {
  const Tensor& hv = tape.value(x);
  autodiff::Var pooled = tape.reshape(tape.global_avg_pool(x), {hv.dim(0), hv.dim(1)});
  return tape.linear(pooled, p("head.linear.weight"), p("head.linear.bias"));
}

autodiff::Var Model::forward_with(autodiff::Tape& tape, autodiff::Var x,
                                  const blocks::ParamGetter& p) const {
  autodiff::Var h = run_stem(tape, x, p);
  for (std::size_t i = 0; i < config_.stages.size(); ++i) h = run_stage(tape, i, h, p);
  return run_head(tape, h, p);
}

Tensor Model::forward(const Tensor& x) const {
  autodiff::Tape tape(false);
  blocks::ParamGetter p = bind(tape);
  autodiff::Var out = forward_with(tape, tape.constant(x), p);
  return tape.value(out);
}

std::vector<std::string> Model::segment_names() const {
  std::vector<std::string> names{"stem"};
  for (std::size_t i = 0; i < config_.stages.size(); ++i) names.push_back(stage_prefix(i));
  names.push_back("head");
  return names;
}

Tensor Model::forward_timed(const Tensor& x,
                            std::vector<std::pair<std::string, double>>& segment_ns) const {
  segment_ns.clear();
  autodiff::Tape tape(false);
  blocks::ParamGetter p = bind(tape);
  using clock = std::chrono::steady_clock;

  autodiff::Var h = tape.constant(x);
  auto timed = [&](const std::string& name, auto&& fn) {
    const auto t0 = clock::now();
    h = fn(h);
    const auto t1 = clock::now();
    segment_ns.emplace_back(name, std::chrono::duration<double, std::nano>(t1 - t0).count());
  };

  timed("stem", [&](autodiff::Var v) { return run_stem(tape, v, p); });
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    timed(stage_prefix(i), [&](autodiff::Var v) { return run_stage(tape, i, v, p); });
  }
  timed("head", [&](autodiff::Var v) { return run_head(tape, v, p); });
  return tape.value(h);
}

namespace {

std::uint64_t parc_block_params(const StageSpec& s, const StageGeometry& g) {
  const std::uint64_t c = s.out_channels;
  const std::uint64_t cv = c / 2, ch = c - c / 2;
  std::uint64_t total = 0;
  if (s.use_metaformer) total += 2 * c;  // norm1
  total += cv * g.l_base_v + ch * g.l_base_h;                      // kernels
  if (s.use_pe) total += cv * g.l_base_v + ch * g.l_base_h;        // PEs
  total += c * c + c;                                              // spatial pw + bias
  if (s.use_metaformer) total += 2 * c;                            // norm2
  total += c * c + c;                                              // mix1 + bias
  if (s.use_channel_attention) total += 2 * c * c / s.ca_ratio + c / s.ca_ratio + c;
  total += c * c + c;                                              // mix2 + bias
  return total;
}

}  // namespace

std::uint64_t count_params(const ModelConfig& cfg) {
  std::vector<StageGeometry> geo = resolve_geometry(cfg);
  const std::uint64_t stem_k = cfg.stem.kind == "conv3x3" ? 3 : 1;
  std::uint64_t total = cfg.stem.out_channels * cfg.in_channels * stem_k * stem_k +
                        2 * cfg.stem.out_channels;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& s = cfg.stages[i];
    const StageGeometry& g = geo[i];
    if (s.kind == "local") {
      for (std::size_t j = 0; j < s.depth; ++j) {
        const std::uint64_t in_c = j == 0 ? g.in_channels : s.out_channels;
        const std::uint64_t hidden = in_c * s.expansion;
        total += hidden * in_c + 2 * hidden;            // expand + norm
        total += hidden * 9 + 2 * hidden;               // dw 3x3 + norm
        total += s.out_channels * hidden + 2 * s.out_channels;  // project + norm
      }
    } else {
      const std::uint64_t c = s.out_channels;
      if (s.fusion_groups > 0) {
        total += g.in_channels * 9 + 2 * g.in_channels;  // local dw + norm
        total += c * g.in_channels + 2 * c;              // local pw + norm
      }
      for (std::size_t j = 0; j < s.depth; ++j) total += parc_block_params(s, g);
      if (s.fusion_groups > 0) {
        const std::uint64_t cc = 2 * c;
        total += cc * (cc / s.fusion_groups) * 9 + 2 * cc;  // grouped 3x3 + norm
        total += c * cc + 2 * c;                            // fuse pw + norm
      }
    }
  }
  const std::uint64_t c_last =
      cfg.stages.empty() ? cfg.stem.out_channels : cfg.stages.back().out_channels;
  total += cfg.num_classes * c_last + cfg.num_classes;  // head linear + bias
  return total;
}

std::uint64_t count_params(const Model& m) { return count_params(m.config()); }

std::uint64_t parc_op_macs(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                           std::size_t extent) {
  return static_cast<std::uint64_t>(n) * c * h * w * extent;
}

std::vector<LayerStat> flop_breakdown(const ModelConfig& cfg, std::size_t n, std::size_t h,
                                      std::size_t w) {
  validate(cfg);
  std::vector<LayerStat> out;
  auto emit = [&](const std::string& seg, const std::string& layer, std::uint64_t macs) {
    out.push_back({seg, layer, macs});
  };

  const std::uint64_t stem_k = cfg.stem.kind == "conv3x3" ? 3 : 1;
  std::size_t ch = strided_extent(h, cfg.stem.stride);
  std::size_t cw = strided_extent(w, cfg.stem.stride);
  std::size_t c = cfg.stem.out_channels;
  emit("stem", "conv",
       static_cast<std::uint64_t>(n) * c * ch * cw * cfg.in_channels * stem_k * stem_k);

  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& s = cfg.stages[i];
    const std::string seg = stage_prefix(i);
    const std::size_t oh = strided_extent(ch, s.stride);
    const std::size_t ow = strided_extent(cw, s.stride);
    if (s.kind == "local") {
      std::size_t in_c = c;
      for (std::size_t j = 0; j < s.depth; ++j) {
        const std::size_t bh = j == 0 ? ch : oh, bw = j == 0 ? cw : ow;
        const std::uint64_t hidden = in_c * s.expansion;
        const std::string b = "block" + std::to_string(j);
        emit(seg, b + ".expand", static_cast<std::uint64_t>(n) * hidden * bh * bw * in_c);
        emit(seg, b + ".dw", static_cast<std::uint64_t>(n) * hidden * oh * ow * 9);
        emit(seg, b + ".project", static_cast<std::uint64_t>(n) * s.out_channels * oh * ow * hidden);
        in_c = s.out_channels;
      }
    } else {
      const std::uint64_t sc = s.out_channels;
      const std::uint64_t cv = sc / 2, cch = sc - sc / 2;
      if (s.fusion_groups > 0) {
        emit(seg, "local.dw", static_cast<std::uint64_t>(n) * c * oh * ow * 9);
        emit(seg, "local.pw", static_cast<std::uint64_t>(n) * sc * oh * ow * c);
      }
      for (std::size_t j = 0; j < s.depth; ++j) {
        const std::string b = "block" + std::to_string(j);
        emit(seg, b + ".parc_v", parc_op_macs(n, cv, oh, ow, oh));
        emit(seg, b + ".parc_h", parc_op_macs(n, cch, oh, ow, ow));
        emit(seg, b + ".spatial_pw", static_cast<std::uint64_t>(n) * sc * sc * oh * ow);
        emit(seg, b + ".mix1", static_cast<std::uint64_t>(n) * sc * sc * oh * ow);
        if (s.use_channel_attention) {
          emit(seg, b + ".ca", static_cast<std::uint64_t>(n) * 2 * sc * sc / s.ca_ratio);
        }
        emit(seg, b + ".mix2", static_cast<std::uint64_t>(n) * sc * sc * oh * ow);
      }
      if (s.fusion_groups > 0) {
        const std::uint64_t cc = 2 * sc;
        emit(seg, "fusion.grouped",
             static_cast<std::uint64_t>(n) * cc * oh * ow * (cc / s.fusion_groups) * 9);
        emit(seg, "fusion.pw", static_cast<std::uint64_t>(n) * sc * oh * ow * cc);
      }
    }
    c = s.out_channels;
    ch = oh;
    cw = ow;
  }
  emit("head", "linear", static_cast<std::uint64_t>(n) * c * cfg.num_classes);
  return out;
}

std::uint64_t count_flops(const ModelConfig& cfg, std::size_t n, std::size_t h, std::size_t w) {
  std::uint64_t total = 0;
  for (const LayerStat& ls : flop_breakdown(cfg, n, h, w)) total += ls.macs;
  return total;
}

namespace {

Tensor string_to_u32_tensor(const std::string& s) {
  std::vector<std::uint32_t> bytes(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) bytes[i] = static_cast<unsigned char>(s[i]);
  return Tensor::from_u32({s.size()}, std::move(bytes));
}

std::string u32_tensor_to_string(const Tensor& t) {
  std::string s(t.size(), '\0');
  auto v = t.u32();
  for (std::size_t i = 0; i < v.size(); ++i) s[i] = static_cast<char>(v[i] & 0xff);
  return s;
}

void append_section(io::CheckpointFile& file, const std::string& prefix, const ParamStore& store) {
  for (const auto& [name, t] : store.entries()) file.entries.emplace_back(prefix + name, t);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::CheckpointFile file;
  file.entries.emplace_back("meta/config_json", string_to_u32_tensor(config_to_json_text(ckpt.config)));
  append_section(file, "param/", ckpt.params);
  append_section(file, "ema/", ckpt.ema);
  append_section(file, "adam_m/", ckpt.adam_m);
  append_section(file, "adam_v/", ckpt.adam_v);
  file.step = ckpt.step;
  io::save_pckp(path, file);
}

Checkpoint load_checkpoint(const std::string& path) {
  io::CheckpointFile file = io::load_pckp(path);
  if (!file.has("meta/config_json")) {
    throw FormatError("checkpoint is missing the meta/config_json entry");
  }
  Checkpoint ckpt;
  ckpt.config = config_from_json_text(u32_tensor_to_string(file.get("meta/config_json")));
  ckpt.step = file.step;

  std::unordered_map<std::string, Tensor> sections[4];
  const std::string prefixes[4] = {"param/", "ema/", "adam_m/", "adam_v/"};
  for (const auto& [name, t] : file.entries) {
    if (name == "meta/config_json") continue;
    bool matched = false;
    for (int s = 0; s < 4; ++s) {
      if (name.rfind(prefixes[s], 0) == 0) {
        sections[s][name.substr(prefixes[s].size())] = t;
        matched = true;
        break;
      }
    }
    if (!matched) throw FormatError("unknown tensor name in checkpoint: " + name);
  }
  if (sections[0].empty()) throw FormatError("checkpoint has no param/ tensors");

  // reference layout for name/shape validation and canonical ordering
  const Dtype dt = sections[0].begin()->second.dtype();
  Model ref = Model::build(ckpt.config, 0, dt);
  ParamStore* dests[4] = {&ckpt.params, &ckpt.ema, &ckpt.adam_m, &ckpt.adam_v};
  for (int s = 0; s < 4; ++s) {
    if (sections[s].empty()) continue;
    for (const auto& [name, t] : ref.params().entries()) {
      auto it = sections[s].find(name);
      if (it == sections[s].end()) {
        throw FormatError("checkpoint section " + prefixes[s] + " is missing tensor " + name);
      }
      if (it->second.dims() != t.dims()) {
        throw FormatError("checkpoint tensor " + prefixes[s] + name + " has shape " +
                          it->second.shape_str() + ", expected " + t.shape_str());
      }
      dests[s]->add(name, it->second);
    }
    if (sections[s].size() != ref.params().size()) {
      for (const auto& [name, t] : sections[s]) {
        if (!ref.params().has(name)) {
          throw FormatError("unknown tensor name in checkpoint: " + prefixes[s] + name);
        }
      }
    }
  }
  return ckpt;
}

ModelConfig circtestnet_config(std::size_t image_size, bool use_pe) {
  ModelConfig cfg;
  cfg.input_h = image_size;
  cfg.input_w = image_size;
  cfg.in_channels = 1;
  cfg.num_classes = 4;
  cfg.stem = {"pointwise", 16, 1};
  StageSpec s;
  s.kind = "parc";
  s.out_channels = 16;
  s.depth = 2;
  s.stride = 1;
  s.use_pe = use_pe;
  s.use_channel_attention = true;
  s.fusion_groups = 0;  // bare block stack keeps the shift-invariance argument
  cfg.stages.push_back(s);
  return cfg;
}

ModelConfig parcnet_xxs_desk_config(std::size_t in_channels, std::size_t num_classes) {
  ModelConfig cfg;
  cfg.input_h = 64;
  cfg.input_w = 64;
  cfg.in_channels = in_channels;
  cfg.num_classes = num_classes;
  cfg.stem = {"conv3x3", 16, 2};
  StageSpec local1;
  local1.kind = "local";
  local1.out_channels = 24;
  local1.depth = 2;
  local1.stride = 1;
  local1.expansion = 2;
  StageSpec local2 = local1;
  local2.out_channels = 48;
  local2.stride = 2;
  StageSpec parc1;
  parc1.kind = "parc";
  parc1.out_channels = 64;
  parc1.depth = 2;
  parc1.stride = 2;
  parc1.fusion_groups = 4;
  StageSpec parc2 = parc1;
  parc2.out_channels = 80;
  cfg.stages = {local1, local2, parc1, parc2};
  return cfg;
}

Model model_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
  if (use_ema && ckpt.ema.size() == 0) {
    throw ContractError("checkpoint carries no EMA shadow parameters");
  }
  return Model::from_store(ckpt.config, use_ema ? ckpt.ema : ckpt.params);
}

}  // namespace parc::model
