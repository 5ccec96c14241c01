#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parc/autodiff.hpp"
#include "parc/blocks.hpp"
#include "parc/params.hpp"

namespace parc::model {

struct StemSpec {
  std::string kind = "conv3x3";  // "conv3x3" | "pointwise"
  std::size_t out_channels = 16;
  std::size_t stride = 2;
};

struct StageSpec {
  std::string kind;  // "local" | "parc"
  std::size_t out_channels = 0;
  std::size_t depth = 0;
  std::size_t stride = 1;
  std::size_t expansion = 4;       // local stages
  std::size_t l_base = 0;          // parc stages; 0 derives from input_resolution
  bool use_pe = true;              // parc
  bool use_channel_attention = true;
  std::size_t fusion_groups = 4;   // parc; 0 = bare block stack (no local branch)
  std::size_t ca_ratio = 4;
  bool use_metaformer = true;
};

struct ModelConfig {
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::size_t in_channels = 3;
  std::size_t num_classes = 10;
  StemSpec stem;
  std::vector<StageSpec> stages;
  std::string head_pool = "avg";
};

// JSON config <-> struct; unknown keys are rejected with the key name.
ModelConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ModelConfig& cfg);

// Per-stage resolved geometry at the nominal input resolution.
struct StageGeometry {
  std::size_t in_channels, out_channels;
  std::size_t in_h, in_w;    // stage input extents
  std::size_t out_h, out_w;  // after the stage stride
  std::size_t l_base_v, l_base_h;
};
std::vector<StageGeometry> resolve_geometry(const ModelConfig& cfg);

class Model {
 public:
  Model() = default;

  // Deterministic initialization from seed (truncated normal 0.02 for weights,
  // gamma=1/beta=0, biases 0), parameters registered in wiring order.
  static Model build(const ModelConfig& cfg, std::uint64_t seed, Dtype dt = Dtype::F32);
  // Wrap an existing parameter store (must match the config's layout).
  static Model from_store(const ModelConfig& cfg, ParamStore store);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return store_; }
  ParamStore& params() { return store_; }
  Dtype dtype() const { return dtype_; }

  // Binds every parameter onto the tape (tape.param for each store entry).
  blocks::ParamGetter bind(autodiff::Tape& tape) const;
  // Forward wiring over an already-bound parameter getter.
  autodiff::Var forward_with(autodiff::Tape& tape, autodiff::Var x,
                             const blocks::ParamGetter& p) const;

  // Pure inference to class logits (N x num_classes); any resolution the stem
  // arithmetic admits.
  Tensor forward(const Tensor& x) const;
  // Same forward with wall-clock per segment (stem, stage<i>, head) in ns.
  Tensor forward_timed(const Tensor& x,
                       std::vector<std::pair<std::string, double>>& segment_ns) const;

  std::vector<std::string> segment_names() const;

 private:
  autodiff::Var run_stem(autodiff::Tape& tape, autodiff::Var x,
                         const blocks::ParamGetter& p) const;
  autodiff::Var run_stage(autodiff::Tape& tape, std::size_t i, autodiff::Var x,
                          const blocks::ParamGetter& p) const;
  autodiff::Var run_head(autodiff::Tape& tape, autodiff::Var x,
                         const blocks::ParamGetter& p) const;

  ModelConfig config_;
  ParamStore store_;
  std::vector<StageGeometry> geometry_;
  Dtype dtype_ = Dtype::F32;
};

// Analytic counts (closed forms per layer). The independent oracle — summing
// registered tensor sizes — lives in the tests.
std::uint64_t count_params(const ModelConfig& cfg);
std::uint64_t count_params(const Model& m);

struct LayerStat {
  std::string segment;  // stem / stage<i> / head
  std::string layer;
  std::uint64_t macs = 0;
};
// Analytic multiply-accumulate counts for an n x in_channels x h x w input.
std::vector<LayerStat> flop_breakdown(const ModelConfig& cfg, std::size_t n, std::size_t h,
                                      std::size_t w);
std::uint64_t count_flops(const ModelConfig& cfg, std::size_t n, std::size_t h, std::size_t w);

// MACs of a single ParC op (kernel length equals the extent).
std::uint64_t parc_op_macs(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                           std::size_t extent);

// Documented test model: pointwise stride-1 stem, one bare ParC block stack,
// GAP head. Every layer commutes with 2D circular shifts when use_pe=false.
ModelConfig circtestnet_config(std::size_t image_size = 16, bool use_pe = true);

// Scaled-down classifier in the bifurcate frame: stem 3->16 s2, local stages
// 16->24 and 24->48 s2, fusion-wrapped parc stages 48->64 s2 and 64->80 s2.
ModelConfig parcnet_xxs_desk_config(std::size_t in_channels = 3, std::size_t num_classes = 10);

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  ParamStore ema;     // may be empty
  ParamStore adam_m;  // may be empty
  ParamStore adam_v;  // may be empty
  std::uint32_t step = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
Model model_from_checkpoint(const Checkpoint& ckpt, bool use_ema);

}  // namespace parc::model
