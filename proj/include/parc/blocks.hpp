#pragma once

#include <functional>
#include <string>

#include "parc/autodiff.hpp"
#include "parc/params.hpp"

namespace parc::blocks {

using autodiff::Tape;
using autodiff::Var;

// Resolves a parameter name to its tape variable.
using ParamGetter = std::function<Var(const std::string&)>;

inline constexpr std::size_t kNormGroups = 8;
inline constexpr double kNormEps = 1e-5;

struct BlockConfig {
  std::size_t channels = 0;
  std::size_t l_base_v = 0;  // base kernel/PE length, vertical half
  std::size_t l_base_h = 0;  // horizontal half
  bool use_pe = true;
  bool use_channel_attention = true;
  bool use_metaformer = true;
  std::size_t ca_ratio = 4;

  std::size_t channels_v() const { return channels / 2; }
  std::size_t channels_h() const { return channels - channels / 2; }
};

struct InvResConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t expansion = 1;

  std::size_t hidden() const { return in_channels * expansion; }
};

struct FusionConfig {
  std::size_t concat_channels = 0;  // channels after the local/global concat
  std::size_t out_channels = 0;
  std::size_t groups = 1;
};

// Parameter creation. Tensors are registered under `prefix` in a fixed order
// and initialized from `rng` (truncated normal 0.02; norms 1/0; biases 0).
void init_parc_block(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                     Rng& rng, Dtype dt);
void init_inverted_residual(ParamStore& store, const std::string& prefix, const InvResConfig& cfg,
                            Rng& rng, Dtype dt);
void init_fusion(ParamStore& store, const std::string& prefix, const FusionConfig& cfg, Rng& rng,
                 Dtype dt);

// Squeeze-excitation gate: GAP -> linear -> SiLU -> linear -> sigmoid -> scale.
Var channel_attention(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2);

// Meta-former block: x + SpatialMixer(norm1(x)), then u + ChannelMixer(norm2(u)).
// The spatial mixer splits channels between ParC-V and ParC-H and remixes with
// a pointwise conv; the channel mixer is pw -> SiLU -> [channel attention] -> pw.
// With use_metaformer=false both residuals and pre-norms are dropped.
Var parc_block_forward(Tape& t, Var x, const BlockConfig& cfg, const ParamGetter& p,
                       const std::string& prefix);

// MobileNetV2 block: pw expand -> dw 3x3 (stride) -> pw project, GN after each
// conv, SiLU after the first two; skip iff stride==1 and channels match.
Var inverted_residual_forward(Tape& t, Var x, const InvResConfig& cfg, const ParamGetter& p,
                              const std::string& prefix);

// concat(local, global) -> grouped 3x3 conv -> pointwise conv to stage width.
Var fusion_forward(Tape& t, Var local, Var global_feat, const FusionConfig& cfg,
                   const ParamGetter& p, const std::string& prefix);

// Local feature branch of a fusion-wrapped parc stage: depthwise 3x3 at the
// stage stride, then pointwise to the stage width, GN+SiLU after each conv.
void init_local_branch(ParamStore& store, const std::string& prefix, std::size_t in_channels,
                       std::size_t out_channels, Rng& rng, Dtype dt);
Var local_branch_forward(Tape& t, Var x, std::size_t stride, const ParamGetter& p,
                         const std::string& prefix);

}  // namespace parc::blocks
