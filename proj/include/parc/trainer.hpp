#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "parc/model.hpp"
#include "parc/params.hpp"

namespace parc::trainer {

// Defaults echo the paper's ImageNet recipe; desk-scale runs override them via
// the "train" section of a config file (see configs/).
struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 1024;
  double lr_max = 0.004;
  double lr_min = 0.0004;
  double weight_decay = 0.025;
  std::size_t warmup_iters = 3000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double label_smoothing = 0.1;
  double ema_decay = 0.9995;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

TrainConfig train_config_from_json_text(const std::string& text);
void validate(const TrainConfig& cfg);  // lr_min <= lr_max, eps/decay in [0,1)

struct DatasetSpec {
  std::string kind;  // "quadrant" | "shift-pairs" | "file"
  std::size_t count = 0;
  std::size_t image_size = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string path;  // kind == "file"
};

struct Dataset {
  Tensor images;  // N x C x H x W, f32
  Tensor labels;  // N, u32
  std::size_t size() const { return labels.defined() ? labels.dim(0) : 0; }
};

// quadrant: near-zero noise images with one 1.0 marker pixel; the label is the
// marker's quadrant (0 tl, 1 tr, 2 bl, 3 br). shift-pairs: rows 2i/2i+1 hold
// (x, circular-shift(x)), labels hold the pair id. Pure function of the spec.
Dataset make_synthetic(const DatasetSpec& spec);
Dataset load_dataset(const std::string& dir);   // dir/images.ptns + dir/labels.ptns
void save_dataset(const std::string& dir, const Dataset& data);

struct AdamState {
  ParamStore m;
  ParamStore v;
};
AdamState init_adam_state(const ParamStore& params);

// Decoupled weight decay applied as p *= (1 - lr*wd) before the bias-corrected
// Adam update. step is 1-based.
void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                std::size_t step, double lr, double wd, double beta1, double beta2, double eps);

// Linear warmup 0 -> lr_max over warmup_iters, then cosine from lr_max to lr_min.
double cosine_lr(std::size_t step, std::size_t total, std::size_t warmup_iters, double lr_max,
                 double lr_min);

// (1-eps) one-hot + eps/K, as a length-K tensor.
Tensor label_smoothing_targets(std::uint32_t label, std::size_t num_classes, double eps,
                               Dtype dt = Dtype::F32);

void ema_update(ParamStore& shadow, const ParamStore& params, double decay);

// Worker threads for per-sample forward/backward: PARC_THREADS env when set,
// otherwise the machine's core count. Reduction order is fixed (sample order),
// so results are bit-identical for any thread count.
std::size_t train_threads();

// Runs the full recipe (shuffled minibatches, AdamW, cosine schedule, label
// smoothing, EMA) and returns the final checkpoint; the model's parameters are
// updated in place. Appends "step,lr,loss,epoch" rows to log_path when given.
model::Checkpoint train(model::Model& m, const TrainConfig& cfg, const Dataset& data,
                        const std::string& log_path = "");
model::Checkpoint train(model::Model& m, const TrainConfig& cfg, const DatasetSpec& spec,
                        const std::string& log_path = "");

double evaluate(const model::Model& m, const Dataset& data);  // top-1 accuracy

}  // namespace parc::trainer
