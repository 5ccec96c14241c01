#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "parc/ops.hpp"
#include "parc/trainer.hpp"

using namespace parc;
using trainer::Dataset;
using trainer::DatasetSpec;
using trainer::TrainConfig;

namespace {

std::string temp_dir(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

ParamStore single_param(double value) {
  ParamStore s;
  s.add("p", Tensor::from_f32({1}, {static_cast<float>(value)}));
  return s;
}

}  // namespace

TEST_CASE("adamw first step has the closed form") {
  ParamStore params = single_param(1.0);
  trainer::AdamState st = trainer::init_adam_state(params);
  std::map<std::string, Tensor> grads{{"p", Tensor::from_f32({1}, {1.0f})}};
  trainer::adamw_step(params, grads, st, 1, 0.1, 0.0, 0.9, 0.999, 1e-8);
  // m_hat = v_hat = 1 -> delta = -lr / (1 + eps)
  CHECK(params.get("p").f32()[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)));
}

TEST_CASE("adamw with zero gradient decays parameters multiplicatively") {
  ParamStore params = single_param(2.0);
  trainer::AdamState st = trainer::init_adam_state(params);
  std::map<std::string, Tensor> grads{{"p", Tensor::zeros(Dtype::F32, {1})}};
  trainer::adamw_step(params, grads, st, 1, 0.01, 0.5, 0.9, 0.999, 1e-8);
  CHECK(params.get("p").f32()[0] == doctest::Approx(2.0 * (1.0 - 0.01 * 0.5)));
}

TEST_CASE("adamw step magnitude converges to lr under a constant gradient") {
  for (double gscale : {1.0, 10.0}) {
    ParamStore params = single_param(0.0);
    trainer::AdamState st = trainer::init_adam_state(params);
    std::map<std::string, Tensor> grads{
        {"p", Tensor::from_f32({1}, {static_cast<float>(gscale)})}};
    double prev = 0.0, delta = 0.0;
    for (std::size_t step = 1; step <= 400; ++step) {
      trainer::adamw_step(params, grads, st, step, 0.01, 0.0, 0.9, 0.999, 1e-8);
      const double cur = params.get("p").f32()[0];
      delta = prev - cur;
      prev = cur;
    }
    // steady state is scale-invariant in the gradient magnitude
    CHECK(delta == doctest::Approx(0.01).epsilon(0.02));
  }
}

TEST_CASE("adamw aborts on non-finite gradients naming the parameter") {
  ParamStore params = single_param(1.0);
  trainer::AdamState st = trainer::init_adam_state(params);
  std::map<std::string, Tensor> grads{
      {"p", Tensor::from_f32({1}, {std::numeric_limits<float>::quiet_NaN()})}};
  CHECK_THROWS_WITH_AS(trainer::adamw_step(params, grads, st, 1, 0.1, 0.0, 0.9, 0.999, 1e-8),
                       doctest::Contains("p"), DiagnosticError);
  CHECK(params.get("p").f32()[0] == 1.0f);  // aborted step leaves params untouched
}

TEST_CASE("cosine schedule hits the paper endpoints") {
  // paper defaults: lr 0.004 -> 0.0004, warmup 3000
  CHECK(trainer::cosine_lr(3000, 100000, 3000, 0.004, 0.0004) == doctest::Approx(0.004));
  CHECK(trainer::cosine_lr(100000, 100000, 3000, 0.004, 0.0004) == doctest::Approx(0.0004));
  const std::size_t mid = 3000 + (100000 - 3000) / 2;
  CHECK(trainer::cosine_lr(mid, 100000, 3000, 0.004, 0.0004) ==
        doctest::Approx((0.004 + 0.0004) / 2).epsilon(1e-3));
}

TEST_CASE("cosine schedule warms up linearly and never increases afterwards") {
  const std::size_t total = 500, warmup = 100;
  CHECK(trainer::cosine_lr(0, total, warmup, 0.004, 0.0004) == 0.0);
  CHECK(trainer::cosine_lr(50, total, warmup, 0.004, 0.0004) == doctest::Approx(0.002));
  // continuity at the boundary
  const double before = trainer::cosine_lr(warmup - 1, total, warmup, 0.004, 0.0004);
  const double at = trainer::cosine_lr(warmup, total, warmup, 0.004, 0.0004);
  CHECK(std::fabs(at - before) < 0.004 / warmup + 1e-9);
  double prev = at;
  for (std::size_t s = warmup; s <= total; ++s) {
    const double cur = trainer::cosine_lr(s, total, warmup, 0.004, 0.0004);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("label smoothing targets") {
  Tensor t = trainer::label_smoothing_targets(0, 2, 0.1);
  CHECK(t.f32()[0] == doctest::Approx(0.95));
  CHECK(t.f32()[1] == doctest::Approx(0.05));

  Tensor onehot = trainer::label_smoothing_targets(1, 3, 0.0);
  CHECK(onehot.f32()[0] == 0.0f);
  CHECK(onehot.f32()[1] == 1.0f);

  Tensor t4 = trainer::label_smoothing_targets(2, 4, 0.1);
  const std::vector<float> expect = {0.025f, 0.025f, 0.925f, 0.025f};
  double sum = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t4.f32()[i] == doctest::Approx(expect[i]));
    sum += t4.f32()[i];
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK_THROWS_AS(trainer::label_smoothing_targets(4, 4, 0.1), ArgumentError);
}

TEST_CASE("ema update arithmetic") {
  ParamStore shadow = single_param(1.0);
  ParamStore params = single_param(2.0);
  trainer::ema_update(shadow, params, 0.9);
  CHECK(shadow.get("p").f32()[0] == doctest::Approx(1.1));

  trainer::ema_update(shadow, params, 0.0);
  CHECK(shadow.get("p").f32()[0] == 2.0f);

  // geometric convergence toward constant params
  ParamStore sh = single_param(0.0);
  double gap = 2.0;
  for (int i = 0; i < 5; ++i) {
    trainer::ema_update(sh, params, 0.5);
    const double new_gap = 2.0 - sh.get("p").f32()[0];
    CHECK(new_gap == doctest::Approx(gap * 0.5));
    gap = new_gap;
  }
}

TEST_CASE("quadrant dataset labels match the marker position") {
  DatasetSpec spec{"quadrant", 200, 8, 0.01, 5, ""};
  Dataset data = trainer::make_synthetic(spec);
  REQUIRE(data.images.dims() == std::vector<std::size_t>{200, 1, 8, 8});
  for (std::size_t i = 0; i < 200; ++i) {
    // the marker is the unique 1.0 pixel (noise is tiny)
    std::size_t arg = 0;
    float best = -1e9f;
    for (std::size_t j = 0; j < 64; ++j) {
      const float v = data.images.f32()[i * 64 + j];
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    const std::size_t r = arg / 8, c = arg % 8;
    const std::uint32_t expect = static_cast<std::uint32_t>((r >= 4 ? 2 : 0) + (c >= 4 ? 1 : 0));
    CHECK(data.labels.u32()[i] == expect);
  }
}

TEST_CASE("quadrant classes are balanced within three percent over 10000 samples") {
  DatasetSpec spec{"quadrant", 10000, 16, 0.02, 99, ""};
  Dataset data = trainer::make_synthetic(spec);
  std::size_t counts[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < 10000; ++i) counts[data.labels.u32()[i]]++;
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::fabs(static_cast<double>(counts[k]) / 10000.0 - 0.25) < 0.03);
  }
}

TEST_CASE("synthetic generation is a pure function of its spec") {
  DatasetSpec spec{"quadrant", 64, 8, 0.05, 123, ""};
  Dataset a = trainer::make_synthetic(spec);
  Dataset b = trainer::make_synthetic(spec);
  CHECK(bit_equal(a.images, b.images));
  CHECK(bit_equal(a.labels, b.labels));
  spec.seed = 124;
  Dataset c = trainer::make_synthetic(spec);
  CHECK(!bit_equal(a.images, c.images));
}

TEST_CASE("shift-pairs members are circular shifts of each other") {
  DatasetSpec spec{"shift-pairs", 6, 8, 0.05, 7, ""};
  Dataset data = trainer::make_synthetic(spec);
  REQUIRE(data.images.dim(0) == 12);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(data.labels.u32()[2 * i] == i);
    CHECK(data.labels.u32()[2 * i + 1] == i);
    Tensor a = ops::slice(data.images, 0, 2 * i, 1);
    Tensor b = ops::slice(data.images, 0, 2 * i + 1, 1);
    bool found = false;
    for (long long dy = 0; dy < 8 && !found; ++dy) {
      for (long long dx = 0; dx < 8 && !found; ++dx) {
        if (bit_equal(ops::circular_shift(ops::circular_shift(a, 2, dy), 3, dx), b)) found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("dataset save and load round trip") {
  const std::string dir = temp_dir("parc_ds");
  DatasetSpec spec{"quadrant", 16, 8, 0.02, 3, ""};
  Dataset data = trainer::make_synthetic(spec);
  trainer::save_dataset(dir, data);
  Dataset loaded = trainer::load_dataset(dir);
  CHECK(bit_equal(loaded.images, data.images));
  CHECK(bit_equal(loaded.labels, data.labels));
  std::filesystem::remove_all(dir);
}

TEST_CASE("image size below two is rejected") {
  DatasetSpec spec{"quadrant", 4, 1, 0.0, 1, ""};
  CHECK_THROWS_AS(trainer::make_synthetic(spec), ArgumentError);
}

TEST_CASE("fresh model loss is close to ln K") {
  model::Model m = model::Model::build(model::circtestnet_config(), 41);
  DatasetSpec spec{"quadrant", 64, 16, 0.02, 17, ""};
  Dataset data = trainer::make_synthetic(spec);
  Tensor logits = m.forward(data.images);
  Tensor targets = Tensor::zeros(Dtype::F32, {64, 4});
  for (std::size_t i = 0; i < 64; ++i) {
    Tensor row = trainer::label_smoothing_targets(data.labels.u32()[i], 4, 0.1);
    for (std::size_t k = 0; k < 4; ++k) targets.f32_mut()[i * 4 + k] = row.f32()[k];
  }
  const double loss = ops::softmax_cross_entropy(logits, targets).f32()[0];
  CHECK(loss > std::log(4.0) * 0.85);
  CHECK(loss < std::log(4.0) * 1.15);
}

TEST_CASE("training is deterministic and logs csv rows") {
  const std::string log_path = temp_dir("parc_train_log.csv");
  std::remove(log_path.c_str());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.warmup_iters = 4;
  cfg.lr_max = 0.01;
  cfg.lr_min = 0.001;
  cfg.weight_decay = 0.01;
  cfg.seed = 5;
  DatasetSpec spec{"quadrant", 24, 8, 0.02, 11, ""};
  Dataset data = trainer::make_synthetic(spec);
  model::ModelConfig mc = model::circtestnet_config(8, true);

  model::Model m1 = model::Model::build(mc, cfg.seed);
  model::Checkpoint c1 = trainer::train(m1, cfg, data, log_path);
  model::Model m2 = model::Model::build(mc, cfg.seed);
  model::Checkpoint c2 = trainer::train(m2, cfg, data);

  REQUIRE(c1.params.size() == c2.params.size());
  for (std::size_t i = 0; i < c1.params.size(); ++i) {
    CHECK(bit_equal(c1.params.entries()[i].second, c2.params.entries()[i].second));
    CHECK(bit_equal(c1.ema.entries()[i].second, c2.ema.entries()[i].second));
    CHECK(bit_equal(c1.adam_m.entries()[i].second, c2.adam_m.entries()[i].second));
  }
  CHECK(c1.step == 2 * 3);  // 24 samples / batch 8 = 3 iters per epoch

  std::ifstream log(log_path);
  REQUIRE(log.good());
  std::string line;
  std::getline(log, line);
  CHECK(line == "step,lr,loss,epoch");
  std::size_t rows = 0;
  while (std::getline(log, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 6);
  std::remove(log_path.c_str());
}

TEST_CASE("ema evaluation does not mutate training weights") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.warmup_iters = 2;
  cfg.seed = 9;
  DatasetSpec spec{"quadrant", 16, 8, 0.02, 13, ""};
  Dataset data = trainer::make_synthetic(spec);
  model::Model m = model::Model::build(model::circtestnet_config(8, true), cfg.seed);
  model::Checkpoint ckpt = trainer::train(m, cfg, data);

  std::vector<Tensor> before;
  for (const auto& [n, t] : m.params().entries()) before.push_back(t);
  model::Model ema_model = model::model_from_checkpoint(ckpt, true);
  const double acc = trainer::evaluate(ema_model, data);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(bit_equal(m.params().entries()[i].second, before[i]));
  }
}

TEST_CASE("train config json parses with paper defaults and rejects unknown keys") {
  TrainConfig cfg = trainer::train_config_from_json_text(R"({"epochs": 30, "batch_size": 64})");
  CHECK(cfg.epochs == 30);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.lr_max == doctest::Approx(0.004));
  CHECK(cfg.lr_min == doctest::Approx(0.0004));
  CHECK(cfg.weight_decay == doctest::Approx(0.025));
  CHECK(cfg.beta1 == doctest::Approx(0.9));
  CHECK(cfg.beta2 == doctest::Approx(0.999));
  CHECK(cfg.label_smoothing == doctest::Approx(0.1));
  CHECK_THROWS_WITH_AS(trainer::train_config_from_json_text(R"({"lr": 0.1})"),
                       doctest::Contains("lr"), ConfigError);
  CHECK_THROWS_AS(trainer::train_config_from_json_text(R"({"lr_max": 0.1, "lr_min": 0.2})"),
                  ConfigError);
  CHECK_THROWS_AS(trainer::train_config_from_json_text(R"({"ema_decay": 1.0})"), ConfigError);
}
