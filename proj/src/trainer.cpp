#include "parc/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dispatch.hpp"
#include "parc/autodiff.hpp"
#include "parc/ops.hpp"
#include "parc/serialize.hpp"

namespace parc::trainer {

using json = nlohmann::json;

TrainConfig train_config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("train config must be an object");
  const std::set<std::string> allowed = {"epochs",       "batch_size",      "lr_max",
                                         "lr_min",       "weight_decay",    "warmup_iters",
                                         "beta1",        "beta2",           "label_smoothing",
                                         "ema_decay",    "adam_eps",        "seed"};
  for (const auto& [key, value] : root.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key in train config: " + key);
  }
  TrainConfig cfg;
  cfg.epochs = root.value("epochs", cfg.epochs);
  cfg.batch_size = root.value("batch_size", cfg.batch_size);
  cfg.lr_max = root.value("lr_max", cfg.lr_max);
  cfg.lr_min = root.value("lr_min", cfg.lr_min);
  cfg.weight_decay = root.value("weight_decay", cfg.weight_decay);
  cfg.warmup_iters = root.value("warmup_iters", cfg.warmup_iters);
  cfg.beta1 = root.value("beta1", cfg.beta1);
  cfg.beta2 = root.value("beta2", cfg.beta2);
  cfg.label_smoothing = root.value("label_smoothing", cfg.label_smoothing);
  cfg.ema_decay = root.value("ema_decay", cfg.ema_decay);
  cfg.adam_eps = root.value("adam_eps", cfg.adam_eps);
  cfg.seed = root.value("seed", cfg.seed);
  validate(cfg);
  return cfg;
}

void validate(const TrainConfig& cfg) {
  if (cfg.lr_min > cfg.lr_max) throw ConfigError("train config: lr_min must be <= lr_max");
  if (cfg.label_smoothing < 0.0 || cfg.label_smoothing >= 1.0) {
    throw ConfigError("train config: label_smoothing must lie in [0, 1)");
  }
  if (cfg.ema_decay < 0.0 || cfg.ema_decay >= 1.0) {
    throw ConfigError("train config: ema_decay must lie in [0, 1)");
  }
  if (cfg.epochs == 0 || cfg.batch_size == 0) {
    throw ConfigError("train config: epochs and batch_size must be >= 1");
  }
}

Dataset make_synthetic(const DatasetSpec& spec) {
  if (spec.kind == "file") return load_dataset(spec.path);
  if (spec.kind != "quadrant" && spec.kind != "shift-pairs") {
    throw ArgumentError("unknown synthetic dataset kind: " + spec.kind);
  }
  if (spec.image_size < 2) throw ArgumentError("synthetic dataset: image size must be >= 2");
  if (spec.count == 0) throw ArgumentError("synthetic dataset: sample count must be >= 1");

  const std::size_t s = spec.image_size;
  Rng rng(spec.seed);

  auto fill_marker_image = [&](float* px, std::uint32_t* label_out) {
    for (std::size_t i = 0; i < s * s; ++i) {
      px[i] = static_cast<float>(rng.normal() * spec.noise);
    }
    const std::size_t r = static_cast<std::size_t>(rng.uniform_int(s));
    const std::size_t c = static_cast<std::size_t>(rng.uniform_int(s));
    px[r * s + c] = 1.0f;
    *label_out = static_cast<std::uint32_t>((r >= s / 2 ? 2 : 0) + (c >= s / 2 ? 1 : 0));
  };

  Dataset data;
  if (spec.kind == "quadrant") {
    data.images = Tensor::empty(Dtype::F32, {spec.count, 1, s, s});
    data.labels = Tensor::empty(Dtype::U32, {spec.count});
    auto px = data.images.f32_mut();
    auto lb = data.labels.u32_mut();
    for (std::size_t i = 0; i < spec.count; ++i) {
      fill_marker_image(px.data() + i * s * s, &lb[i]);
    }
  } else {
    data.images = Tensor::empty(Dtype::F32, {2 * spec.count, 1, s, s});
    data.labels = Tensor::empty(Dtype::U32, {2 * spec.count});
    auto lb = data.labels.u32_mut();
    for (std::size_t i = 0; i < spec.count; ++i) {
      Tensor base = Tensor::empty(Dtype::F32, {1, 1, s, s});
      std::uint32_t unused = 0;
      fill_marker_image(base.f32_mut().data(), &unused);
      const long long dy = static_cast<long long>(rng.uniform_int(s));
      const long long dx = static_cast<long long>(rng.uniform_int(s));
      Tensor shifted = ops::circular_shift(ops::circular_shift(base, 2, dy), 3, dx);
      auto dst = data.images.f32_mut();
      std::copy(base.f32().begin(), base.f32().end(), dst.begin() + (2 * i) * s * s);
      std::copy(shifted.f32().begin(), shifted.f32().end(), dst.begin() + (2 * i + 1) * s * s);
      lb[2 * i] = static_cast<std::uint32_t>(i);
      lb[2 * i + 1] = static_cast<std::uint32_t>(i);
    }
  }
  return data;
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string images_path = (fs::path(dir) / "images.ptns").string();
  const std::string labels_path = (fs::path(dir) / "labels.ptns").string();
  Dataset data;
  data.images = io::load_ptns(images_path);
  data.labels = io::load_ptns(labels_path);
  if (data.images.rank() != 4 || data.images.dtype() != Dtype::F32) {
    throw FormatError(images_path + ": expected rank-4 f32 tensor");
  }
  if (data.labels.rank() != 1 || data.labels.dtype() != Dtype::U32) {
    throw FormatError(labels_path + ": expected rank-1 u32 tensor");
  }
  if (data.images.dim(0) != data.labels.dim(0)) {
    throw FormatError(dir + ": images and labels disagree on sample count");
  }
  return data;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir);
  io::save_ptns((fs::path(dir) / "images.ptns").string(), data.images);
  io::save_ptns((fs::path(dir) / "labels.ptns").string(), data.labels);
}

AdamState init_adam_state(const ParamStore& params) {
  AdamState st;
  for (const auto& [name, t] : params.entries()) {
    st.m.add(name, Tensor::zeros(t.dtype(), t.dims()));
    st.v.add(name, Tensor::zeros(t.dtype(), t.dims()));
  }
  return st;
}

void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                std::size_t step, double lr, double wd, double beta1, double beta2, double eps) {
  if (step == 0) throw ArgumentError("adamw_step: step is 1-based");
  // validate everything first so an aborted step leaves parameters untouched
  for (const auto& [name, p] : params.entries()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adamw_step: missing gradient for " + name);
    const Tensor& g = it->second;
    if (g.dims() != p.dims()) {
      throw ShapeError("adamw_step: gradient shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g.at(i))) {
        throw DiagnosticError("adamw_step: non-finite gradient in " + name);
      }
    }
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (const auto& [name, p] : params.entries()) {
    const Tensor& g = grads.at(name);
    Tensor pt = p;
    Tensor mt = state.m.get(name);
    Tensor vt = state.v.get(name);
    detail::dispatch_float(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ps = detail::mdata<T>(pt);
      auto ms = detail::mdata<T>(mt);
      auto vs = detail::mdata<T>(vt);
      auto gs = detail::cdata<T>(g);
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const double gv = static_cast<double>(gs[i]);
        double m = beta1 * static_cast<double>(ms[i]) + (1.0 - beta1) * gv;
        double v = beta2 * static_cast<double>(vs[i]) + (1.0 - beta2) * gv * gv;
        ms[i] = static_cast<T>(m);
        vs[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        double pv = static_cast<double>(ps[i]);
        pv *= 1.0 - lr * wd;  // decoupled decay
        pv -= lr * mhat / (std::sqrt(vhat) + eps);
        ps[i] = static_cast<T>(pv);
      }
    });
    params.set(name, pt);
    state.m.set(name, mt);
    state.v.set(name, vt);
  }
}

double cosine_lr(std::size_t step, std::size_t total, std::size_t warmup_iters, double lr_max,
                 double lr_min) {
  if (step > total) throw ArgumentError("cosine_lr: step beyond total");
  if (warmup_iters > 0 && step < warmup_iters) {
    return lr_max * static_cast<double>(step) / static_cast<double>(warmup_iters);
  }
  if (total <= warmup_iters) return lr_max;
  const double progress = static_cast<double>(step - warmup_iters) /
                          static_cast<double>(total - warmup_iters);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

Tensor label_smoothing_targets(std::uint32_t label, std::size_t num_classes, double eps,
                               Dtype dt) {
  if (label >= num_classes) {
    throw ArgumentError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(num_classes) + " classes");
  }
  Tensor t = Tensor::full(dt, {num_classes}, eps / static_cast<double>(num_classes));
  if (dt == Dtype::F64) {
    t.f64_mut()[label] += 1.0 - eps;
  } else {
    t.f32_mut()[label] += static_cast<float>(1.0 - eps);
  }
  return t;
}

void ema_update(ParamStore& shadow, const ParamStore& params, double decay) {
  for (const auto& [name, p] : params.entries()) {
    Tensor sh = shadow.get(name);
    detail::dispatch_float(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ss = detail::mdata<T>(sh);
      auto ps = detail::cdata<T>(p);
      const T d = static_cast<T>(decay);
      const T od = static_cast<T>(1.0 - decay);
      for (std::size_t i = 0; i < ss.size(); ++i) ss[i] = d * ss[i] + od * ps[i];
    });
    shadow.set(name, sh);
  }
}

std::size_t train_threads() {
  if (const char* env = std::getenv("PARC_THREADS")) {
    const long v = std::atol(env);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

namespace {

// forward/backward for one sample; grads written to its slot in store order
void sample_pass(const model::Model& m, const Tensor& image, std::uint32_t label,
                 std::size_t num_classes, double smoothing, std::vector<Tensor>& grad_slot,
                 double& loss_slot) {
  autodiff::Tape tape(true);
  blocks::ParamGetter getter = m.bind(tape);
  autodiff::Var x = tape.constant(image);
  autodiff::Var target = tape.constant(
      label_smoothing_targets(label, num_classes, smoothing, m.dtype()).reshaped({1, num_classes}));
  autodiff::Var logits = m.forward_with(tape, x, getter);
  autodiff::Var loss = tape.softmax_cross_entropy(logits, target);
  loss_slot = tape.value(loss).item();
  tape.backward(loss);
  const auto& tape_params = tape.params();
  grad_slot.resize(tape_params.size());
  for (std::size_t k = 0; k < tape_params.size(); ++k) {
    grad_slot[k] = tape.grad(autodiff::Var{tape_params[k].second});
  }
}

}  // namespace

model::Checkpoint train(model::Model& m, const TrainConfig& cfg, const Dataset& data,
                        const std::string& log_path) {
  validate(cfg);
  const std::size_t n = data.size();
  if (n == 0) throw ArgumentError("train: empty dataset");
  if (data.images.dim(1) != m.config().in_channels) {
    throw ShapeError("train: dataset has " + std::to_string(data.images.dim(1)) +
                     " channels, model expects " + std::to_string(m.config().in_channels));
  }
  const std::size_t num_classes = m.config().num_classes;
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t iters_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = cfg.epochs * iters_per_epoch;

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log: " + log_path);
    log << "step,lr,loss,epoch\n";
  }

  Rng shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  AdamState adam = init_adam_state(m.params());
  ParamStore ema;
  for (const auto& [name, t] : m.params().entries()) ema.add(name, t);

  const std::size_t threads = train_threads();
  std::size_t step = 0;

  std::vector<std::vector<Tensor>> grad_slots(batch);
  std::vector<double> loss_slots(batch);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t b = 0; b < iters_per_epoch; ++b) {
      const std::size_t lo = b * batch;
      const std::size_t hi = std::min(lo + batch, n);
      const std::size_t bs = hi - lo;

      auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t s = begin; s < end; ++s) {
          const std::size_t idx = order[lo + s];
          Tensor image = ops::slice(data.images, 0, idx, 1);
          if (m.dtype() != Dtype::F32) image = image.astype(m.dtype());
          sample_pass(m, image, data.labels.u32()[idx], num_classes, cfg.label_smoothing,
                      grad_slots[s], loss_slots[s]);
        }
      };
      const std::size_t nw = std::min(threads, bs);
      if (nw <= 1) {
        worker(0, bs);
      } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (bs + nw - 1) / nw;
        for (std::size_t t = 0; t < nw; ++t) {
          const std::size_t begin = t * chunk;
          const std::size_t end = std::min(begin + chunk, bs);
          if (begin < end) pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
      }

      // fixed-order reduction keeps results identical for any thread count
      double loss = 0.0;
      for (std::size_t s = 0; s < bs; ++s) loss += loss_slots[s];
      loss /= static_cast<double>(bs);
      if (!std::isfinite(loss)) {
        throw DiagnosticError("train: non-finite loss at iteration " + std::to_string(step));
      }

      std::map<std::string, Tensor> grads;
      const auto& entries = m.params().entries();
      for (std::size_t k = 0; k < entries.size(); ++k) {
        Tensor acc = Tensor::zeros(entries[k].second.dtype(), entries[k].second.dims());
        for (std::size_t s = 0; s < bs; ++s) ops::accumulate(acc, grad_slots[s][k]);
        grads[entries[k].first] = ops::scale(acc, 1.0 / static_cast<double>(bs));
      }

      const double lr = cosine_lr(step, total_steps, cfg.warmup_iters, cfg.lr_max, cfg.lr_min);
      adamw_step(m.params(), grads, adam, step + 1, lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
                 cfg.adam_eps);
      ema_update(ema, m.params(), cfg.ema_decay);

      if (log.is_open()) {
        log << step << ',' << std::setprecision(10) << lr << ',' << loss << ',' << epoch << '\n';
      }
      ++step;
    }
  }

  model::Checkpoint ckpt;
  ckpt.config = m.config();
  ckpt.params = m.params();
  ckpt.ema = std::move(ema);
  ckpt.adam_m = std::move(adam.m);
  ckpt.adam_v = std::move(adam.v);
  ckpt.step = static_cast<std::uint32_t>(step);
  return ckpt;
}

model::Checkpoint train(model::Model& m, const TrainConfig& cfg, const DatasetSpec& spec,
                        const std::string& log_path) {
  Dataset data = make_synthetic(spec);
  return train(m, cfg, data, log_path);
}

double evaluate(const model::Model& m, const Dataset& data) {
  const std::size_t n = data.size();
  if (n == 0) throw ArgumentError("evaluate: empty dataset");
  const std::size_t batch = 64;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    const std::size_t bs = std::min(batch, n - lo);
    Tensor x = ops::slice(data.images, 0, lo, bs);
    if (m.dtype() != Dtype::F32) x = x.astype(m.dtype());
    Tensor logits = m.forward(x);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < bs; ++i) {
      std::size_t best = 0;
      double best_v = logits.at(i * k);
      for (std::size_t j = 1; j < k; ++j) {
        const double v = logits.at(i * k + j);
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      if (best == data.labels.u32()[lo + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace parc::trainer
