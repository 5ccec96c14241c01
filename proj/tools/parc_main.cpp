#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "parc/bench.hpp"
#include "parc/checks.hpp"
#include "parc/model.hpp"
#include "parc/trainer.hpp"

namespace {

using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw parc::IoError("cannot open: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> dims;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find('x', pos);
    if (next == std::string::npos) next = s.size();
    const std::string tok = s.substr(pos, next - pos);
    if (tok.empty()) throw parc::ArgumentError("bad dims string: " + s);
    for (char c : tok) {
      if (!std::isdigit(static_cast<unsigned char>(c))) {
        throw parc::ArgumentError("bad dims string: " + s);
      }
    }
    dims.push_back(static_cast<std::size_t>(std::stoull(tok)));
    pos = next + 1;
  }
  if (dims.empty()) throw parc::ArgumentError("bad dims string: " + s);
  return dims;
}

struct FileConfig {
  parc::model::ModelConfig model;
  parc::trainer::TrainConfig train;
};

FileConfig load_file_config(const std::string& path) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw parc::ConfigError(std::string("config parse error in ") + path + ": " + e.what());
  }
  if (!root.is_object()) throw parc::ConfigError(path + ": config root must be an object");
  for (const auto& [key, value] : root.items()) {
    if (key != "model" && key != "train") {
      throw parc::ConfigError("unknown key in config file: " + key);
    }
  }
  if (!root.contains("model")) throw parc::ConfigError(path + ": missing \"model\" section");
  FileConfig fc;
  fc.model = parc::model::config_from_json_text(root.at("model").dump());
  if (root.contains("train")) {
    fc.train = parc::trainer::train_config_from_json_text(root.at("train").dump());
  }
  return fc;
}

// --data accepts a dataset directory or "synth:KIND,n=N,size=S[,noise=X][,seed=K]"
parc::trainer::DatasetSpec parse_data_arg(const std::string& arg, std::uint64_t default_seed) {
  parc::trainer::DatasetSpec spec;
  if (arg.rfind("synth:", 0) != 0) {
    spec.kind = "file";
    spec.path = arg;
    return spec;
  }
  std::string rest = arg.substr(6);
  std::size_t comma = rest.find(',');
  spec.kind = rest.substr(0, comma);
  spec.seed = default_seed;
  spec.noise = 0.02;
  while (comma != std::string::npos) {
    rest = rest.substr(comma + 1);
    comma = rest.find(',');
    const std::string kv = rest.substr(0, comma);
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw parc::ArgumentError("bad synth spec field: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "n") {
      spec.count = std::stoull(val);
    } else if (key == "size") {
      spec.image_size = std::stoull(val);
    } else if (key == "noise") {
      spec.noise = std::stod(val);
    } else if (key == "seed") {
      spec.seed = std::stoull(val);
    } else {
      throw parc::ArgumentError("unknown synth spec key: " + key);
    }
  }
  return spec;
}

json report_to_json(const parc::bench::BenchReport& r) {
  return json{{"arm", r.op},       {"dims", r.dims},           {"iters", r.iters},
              {"warmup", r.warmup}, {"mean_ns", r.mean_ns},     {"median_ns", r.median_ns},
              {"stddev_ns", r.stddev_ns}, {"macs", r.macs},     {"checksum", r.checksum}};
}

int cmd_check(const std::string& suite, std::uint64_t seed, std::size_t trials, bool as_json) {
  auto results = parc::checks::run_suite(suite, seed, trials);
  if (as_json) {
    json out;
    out["suite"] = suite;
    out["seed"] = seed;
    out["trials"] = trials;
    out["results"] = json::array();
    for (const auto& r : results) {
      out["results"].push_back({{"name", r.name},
                                {"pass", r.pass},
                                {"worst_error", r.worst},
                                {"threshold", r.threshold}});
    }
    out["all_pass"] = parc::checks::all_pass(results);
    std::cout << out.dump(2) << "\n";
  } else {
    for (const auto& r : results) {
      std::printf("[%s] %-28s worst=%.3e threshold=%.0e%s%s\n", r.pass ? "PASS" : "FAIL",
                  r.name.c_str(), r.worst, r.threshold, r.detail.empty() ? "" : "  ",
                  r.detail.c_str());
    }
  }
  return parc::checks::all_pass(results) ? kExitOk : kExitVerificationFailure;
}

int cmd_train(const std::string& config_path, const std::string& data_arg,
              const std::string& out_path, std::int64_t seed_flag, const std::string& log_path,
              bool as_json) {
  FileConfig fc = load_file_config(config_path);
  if (seed_flag >= 0) fc.train.seed = static_cast<std::uint64_t>(seed_flag);
  parc::trainer::DatasetSpec spec = parse_data_arg(data_arg, fc.train.seed);
  parc::model::Model m = parc::model::Model::build(fc.model, fc.train.seed);
  parc::trainer::Dataset data = parc::trainer::make_synthetic(spec);
  parc::model::Checkpoint ckpt = parc::trainer::train(m, fc.train, data, log_path);
  parc::model::save_checkpoint(out_path, ckpt);
  const double train_acc = parc::trainer::evaluate(m, data);
  if (as_json) {
    json out{{"checkpoint", out_path},
             {"steps", ckpt.step},
             {"params", parc::model::count_params(m)},
             {"train_accuracy", train_acc}};
    std::cout << out.dump(2) << "\n";
  } else {
    std::printf("trained %u steps (%llu params), train accuracy %.4f\n", ckpt.step,
                static_cast<unsigned long long>(parc::model::count_params(m)), train_acc);
    std::printf("checkpoint written to %s\n", out_path.c_str());
  }
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_arg, bool use_ema,
             bool as_json) {
  parc::model::Checkpoint ckpt = parc::model::load_checkpoint(ckpt_path);
  parc::model::Model m = parc::model::model_from_checkpoint(ckpt, use_ema);
  parc::trainer::DatasetSpec spec = parse_data_arg(data_arg, 0);
  parc::trainer::Dataset data = parc::trainer::make_synthetic(spec);
  const double acc = parc::trainer::evaluate(m, data);
  if (as_json) {
    std::cout << json{{"top1_accuracy", acc}, {"ema", use_ema}, {"samples", data.size()}}.dump(2)
              << "\n";
  } else {
    std::printf("top-1 accuracy: %.4f (%zu samples%s)\n", acc, data.size(),
                use_ema ? ", EMA weights" : "");
  }
  return kExitOk;
}

int cmd_synth(const std::string& kind, std::size_t n, std::size_t size, double noise,
              std::uint64_t seed, const std::string& out_dir, bool as_json) {
  parc::trainer::DatasetSpec spec;
  spec.kind = kind;
  spec.count = n;
  spec.image_size = size;
  spec.noise = noise;
  spec.seed = seed;
  parc::trainer::Dataset data = parc::trainer::make_synthetic(spec);
  parc::trainer::save_dataset(out_dir, data);
  if (as_json) {
    std::cout << json{{"dir", out_dir}, {"images", data.images.dims()}, {"samples", data.size()}}
                     .dump(2)
              << "\n";
  } else {
    std::printf("wrote %zu samples (%s) to %s\n", data.size(), data.images.shape_str().c_str(),
                out_dir.c_str());
  }
  return kExitOk;
}

int cmd_flops(const std::string& config_path, const std::string& input, std::size_t batch,
              bool as_json) {
  FileConfig fc = load_file_config(config_path);
  std::vector<std::size_t> hw = parse_dims(input);
  if (hw.size() != 2) throw parc::ArgumentError("--input must be HxW, e.g. 64x64");
  const std::uint64_t params = parc::model::count_params(fc.model);
  const std::uint64_t macs = parc::model::count_flops(fc.model, batch, hw[0], hw[1]);
  if (as_json) {
    json layers = json::array();
    for (const auto& ls : parc::model::flop_breakdown(fc.model, batch, hw[0], hw[1])) {
      layers.push_back({{"segment", ls.segment}, {"layer", ls.layer}, {"macs", ls.macs}});
    }
    std::cout << json{{"params", params}, {"macs", macs}, {"layers", layers}}.dump(2) << "\n";
  } else {
    std::printf("params: %llu\n", static_cast<unsigned long long>(params));
    std::printf("macs:   %llu (input %zux%zux%zu)\n", static_cast<unsigned long long>(macs), batch,
                hw[0], hw[1]);
  }
  return kExitOk;
}

int cmd_bench(const std::string& arm, const std::string& config_path, const std::string& dims_str,
              std::size_t iters, std::size_t warmup, std::uint64_t seed, double fraction,
              const std::string& out_csv, bool as_json) {
  if (arm.empty() == config_path.empty()) {
    throw parc::ArgumentError("bench: pass exactly one of --arm or --config");
  }
  std::vector<std::size_t> dims = parse_dims(dims_str);
  std::vector<parc::bench::BenchReport> reports;
  if (!arm.empty()) {
    reports.push_back(parc::bench::bench_op(arm, dims, iters, warmup, seed, fraction));
  } else {
    FileConfig fc = load_file_config(config_path);
    reports = parc::bench::bench_model(fc.model, dims, iters, warmup, seed);
  }
  const std::string csv = parc::bench::to_csv(reports);
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    if (!os) throw parc::IoError("cannot open for writing: " + out_csv);
    os << csv;
  }
  if (as_json) {
    json out = json::array();
    for (const auto& r : reports) out.push_back(report_to_json(r));
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << csv;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"position-aware circular convolution toolkit"};
  app.require_subcommand(1);

  // check
  auto* check = app.add_subcommand("check", "run property verification suites");
  std::string suite = "all";
  std::uint64_t check_seed = 1;
  std::size_t trials = 1000;
  bool check_json = false;
  check->add_option("--suite", suite, "oracle | grad | shift | all");
  check->add_option("--seed", check_seed, "RNG seed");
  check->add_option("--trials", trials, "randomized trial count");
  check->add_flag("--json", check_json, "machine-readable output");

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string train_config, train_data, train_out, train_log;
  std::int64_t train_seed = -1;
  bool train_json = false;
  train->add_option("--config", train_config, "config file with model/train sections")->required();
  train->add_option("--data", train_data, "dataset dir or synth:KIND,n=..,size=..")->required();
  train->add_option("--out", train_out, "output checkpoint path")->required();
  train->add_option("--seed", train_seed, "override the train config seed");
  train->add_option("--log", train_log, "append step,lr,loss,epoch CSV here");
  train->add_flag("--json", train_json, "machine-readable output");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data;
  bool eval_ema = false, eval_json = false;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset dir or synth spec")->required();
  eval->add_flag("--ema", eval_ema, "evaluate the EMA shadow weights");
  eval->add_flag("--json", eval_json, "machine-readable output");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_kind, synth_out;
  std::size_t synth_n = 1000, synth_size = 16;
  double synth_noise = 0.02;
  std::uint64_t synth_seed = 1;
  bool synth_json = false;
  synth->add_option("--kind", synth_kind, "quadrant | shift-pairs")->required();
  synth->add_option("--n", synth_n, "sample count");
  synth->add_option("--size", synth_size, "image side length");
  synth->add_option("--noise", synth_noise, "noise stddev");
  synth->add_option("--seed", synth_seed, "RNG seed");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_flag("--json", synth_json, "machine-readable output");

  // flops
  auto* flops = app.add_subcommand("flops", "parameter and MAC counts for a config");
  std::string flops_config, flops_input = "64x64";
  std::size_t flops_batch = 1;
  bool flops_json = false;
  flops->add_option("--config", flops_config, "config file")->required();
  flops->add_option("--input", flops_input, "input resolution HxW");
  flops->add_option("--batch", flops_batch, "batch size");
  flops->add_flag("--json", flops_json, "machine-readable output");

  // bench
  auto* bench = app.add_subcommand("bench", "micro-benchmark circular conv arms or a model");
  std::string bench_arm, bench_config, bench_dims = "1x8x32x32", bench_csv;
  std::size_t bench_iters = 100, bench_warmup = 10;
  std::uint64_t bench_seed = 1;
  double bench_fraction = 0.5;
  bool bench_json = false;
  bench->add_option("--arm", bench_arm, "oracle | concat | local_bk");
  bench->add_option("--config", bench_config, "model config file (per-layer bench)");
  bench->add_option("--dims", bench_dims, "input dims NxCxHxW");
  bench->add_option("--iters", bench_iters, "timed iterations");
  bench->add_option("--warmup", bench_warmup, "warmup iterations");
  bench->add_option("--seed", bench_seed, "RNG seed");
  bench->add_option("--fraction", bench_fraction, "big-kernel fraction for local_bk");
  bench->add_option("--out", bench_csv, "write the CSV report here");
  bench->add_flag("--json", bench_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (check->parsed()) return cmd_check(suite, check_seed, trials, check_json);
    if (train->parsed()) {
      return cmd_train(train_config, train_data, train_out, train_seed, train_log, train_json);
    }
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_ema, eval_json);
    if (synth->parsed()) {
      return cmd_synth(synth_kind, synth_n, synth_size, synth_noise, synth_seed, synth_out,
                       synth_json);
    }
    if (flops->parsed()) return cmd_flops(flops_config, flops_input, flops_batch, flops_json);
    if (bench->parsed()) {
      return cmd_bench(bench_arm, bench_config, bench_dims, bench_iters, bench_warmup, bench_seed,
                       bench_fraction, bench_csv, bench_json);
    }
  } catch (const parc::ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const parc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerificationFailure;
  }
  return kExitUsage;
}
