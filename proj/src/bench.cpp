#include "parc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "parc/parc_ops.hpp"

namespace parc::bench {

namespace {

using clock_type = std::chrono::steady_clock;

double checksum_of(const Tensor& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += t.at(i);
  return acc;
}

struct TimingStats {
  double mean = 0.0, median = 0.0, stddev = 0.0;
};

TimingStats stats_of(std::vector<double> ns) {
  TimingStats st;
  const std::size_t n = ns.size();
  if (n == 0) return st;
  st.mean = std::accumulate(ns.begin(), ns.end(), 0.0) / static_cast<double>(n);
  std::sort(ns.begin(), ns.end());
  st.median = n % 2 == 1 ? ns[n / 2] : 0.5 * (ns[n / 2 - 1] + ns[n / 2]);
  if (n > 1) {
    double acc = 0.0;
    for (double v : ns) acc += (v - st.mean) * (v - st.mean);
    st.stddev = std::sqrt(acc / static_cast<double>(n - 1));
  }
  return st;
}

}  // namespace

BenchReport bench_op(const std::string& arm, const std::vector<std::size_t>& dims,
                     std::size_t iters, std::size_t warmup, std::uint64_t seed,
                     double bk_fraction) {
  if (dims.size() != 4) throw ArgumentError("bench_op: dims must be N x C x H x W");
  if (iters == 0) throw ArgumentError("bench_op: iters must be >= 1");
  const std::size_t n = dims[0], c = dims[1], h = dims[2], w = dims[3];

  Rng rng(seed);
  Tensor x = rng.uniform_tensor(Dtype::F32, {n, c, h, w}, -1.0, 1.0);
  Tensor kernels = rng.uniform_tensor(Dtype::F32, {c, w}, -1.0, 1.0);

  std::function<Tensor()> run;
  std::uint64_t macs = 0;
  if (arm == "oracle") {
    run = [&]() { return circular_conv_direct(x, kernels, Orientation::Horizontal); };
    macs = model::parc_op_macs(n, c, h, w, w);
  } else if (arm == "concat") {
    run = [&]() { return circular_conv_concat(x, kernels, Orientation::Horizontal); };
    macs = model::parc_op_macs(n, c, h, w, w);
  } else if (arm == "local_bk") {
    ParCParams params;
    params.orientation = Orientation::Horizontal;
    params.base_kernel = kernels;
    const std::size_t len = big_kernel_length(bk_fraction, w);
    run = [&, params]() { return big_kernel_conv(x, bk_fraction, params); };
    macs = static_cast<std::uint64_t>(n) * c * h * w * len;
  } else {
    throw ArgumentError("bench_op: unknown arm " + arm);
  }

  for (std::size_t i = 0; i < warmup; ++i) run();

  BenchReport rep;
  rep.op = arm;
  rep.dims = dims;
  rep.iters = iters;
  rep.warmup = warmup;
  rep.macs = macs;
  std::vector<double> ns(iters);
  Tensor out;
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = clock_type::now();
    out = run();
    const auto t1 = clock_type::now();
    ns[i] = std::chrono::duration<double, std::nano>(t1 - t0).count();
  }
  rep.checksum = checksum_of(out);
  const TimingStats st = stats_of(std::move(ns));
  rep.mean_ns = st.mean;
  rep.median_ns = st.median;
  rep.stddev_ns = st.stddev;
  return rep;
}

std::vector<BenchReport> bench_model(const model::ModelConfig& cfg,
                                     const std::vector<std::size_t>& dims, std::size_t iters,
                                     std::size_t warmup, std::uint64_t seed) {
  if (dims.size() != 4) throw ArgumentError("bench_model: dims must be N x C x H x W");
  if (iters == 0) throw ArgumentError("bench_model: iters must be >= 1");
  if (dims[1] != cfg.in_channels) {
    throw ArgumentError("bench_model: dims channel count " + std::to_string(dims[1]) +
                        " != config in_channels " + std::to_string(cfg.in_channels));
  }
  model::Model m = model::Model::build(cfg, seed);
  Rng rng(seed + 1);
  Tensor x = rng.uniform_tensor(Dtype::F32, dims, -1.0, 1.0);

  std::vector<std::pair<std::string, double>> seg_ns;
  for (std::size_t i = 0; i < warmup; ++i) m.forward_timed(x, seg_ns);

  const std::vector<std::string> segments = m.segment_names();
  std::vector<std::vector<double>> per_segment(segments.size());
  std::vector<double> totals(iters);
  Tensor logits;
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = clock_type::now();
    logits = m.forward_timed(x, seg_ns);
    const auto t1 = clock_type::now();
    totals[i] = std::chrono::duration<double, std::nano>(t1 - t0).count();
    for (std::size_t s = 0; s < segments.size(); ++s) per_segment[s].push_back(seg_ns[s].second);
  }

  // MACs per segment from the analytic breakdown
  std::vector<std::uint64_t> seg_macs(segments.size(), 0);
  for (const model::LayerStat& ls : model::flop_breakdown(cfg, dims[0], dims[2], dims[3])) {
    for (std::size_t s = 0; s < segments.size(); ++s) {
      if (segments[s] == ls.segment) seg_macs[s] += ls.macs;
    }
  }

  const double checksum = checksum_of(logits);
  std::vector<BenchReport> out;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    BenchReport rep;
    rep.op = segments[s];
    rep.dims = dims;
    rep.iters = iters;
    rep.warmup = warmup;
    rep.macs = seg_macs[s];
    rep.checksum = checksum;
    const TimingStats st = stats_of(per_segment[s]);
    rep.mean_ns = st.mean;
    rep.median_ns = st.median;
    rep.stddev_ns = st.stddev;
    out.push_back(rep);
  }
  BenchReport total;
  total.op = "total";
  total.dims = dims;
  total.iters = iters;
  total.warmup = warmup;
  total.macs = model::count_flops(cfg, dims[0], dims[2], dims[3]);
  total.checksum = checksum;
  const TimingStats st = stats_of(totals);
  total.mean_ns = st.mean;
  total.median_ns = st.median;
  total.stddev_ns = st.stddev;
  out.push_back(total);
  return out;
}

std::string to_csv(const std::vector<BenchReport>& reports) {
  std::ostringstream os;
  os << "arm,dims,iters,mean_ns,median_ns,stddev_ns,macs,checksum\n";
  os.precision(12);
  for (const BenchReport& r : reports) {
    os << r.op << ',';
    for (std::size_t i = 0; i < r.dims.size(); ++i) {
      if (i) os << 'x';
      os << r.dims[i];
    }
    os << ',' << r.iters << ',' << r.mean_ns << ',' << r.median_ns << ',' << r.stddev_ns << ','
       << r.macs << ',' << r.checksum << '\n';
  }
  return os.str();
}

}  // namespace parc::bench
