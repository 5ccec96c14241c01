#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parc/model.hpp"

namespace parc::bench {

struct BenchReport {
  std::string op;
  std::vector<std::size_t> dims;  // N, C, H, W
  std::size_t iters = 0;
  std::size_t warmup = 0;
  double mean_ns = 0.0;
  double median_ns = 0.0;
  double stddev_ns = 0.0;  // 0 by convention for a single sample
  std::uint64_t macs = 0;
  double checksum = 0.0;  // sum of one output's elements; drift guard
};

// arm: "oracle" (line-by-line circular conv), "concat" (doubling trick) or
// "local_bk" (zero-padded big-kernel conv at bk_fraction). The convolution
// runs along the horizontal axis; inputs and kernels are fixed per seed.
BenchReport bench_op(const std::string& arm, const std::vector<std::size_t>& dims,
                     std::size_t iters, std::size_t warmup, std::uint64_t seed,
                     double bk_fraction = 0.5);

// Per-segment latency attribution plus a "total" row (whole-forward timing,
// count_flops MACs, logits checksum).
std::vector<BenchReport> bench_model(const model::ModelConfig& cfg,
                                     const std::vector<std::size_t>& dims, std::size_t iters,
                                     std::size_t warmup, std::uint64_t seed);

// Columns: arm,dims,iters,mean_ns,median_ns,stddev_ns,macs,checksum
std::string to_csv(const std::vector<BenchReport>& reports);

}  // namespace parc::bench
