#include <doctest.h>

#include <cmath>
#include <sstream>

#include "parc/bench.hpp"

using namespace parc;
using bench::BenchReport;

TEST_CASE("oracle and concat arms agree on checksum and MAC count") {
  const std::vector<std::size_t> dims = {1, 4, 8, 8};
  BenchReport oracle = bench::bench_op("oracle", dims, 3, 1, 7);
  BenchReport concat = bench::bench_op("concat", dims, 3, 1, 7);
  CHECK(oracle.macs == concat.macs);
  CHECK(oracle.macs == model::parc_op_macs(1, 4, 8, 8, 8));
  const double rel = std::fabs(oracle.checksum - concat.checksum) /
                     std::max(1.0, std::fabs(concat.checksum));
  CHECK(rel < 1e-6);
}

TEST_CASE("single-sample runs report zero stddev by convention") {
  BenchReport r = bench::bench_op("oracle", {1, 2, 4, 4}, 1, 0, 3);
  CHECK(r.iters == 1);
  CHECK(r.stddev_ns == 0.0);
  CHECK(r.mean_ns == r.median_ns);
}

TEST_CASE("local_bk arm records the big-kernel MAC count") {
  // fraction 1/2 of width 8 -> round(4) forced odd -> 5
  BenchReport r = bench::bench_op("local_bk", {1, 2, 4, 8}, 2, 0, 5, 0.5);
  CHECK(r.macs == 1ull * 2 * 4 * 8 * 5);
}

TEST_CASE("unknown arms and bad dims are argument errors") {
  CHECK_THROWS_AS(bench::bench_op("fft", {1, 1, 4, 4}, 1, 0, 1), ArgumentError);
  CHECK_THROWS_AS(bench::bench_op("oracle", {4, 4}, 1, 0, 1), ArgumentError);
  CHECK_THROWS_AS(bench::bench_op("oracle", {1, 1, 4, 4}, 0, 0, 1), ArgumentError);
}

TEST_CASE("csv serialization has the stable column order") {
  BenchReport r = bench::bench_op("oracle", {1, 1, 4, 4}, 2, 0, 1);
  const std::string csv = bench::to_csv({r});
  std::istringstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header == "arm,dims,iters,mean_ns,median_ns,stddev_ns,macs,checksum");
  std::string row;
  std::getline(is, row);
  CHECK(row.substr(0, 7) == "oracle,");
  CHECK(row.find("1x1x4x4") != std::string::npos);
}

TEST_CASE("bench_model attributes per-segment MACs that sum to count_flops") {
  model::ModelConfig cfg = model::circtestnet_config();
  const std::vector<std::size_t> dims = {1, 1, 16, 16};
  auto reports = bench::bench_model(cfg, dims, 3, 1, 11);
  REQUIRE(reports.size() >= 3);
  CHECK(reports.back().op == "total");
  const std::uint64_t total_macs = reports.back().macs;
  CHECK(total_macs == model::count_flops(cfg, 1, 16, 16));
  std::uint64_t seg_sum = 0;
  double max_segment_median = 0.0;
  for (std::size_t i = 0; i + 1 < reports.size(); ++i) {
    seg_sum += reports[i].macs;
    max_segment_median = std::max(max_segment_median, reports[i].median_ns);
    CHECK(reports[i].checksum == reports.back().checksum);
  }
  CHECK(seg_sum == total_macs);
  CHECK(reports.back().median_ns >= max_segment_median);
}

TEST_CASE("parc stage MACs grow superlinearly with resolution") {
  model::ModelConfig cfg = model::circtestnet_config();
  // parc op MACs scale with extent^2 * width: x8 when the side doubles,
  // against x4 for pointwise layers
  const std::uint64_t v16 = model::parc_op_macs(1, 8, 16, 16, 16);
  const std::uint64_t v32 = model::parc_op_macs(1, 8, 32, 32, 32);
  CHECK(v32 == 8 * v16);
  const std::uint64_t f16 = model::count_flops(cfg, 1, 16, 16);
  const std::uint64_t f32x = model::count_flops(cfg, 1, 32, 32);
  CHECK(f32x > 4 * f16);
}

TEST_CASE("bench_model rejects mismatched channel dims") {
  CHECK_THROWS_AS(bench::bench_model(model::circtestnet_config(), {1, 3, 16, 16}, 1, 0, 1),
                  ArgumentError);
}
