#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parc/model.hpp"

namespace parc::checks {

// Re-draws a model's weights at O(1) magnitude (PEs at ~1.5, other weights at
// ~0.4, norms untouched). Shift-invariance with PE off must survive any
// parameters; the PE-on break is an existence property and needs parameters
// outside the near-linear initialization regime to act as a witness.
void witness_params(model::Model& m, std::uint64_t seed);

struct PropertyResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;      // worst observed error (or witness magnitude)
  double threshold = 0.0;  // pass bound the property was judged against
  std::string detail;
};

// suites: "oracle", "grad", "shift", "all"
std::vector<PropertyResult> run_suite(const std::string& suite, std::uint64_t seed,
                                      std::size_t trials);

bool all_pass(const std::vector<PropertyResult>& results);

}  // namespace parc::checks
