#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bssl {

/// One row of the self-check table.
struct CheckResult {
  std::string name;
  int cases = 0;
  int failures = 0;
  double worst = 0;  // largest observed error
  double tolerance = 0;
  double seconds = 0;

  bool passed() const { return cases > 0 && failures == 0; }
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Test hook: perturb the matrices handed to the Hungarian solver so the
  /// brute-force comparison must fail.
  bool corrupt_costs = false;
};

/// Hungarian vs brute force (1000 matrices up to 7x7), Murty vs enumeration
/// (200 5x5 matrices, k=10) and backprop vs central differences (20 triples).
std::vector<CheckResult> run_verification(const VerifyOptions& opts = {});

}  // namespace bssl
