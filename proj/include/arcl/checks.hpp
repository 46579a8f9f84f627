#pragma once

// Randomized property and oracle suites. Each returns a verdict plus a short
// human-readable detail line; they back both `arcl check` and the acceptance
// binary.

#include <cstdint>
#include <string>
#include <vector>

namespace arcl {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Parameter and input gradients of CE, KL, MSE and their calibrated forms
/// against central differences (h = 1e-4) on random MLPs and batches.
CheckResult check_gradients(std::uint64_t seed, int instances = 100);

/// PGD, FGSM and the TRADES inner maximization stay inside the epsilon ball
/// and the input box, return x for epsilon 0 and keep k in [0, N].
CheckResult check_attack_contract(std::uint64_t seed, int draws = 1000);

/// Raising one calibration offset lowers that class's probability and raises
/// every other one; the masking offset reproduces a renormalized softmax.
CheckResult check_calibration_monotonicity(std::uint64_t seed, int draws = 1000);

/// faa and forgetting against direct loops, plus two published CRD/FRI values
/// recomputed from their rounded table inputs.
CheckResult check_metric_oracle(std::uint64_t seed, int draws = 1000);

/// Every buffered entry of a RAER run has k < rho after each epoch, and a
/// threshold above the attack length reproduces plain reservoir sampling.
CheckResult check_raer_invariant(std::uint64_t seed);

/// All of the above, in order.
std::vector<CheckResult> run_property_checks(std::uint64_t seed = 20240601);

}  // namespace arcl
