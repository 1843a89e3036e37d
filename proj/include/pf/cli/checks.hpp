#pragma once

// Self-contained correctness checks shared by `selftest` and the acceptance
// runner. Each returns a verdict plus a one-line human-readable detail.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pf::checks {

struct Verdict {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Finite-difference check of every layer primitive: `instances` random cases
// per primitive and precision, relative error < 1e-3 (float) and 1e-6 (double).
Verdict gradient_fidelity(int instances, std::uint64_t seed);

// Receptive fields of Xception truncations 1-5 and Resnet layer 1 against
// `expected` (six values, in that order).
Verdict receptive_field_table(std::span<const long> expected);

// Parameter counts within a relative `tolerance` of `expected_millions`
// (same order as the receptive-field table).
Verdict parameter_counts(std::span<const double> expected_millions, double tolerance);

// Uniform prediction gives ln 2; the two-patch example (0.9, 0.5 for the
// true class) gives -(ln 0.9 + ln 0.5) / 2.
Verdict loss_analytics();

// Brute-force threshold-sweep average precision; `scores` and `labels` as
// for average_precision.
double average_precision_bruteforce(std::span<const double> scores, std::span<const int> labels);
Verdict ap_oracle(int instances, std::uint64_t seed);

// Out-of-window perturbations leave an output cell bit-identical, for
// Xception truncations 1 to `max_truncation`.
Verdict empirical_receptive_field(int max_truncation, int trials, std::uint64_t seed);

// Identity, constant and impulse checks of the Lanczos resampler.
Verdict lanczos(double tolerance);

// exaggerate on the closed-form quadratic case, optimum -1/(1 + lambda).
Verdict exaggerate_quadratic(double tolerance);

// The quick suite run by `selftest`.
std::vector<Verdict> selftest_suite(std::uint64_t seed);

}  // namespace pf::checks
