#pragma once

// Finite-difference suites for every autodiff primitive and for the composed
// sampler -> field -> render -> loss pipeline, all in double precision.

#include <cstdint>
#include <string>
#include <vector>

#include "rsmp/gradcheck.hpp"

namespace rsmp {

inline constexpr double kGradcheckTolerance = 1e-4;
/// Composite suites (ReLU field, sorted samples) are piecewise smooth; at
/// most this fraction of elements may be unresolved by the difference check.
inline constexpr double kMaxUnresolvedFraction = 0.05;

struct SuiteResult {
  std::string name;
  GradCheckResult check;  // worst case over all seeds
  int seeds = 0;
};

std::vector<std::string> gradcheck_suite_names();

bool passed(const SuiteResult& result, double tolerance = kGradcheckTolerance);

/// Runs one suite on seeds first_seed .. first_seed + n_seeds - 1.
SuiteResult run_gradcheck_suite(const std::string& name, std::uint64_t first_seed, int n_seeds);

/// Every suite; the pipeline suite uses N_r = N_s = 4 and widths 8.
std::vector<SuiteResult> run_gradcheck_suites(std::uint64_t first_seed = 0, int n_seeds = 10);

}  // namespace rsmp
