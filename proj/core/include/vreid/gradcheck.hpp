#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vreid::nn {

struct GradCheckOptions {
  int trials = 100;
  std::uint64_t seed = 1;
  double step = 1e-4;         // central-difference step
  double tolerance = 1e-3;    // max relative error
  double denominator_floor = 1e-6;
};

struct GradCheckResult {
  std::string name;
  int trials = 0;
  std::size_t coordinates = 0;
  std::size_t skipped_kinks = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Compares analytic gradients against central differences for the MLP
/// (parameters and input, train-mode batch statistics), cross-entropy,
/// triplet, and L2 regression losses on random instances. Coordinates whose
/// perturbation flips a ReLU or hinge are skipped and counted.
std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options);

}  // namespace vreid::nn
