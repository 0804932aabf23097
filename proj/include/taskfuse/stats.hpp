// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace taskfuse {

double mean(std::span<const double> x);
// Unbiased (n - 1) sample variance; 0 for fewer than two values.
double sample_variance(std::span<const double> x);

struct PairedTest {
  std::size_t n = 0;
  double mean_diff = 0.0;
  double t = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean(a - b) > 0

  bool significant(double alpha = 0.05) const { return p_value < alpha; }
};

// One-sided paired t-test of a against b. With zero spread the p-value is 0
// when every difference is positive and 1 otherwise.
PairedTest paired_t_greater(std::span<const double> a, std::span<const double> b);

}  // namespace taskfuse
