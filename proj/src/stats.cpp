// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/stats.hpp"

#include <cmath>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "taskfuse/error.hpp"

namespace taskfuse {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

PairedTest paired_t_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw InvalidArgumentError("paired_t_greater: need two equal-length samples of size >= 2");
  }
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedTest r;
  r.n = d.size();
  r.mean_diff = mean(d);
  const double se = std::sqrt(sample_variance(d) / static_cast<double>(d.size()));
  if (se == 0.0) {
    r.t = r.mean_diff > 0.0 ? INFINITY : (r.mean_diff < 0.0 ? -INFINITY : 0.0);
    r.p_value = r.mean_diff > 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t = r.mean_diff / se;
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

}  // namespace taskfuse
