// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "taskfuse/error.hpp"
#include "taskfuse/rng.hpp"

namespace taskfuse {

WdeReport wde(const ParameterSet& base, const std::vector<TaskVector>& vectors,
              const std::vector<double>& lambda_single, double lambda_joint,
              const std::vector<ImageSet>& datasets, const ModelConfig& cfg) {
  if (vectors.empty()) throw InvalidArgumentError("wde: no task vectors");
  if (datasets.size() != vectors.size() || lambda_single.size() != vectors.size()) {
    throw InvalidArgumentError("wde: need one dataset and one lambda per task vector");
  }
  WdeReport r;
  r.lambda_single = lambda_single;
  r.lambda_joint = lambda_joint;
  const ParameterSet joint = add_scaled(base, vectors, lambda_joint);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (datasets[i].empty()) throw InvalidArgumentError("wde: empty dataset");
    const ParameterSet single = add_scaled(base, {vectors[i]}, lambda_single[i]);
    const auto a = predict(single, cfg, datasets[i]);
    const auto b = predict(joint, cfg, datasets[i]);
    std::size_t differ = 0;
    for (std::size_t k = 0; k < a.size(); ++k) differ += a[k] != b[k] ? 1 : 0;
    const double rate = static_cast<double>(differ) / static_cast<double>(a.size());
    r.per_task_disagreement.push_back(rate);
    r.sample_counts.push_back(a.size());
    r.xi += rate;
  }
  return r;
}

std::vector<RatioSample> logit_ratios(const ModelConfig& cfg, const ParameterSet& theta_u,
                                      const ParameterSet& theta_d, const ImageSet& x) {
  require_compatible(theta_u, theta_d, "logit_ratio");
  const Logits zu = forward(theta_u, cfg, x);
  const Logits zd = forward(theta_d, cfg, x);
  const auto cls = argmax_rows(zu);
  std::vector<RatioSample> out;
  out.reserve(cls.size());
  for (Eigen::Index i = 0; i < zu.rows(); ++i) {
    RatioSample s;
    s.cls = cls[static_cast<std::size_t>(i)];
    const double den = zd(i, s.cls);
    if (std::abs(den) <= 1e-12) {
      throw DegenerateInputError("logit_ratio: disturbed logit is numerically zero");
    }
    s.ratio = zu(i, s.cls) / den;
    for (Eigen::Index c = 0; c < zu.cols(); ++c) s.per_class.push_back(zu(i, c) / zd(i, c));
    out.push_back(std::move(s));
  }
  return out;
}

double logit_ratio(const ModelConfig& cfg, const ParameterSet& theta_u,
                   const ParameterSet& theta_d, const ImageSet& x_single) {
  if (x_single.size() != 1) throw InvalidArgumentError("logit_ratio: expects one image");
  return logit_ratios(cfg, theta_u, theta_d, x_single).front().ratio;
}

ParameterSet offset(const ParameterSet& theta, const ParameterSet& delta, double scale) {
  require_compatible(theta, delta, "offset");
  ParameterSet out = theta;
  for (std::size_t g = 0; g < out.group_count(); ++g) {
    auto& v = out.groups()[g].values;
    const auto& d = delta.groups()[g].values;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += scale * d[k];
  }
  return out;
}

double TaylorCheck::error() const { return (exact - linear).norm(); }

TaylorCheck taylor_check(const ModelConfig& cfg, const ParameterSet& theta_u,
                         const ParameterSet& delta_theta, const ImageSet& x, double h) {
  if (!(h > 0.0)) throw InvalidArgumentError("taylor_check: step must be positive");
  const Logits z0 = forward(theta_u, cfg, x);
  TaylorCheck t;
  t.exact = forward(offset(theta_u, delta_theta, 1.0), cfg, x) - z0;
  t.linear = (forward(offset(theta_u, delta_theta, h), cfg, x) -
              forward(offset(theta_u, delta_theta, -h), cfg, x)) /
             (2.0 * h);
  if (!t.exact.allFinite() || !t.linear.allFinite()) {
    throw NumericalError("taylor_check: non-finite logits");
  }
  return t;
}

double z_beta(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidArgumentError("beta must lie in (0, 1)");
  return boost::math::quantile(boost::math::complement(boost::math::normal(), beta));
}

double threshold(double beta, double variance_estimate) {
  if (!(variance_estimate >= 0.0)) throw InvalidArgumentError("threshold: negative variance");
  return z_beta(beta) * std::sqrt(variance_estimate);
}

double variance_of_ratio(double jacobian_row_norm_sq_over_zu_sq, double sum_mse) {
  if (jacobian_row_norm_sq_over_zu_sq < 0.0 || sum_mse < 0.0) {
    throw InvalidArgumentError("variance_of_ratio: inputs must be nonnegative");
  }
  return jacobian_row_norm_sq_over_zu_sq * sum_mse;
}

double ratio_sensitivity(const ModelConfig& cfg, const ParameterSet& theta_u, const ImageSet& x,
                         double noise_per_unit_mse, int probes, std::uint64_t seed, double h) {
  if (probes < 1 || x.empty()) throw InvalidArgumentError("ratio_sensitivity: need probes and images");
  const Logits z0 = forward(theta_u, cfg, x);
  const auto cls = argmax_rows(z0);
  Rng rng(derive_seed(seed, "ratio_sensitivity"));
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd jv2 = Eigen::VectorXd::Zero(z0.rows());
  for (int p = 0; p < probes; ++p) {
    ParameterSet v = zeros_like(theta_u);
    for (auto& g : v.groups()) {
      for (double& e : g.values) e = n01(rng);
    }
    const Logits d = (forward(offset(theta_u, v, h), cfg, x) - forward(offset(theta_u, v, -h), cfg, x)) /
                     (2.0 * h);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const double jv = d(i, cls[static_cast<std::size_t>(i)]);
      jv2(i) += jv * jv / probes;
    }
  }
  // Median over images: images whose chosen logit is near zero make the
  // mean heavy-tailed.
  std::vector<double> per_image;
  for (Eigen::Index i = 0; i < z0.rows(); ++i) {
    const double zu = z0(i, cls[static_cast<std::size_t>(i)]);
    if (std::abs(zu) <= 1e-12) continue;
    per_image.push_back(jv2(i) / (zu * zu));
  }
  if (per_image.empty()) throw DegenerateInputError("ratio_sensitivity: all chosen logits are zero");
  const auto mid = per_image.begin() + static_cast<std::ptrdiff_t>(per_image.size() / 2);
  std::nth_element(per_image.begin(), mid, per_image.end());
  double med = *mid;
  if (per_image.size() % 2 == 0) med = 0.5 * (med + *std::max_element(per_image.begin(), mid));
  return noise_per_unit_mse * med;
}

HypothesisResult run_hypothesis_test(const std::vector<double>& ratio_samples, double T) {
  if (ratio_samples.empty()) throw InvalidArgumentError("run_hypothesis_test: no samples");
  if (!(T >= 0.0)) throw InvalidArgumentError("run_hypothesis_test: negative threshold");
  HypothesisResult r;
  r.ratio_samples = ratio_samples;
  r.T = T;
  std::size_t rejects = 0;
  for (double s : ratio_samples) rejects += std::abs(s - 1.0) > T ? 1 : 0;
  r.reject_rate = static_cast<double>(rejects) / static_cast<double>(ratio_samples.size());
  return r;
}

Eigen::MatrixXd cosine_matrix(const std::vector<TaskVector>& vectors) {
  if (vectors.size() < 2) throw InvalidArgumentError("cosine_matrix: need at least two vectors");
  const auto n = static_cast<Eigen::Index>(vectors.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = cosine_similarity(vectors[static_cast<std::size_t>(i)],
                                         vectors[static_cast<std::size_t>(j)]);
      m(i, j) = c;
      m(j, i) = c;
    }
  }
  return m;
}

OffDiagonal off_diagonal_stats(const Eigen::MatrixXd& m) {
  OffDiagonal s;
  s.max = -1.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i == j) continue;
      sum += m(i, j);
      s.max = std::max(s.max, m(i, j));
      ++count;
    }
  }
  if (count == 0) return OffDiagonal{};
  s.mean = sum / static_cast<double>(count);
  return s;
}

}  // namespace taskfuse
