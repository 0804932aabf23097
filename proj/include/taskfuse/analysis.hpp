// SPDX-License-Identifier: Apache-2.0
//
// Interference analytics over merged models: weight disentanglement error,
// the logit-ratio test of disturbed vs undisturbed outputs, and cosine
// similarity between task vectors.
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "taskfuse/dataset.hpp"
#include "taskfuse/params.hpp"
#include "taskfuse/tinyvit.hpp"

namespace taskfuse {

struct WdeReport {
  double xi = 0.0;
  std::vector<double> per_task_disagreement;
  std::vector<double> lambda_single;
  double lambda_joint = 0.0;
  std::vector<std::size_t> sample_counts;
};

// For task i, the fraction of dataset i on which base + lambda_single[i] tau_i
// and base + lambda_joint * sum tau predict different classes; xi sums them.
WdeReport wde(const ParameterSet& base, const std::vector<TaskVector>& vectors,
              const std::vector<double>& lambda_single, double lambda_joint,
              const std::vector<ImageSet>& datasets, const ModelConfig& cfg);

struct RatioSample {
  double ratio = 1.0;  // z_u / z_d at the class chosen by theta_u
  int cls = 0;
  std::vector<double> per_class;  // z_u / z_d for every class (diagnostic)
};

// One ratio per image. Throws DegenerateInputError when the disturbed logit
// at the chosen class is within 1e-12 of zero.
std::vector<RatioSample> logit_ratios(const ModelConfig& cfg, const ParameterSet& theta_u,
                                      const ParameterSet& theta_d, const ImageSet& x);
double logit_ratio(const ModelConfig& cfg, const ParameterSet& theta_u,
                   const ParameterSet& theta_d, const ImageSet& x_single);

struct TaylorCheck {
  Logits exact;   // z(theta + d) - z(theta)
  Logits linear;  // central difference along d with step h
  double error() const;  // Frobenius norm of exact - linear
};

TaylorCheck taylor_check(const ModelConfig& cfg, const ParameterSet& theta_u,
                         const ParameterSet& delta_theta, const ImageSet& x, double h = 1e-3);

// theta + scale * delta.
ParameterSet offset(const ParameterSet& theta, const ParameterSet& delta, double scale);

// Upper-beta standard normal quantile.
double z_beta(double beta);
double threshold(double beta, double variance_estimate);
double variance_of_ratio(double jacobian_row_norm_sq_over_zu_sq, double sum_mse);

// Median over images of ||J_c||^2 / z_u,c^2 at the argmax class c, scaled by
// `noise_per_unit_mse` (the per-element parameter variance that one unit of
// MSE induces). ||J_c||^2 is estimated as E[(J_c v)^2] over `probes` random
// Gaussian directions, each by a central difference.
double ratio_sensitivity(const ModelConfig& cfg, const ParameterSet& theta_u, const ImageSet& x,
                         double noise_per_unit_mse, int probes, std::uint64_t seed,
                         double h = 1e-4);

struct HypothesisResult {
  std::vector<double> ratio_samples;
  double T = 0.0;
  double z_beta = 0.0;
  double beta = 0.0;
  double reject_rate = 0.0;
  double variance_estimate = 0.0;
};

// Rejects a sample when |R - 1| > T.
HypothesisResult run_hypothesis_test(const std::vector<double>& ratio_samples, double T);

Eigen::MatrixXd cosine_matrix(const std::vector<TaskVector>& vectors);

struct OffDiagonal {
  double mean = 0.0;
  double max = 0.0;
};
OffDiagonal off_diagonal_stats(const Eigen::MatrixXd& m);

}  // namespace taskfuse
