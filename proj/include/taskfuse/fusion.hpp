// SPDX-License-Identifier: Apache-2.0
//
// Task-vector transport over the noisy uplink and aggregation into the
// multi-task model.
//
// Transport noise per element has variance kappa * mu_q * ms(tau_q), where
// ms is the mean squared element of the clean vector. The noise of user q is
//   eps_q = sigma_q * (sqrt(rho) * c + sqrt(1 - rho) * u_q)
// with c a stream shared by every user of one fusion round and u_q private to
// the task. rho is the concentration of the noise covariance
// (trace(C^2) / trace(C)^2): 1/N_R for isotropic noise, 1 for rank one.
// Setting rho = 0 gives independent per-user noise.
#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "taskfuse/channel.hpp"
#include "taskfuse/dataset.hpp"
#include "taskfuse/params.hpp"
#include "taskfuse/tinyvit.hpp"

namespace taskfuse {

struct TransportConfig {
  double kappa = 1.0;
  std::map<int, double> lambda_table = default_lambda_table();
  std::uint64_t seed = 0;
  // Use the covariance concentration as the shared-noise fraction. When
  // false every user's noise is independent.
  bool correlated_noise = true;

  static std::map<int, double> default_lambda_table();
  double lambda_for(int n_tasks) const;
  void validate() const;
};

// trace(C^2) / trace(C)^2, in [1/N_R, 1].
double noise_concentration(const CMatrix& C_z);

// tau + eps as described above. `common_fraction` is rho; the shared stream is
// seeded by tcfg.seed alone and the private one by (tcfg.seed, task_id).
TaskVector transmit_task_vector(const TaskVector& tau, double mu_q, const TransportConfig& tcfg,
                                double common_fraction = 0.0);

ParameterSet fuse(const ParameterSet& base, const std::vector<TaskVector>& vectors,
                  const TransportConfig& tcfg);

struct NormalizedAccuracy {
  std::vector<double> raw;
  std::vector<double> reference;
  std::vector<double> normalized;  // raw / reference, not clamped
  double mean = 0.0;
};

NormalizedAccuracy normalized_accuracy(const ParameterSet& merged, const ModelConfig& cfg,
                                       const std::vector<ParameterSet>& finetuned_refs,
                                       const std::vector<ImageSet>& datasets);

// Same, with reference accuracies already measured.
NormalizedAccuracy normalized_accuracy(const ParameterSet& merged, const ModelConfig& cfg,
                                       const std::vector<double>& reference_acc,
                                       const std::vector<ImageSet>& datasets);

struct LambdaSweepPoint {
  double lambda = 0.0;
  double mean_normalized = 0.0;
};

struct LambdaSweep {
  std::vector<LambdaSweepPoint> points;
  double best_lambda = 0.0;  // first maximum in grid order
};

// Evaluates clean fusion of `vectors` for every lambda in `grid` on held-out
// sets (one per vector) and picks the best.
LambdaSweep sweep_lambda(const ParameterSet& base, const ModelConfig& cfg,
                         const std::vector<TaskVector>& vectors,
                         const std::vector<ParameterSet>& finetuned_refs,
                         const std::vector<ImageSet>& heldout, const std::vector<double>& grid);

std::vector<double> default_lambda_grid();  // 0.1, 0.2, ..., 1.0

}  // namespace taskfuse
