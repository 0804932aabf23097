// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/fusion.hpp"

#include <cmath>
#include <random>
#include <string>

#include "taskfuse/error.hpp"
#include "taskfuse/rng.hpp"

namespace taskfuse {

// Best clean-fusion lambda per N on held-out few-shot data, seeds 100..104
// (taskfuse lambda-sweep with the default config).
std::map<int, double> TransportConfig::default_lambda_table() {
  return {{1, 1.0}, {2, 0.7}, {3, 0.6}, {4, 0.4}, {5, 0.4}, {6, 0.3}, {7, 0.3}, {8, 0.2}};
}

double TransportConfig::lambda_for(int n_tasks) const {
  const auto it = lambda_table.find(n_tasks);
  if (it == lambda_table.end()) {
    throw InvalidArgumentError("no lambda entry for N = " + std::to_string(n_tasks));
  }
  return it->second;
}

void TransportConfig::validate() const {
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw InvalidArgumentError("kappa must be >= 0");
  for (const auto& [n, l] : lambda_table) {
    if (n < 1) throw InvalidArgumentError("lambda table keys must be >= 1");
    if (!(l >= 0.0 && l <= 1.0)) {
      throw InvalidArgumentError("lambda for N = " + std::to_string(n) + " outside [0, 1]");
    }
  }
}

double noise_concentration(const CMatrix& C_z) {
  const double tr = C_z.trace().real();
  if (!(tr > 0.0)) throw DegenerateInputError("noise_concentration: zero trace");
  // trace(C^2) = squared Frobenius norm for Hermitian C.
  return C_z.squaredNorm() / (tr * tr);
}

TaskVector transmit_task_vector(const TaskVector& tau, double mu_q, const TransportConfig& tcfg,
                                double common_fraction) {
  if (!(mu_q > 0.0 && mu_q <= 1.0)) throw InvalidArgumentError("transmit: mu_q must lie in (0, 1]");
  if (!(common_fraction >= 0.0 && common_fraction <= 1.0)) {
    throw InvalidArgumentError("transmit: common fraction must lie in [0, 1]");
  }
  tcfg.validate();
  TaskVector out = tau;
  if (tcfg.kappa == 0.0) return out;

  const double d = static_cast<double>(tau.delta.total_dim());
  const double variance = tcfg.kappa * mu_q * squared_norm(tau.delta) / d;
  out.is_perturbed = true;
  out.noise_variance_used = variance;
  if (variance == 0.0) return out;

  const double sigma = std::sqrt(variance);
  const double a = std::sqrt(common_fraction);
  const double b = std::sqrt(1.0 - common_fraction);
  Rng shared(derive_seed(tcfg.seed, "transport.common"));
  Rng own(derive_seed(tcfg.seed, "transport", tau.task_id));
  // One distribution per stream: normal_distribution caches draws.
  std::normal_distribution<double> n_shared(0.0, 1.0), n_own(0.0, 1.0);
  for (auto& g : out.delta.groups()) {
    for (double& v : g.values) {
      // Both streams advance once per element so the shared draw at element k
      // is the same for every user.
      const double c = n_shared(shared);
      const double u = n_own(own);
      v += sigma * (a * c + b * u);
    }
  }
  return out;
}

ParameterSet fuse(const ParameterSet& base, const std::vector<TaskVector>& vectors,
                  const TransportConfig& tcfg) {
  return add_scaled(base, vectors, tcfg.lambda_for(static_cast<int>(vectors.size())));
}

NormalizedAccuracy normalized_accuracy(const ParameterSet& merged, const ModelConfig& cfg,
                                       const std::vector<double>& reference_acc,
                                       const std::vector<ImageSet>& datasets) {
  if (reference_acc.size() != datasets.size() || datasets.empty()) {
    throw InvalidArgumentError("normalized_accuracy: one reference per dataset required");
  }
  NormalizedAccuracy out;
  out.reference = reference_acc;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    if (!(reference_acc[i] > 0.0)) {
      throw DegenerateInputError("normalized_accuracy: reference accuracy is zero for task " +
                                 std::to_string(i));
    }
    const double acc = evaluate(merged, cfg, datasets[i]);
    out.raw.push_back(acc);
    out.normalized.push_back(acc / reference_acc[i]);
    out.mean += out.normalized.back();
  }
  out.mean /= static_cast<double>(datasets.size());
  return out;
}

NormalizedAccuracy normalized_accuracy(const ParameterSet& merged, const ModelConfig& cfg,
                                       const std::vector<ParameterSet>& finetuned_refs,
                                       const std::vector<ImageSet>& datasets) {
  if (finetuned_refs.size() != datasets.size()) {
    throw InvalidArgumentError("normalized_accuracy: one reference model per dataset required");
  }
  std::vector<double> ref;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    ref.push_back(evaluate(finetuned_refs[i], cfg, datasets[i]));
  }
  return normalized_accuracy(merged, cfg, ref, datasets);
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

LambdaSweep sweep_lambda(const ParameterSet& base, const ModelConfig& cfg,
                         const std::vector<TaskVector>& vectors,
                         const std::vector<ParameterSet>& finetuned_refs,
                         const std::vector<ImageSet>& heldout, const std::vector<double>& grid) {
  if (grid.empty()) throw InvalidArgumentError("sweep_lambda: empty grid");
  std::vector<double> ref;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    ref.push_back(evaluate(finetuned_refs.at(i), cfg, heldout[i]));
  }
  LambdaSweep out;
  double best = -1.0;
  for (double l : grid) {
    const auto na = normalized_accuracy(add_scaled(base, vectors, l), cfg, ref, heldout);
    out.points.push_back({l, na.mean});
    if (na.mean > best) {
      best = na.mean;
      out.best_lambda = l;
    }
  }
  return out;
}

}  // namespace taskfuse
