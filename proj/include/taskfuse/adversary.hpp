// SPDX-License-Identifier: Apache-2.0
//
// Noise covariance designs: the isotropic benchmark, the sum-rate minimizer
// (P1), the strongest-user minimizer (P2), and a projected-gradient oracle
// used to certify the closed forms.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "taskfuse/channel.hpp"

namespace taskfuse {

enum class NoiseKind { ideal, worst_sum_rate, worst_strongest_user };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view name);

struct NoiseDesign {
  NoiseKind kind = NoiseKind::ideal;
  CMatrix C_z;
  double nu = 0.0;         // P1 bisection multiplier
  double delta_reg = 0.0;  // P2 isotropic mixing weight
  double achieved_objective = 0.0;
  std::vector<double> eigenvalues;  // of C_z, ascending
  bool oracle_substituted = false;  // P1 certification replaced the closed form
};

// Null-space eigenvalues of the P1 design are set to this fraction of the
// isotropic level so rates stay finite.
inline constexpr double kNullSpaceFloor = 1e-6;
inline constexpr double kDefaultDeltaReg = 1e-3;

CMatrix ideal_covariance(double P_N, int num_rx);

// Root of a monotone function on [lo, hi]; stops when the interval is
// narrower than tol. Throws InvalidArgumentError when f(lo), f(hi) have the
// same sign.
double bisect(const std::function<double(double)>& f, double lo, double hi, double tol);

// P1 eigenvalue for channel eigenvalue `upsilon` at multiplier `nu`.
double p1_sigma(double upsilon, double nu);

NoiseDesign design_ideal(const CMatrix& H, std::span<const double> p_caps, double P_N);
NoiseDesign solve_p1(const CMatrix& H, std::span<const double> p_caps, double P_N,
                     double tol = 1e-12);
NoiseDesign solve_p2(const CMatrix& H, std::span<const double> p_caps, double P_N,
                     double delta_reg = kDefaultDeltaReg);

enum class OracleObjective { sum_rate, strongest_user };

struct OracleOptions {
  int iters = 3000;
  double step = 0.5;  // initial step, relative to P_N
  std::optional<CMatrix> init;
  // Filled with the best objective after every iteration when non-null.
  std::vector<double>* trace = nullptr;
};

NoiseDesign oracle_min_covariance(const CMatrix& H, std::span<const double> p_caps, double P_N,
                                  OracleObjective objective, const OracleOptions& opts = {});

// Objective value of a given covariance (users at their caps).
double design_objective(const CMatrix& H, std::span<const double> p_caps, const CMatrix& C_z,
                        OracleObjective objective);

// solve_p1 checked against the oracle when N_R <= 8; the oracle design is
// returned (flagged) if it beats the closed form by more than 1e-2 relative.
NoiseDesign solve_p1_certified(const CMatrix& H, std::span<const double> p_caps, double P_N);

NoiseDesign design_noise(NoiseKind kind, const CMatrix& H, std::span<const double> p_caps,
                         double P_N, double delta_reg = kDefaultDeltaReg);

}  // namespace taskfuse
