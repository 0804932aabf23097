// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "taskfuse/error.hpp"

namespace taskfuse {

namespace {

CMatrix hermitian_part(const CMatrix& M) { return 0.5 * (M + M.adjoint()); }

CMatrix signal_covariance(const CMatrix& H, std::span<const double> p) {
  if (p.size() != static_cast<std::size_t>(H.cols())) {
    throw InvalidArgumentError("adversary: one power cap per user required");
  }
  CMatrix A = CMatrix::Zero(H.rows(), H.rows());
  for (Eigen::Index q = 0; q < H.cols(); ++q) {
    A.noalias() += p[static_cast<std::size_t>(q)] * (H.col(q) * H.col(q).adjoint());
  }
  return hermitian_part(A);
}

std::vector<double> ascending_eigenvalues(const CMatrix& C) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(C, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

double log_det(const CMatrix& X) {
  Eigen::LLT<CMatrix> llt(X);
  if (llt.info() != Eigen::Success) throw NumericalError("adversary: matrix is not positive definite");
  double s = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) s += std::log(llt.matrixLLT()(i, i).real());
  return 2.0 * s;
}

int strongest_user(const CMatrix& H, std::span<const double> p) { return sic_order(H, p).back(); }

void check_inputs(const CMatrix& H, std::span<const double> p_caps, double P_N) {
  if (!(P_N > 0.0)) throw InvalidArgumentError("adversary: P_N must be positive");
  if (H.rows() < 1 || H.cols() < 1) throw InvalidArgumentError("adversary: empty channel matrix");
  if (p_caps.size() != static_cast<std::size_t>(H.cols())) {
    throw InvalidArgumentError("adversary: one power cap per user required");
  }
}

// Euclidean projection onto {C Hermitian, C >= floor I, trace C = P_N}: the
// eigenvalues are projected onto the shifted simplex (common shift, then
// clipping at the floor) and the eigenvectors are kept.
CMatrix project(const CMatrix& C, double P_N, double floor) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian_part(C));
  const Eigen::VectorXd ev = es.eigenvalues();
  auto mass = [&](double shift) { return (ev.array() - shift).max(floor).sum(); };
  // mass() is nonincreasing in the shift; bracket and bisect for mass = P_N.
  double lo = ev.minCoeff() - P_N;
  double hi = ev.maxCoeff();
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) > P_N ? lo : hi) = mid;
  }
  Eigen::VectorXd out = (ev.array() - 0.5 * (lo + hi)).max(floor).matrix();
  out *= P_N / out.sum();
  return hermitian_part(es.eigenvectors() * out.asDiagonal() * es.eigenvectors().adjoint());
}

}  // namespace

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::ideal: return "ideal";
    case NoiseKind::worst_sum_rate: return "worst_sum_rate";
    case NoiseKind::worst_strongest_user: return "worst_strongest_user";
  }
  return "?";
}

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "ideal") return NoiseKind::ideal;
  if (name == "worst_sum_rate") return NoiseKind::worst_sum_rate;
  if (name == "worst_strongest_user") return NoiseKind::worst_strongest_user;
  throw InvalidArgumentError("unknown regime '" + std::string(name) + "'");
}

CMatrix ideal_covariance(double P_N, int num_rx) {
  if (!(P_N > 0.0)) throw InvalidArgumentError("ideal_covariance: P_N must be positive");
  return CMatrix::Identity(num_rx, num_rx) * (P_N / num_rx);
}

double bisect(const std::function<double(double)>& f, double lo, double hi, double tol) {
  if (!(tol > 0.0) || !(lo < hi)) throw InvalidArgumentError("bisect: need lo < hi and tol > 0");
  double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) {
    throw InvalidArgumentError("bisect: f does not change sign on [" + std::to_string(lo) + ", " +
                               std::to_string(hi) + "]");
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // interval at double resolution
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double p1_sigma(double upsilon, double nu) {
  if (upsilon <= 0.0) return 0.0;
  // (u/2)(sqrt(1 + 4/(u nu)) - 1) without the cancellation at large u nu.
  const double r = std::sqrt(1.0 + 4.0 / (upsilon * nu));
  return 2.0 / (nu * (r + 1.0));
}

double design_objective(const CMatrix& H, std::span<const double> p_caps, const CMatrix& C_z,
                        OracleObjective objective) {
  if (objective == OracleObjective::sum_rate) {
    return log_det(C_z + signal_covariance(H, p_caps)) - log_det(C_z);
  }
  const int q = strongest_user(H, p_caps);
  Eigen::LLT<CMatrix> llt(C_z);
  if (llt.info() != Eigen::Success) throw NumericalError("adversary: C_z is not positive definite");
  const double g = llt.matrixL().solve(H.col(q)).squaredNorm();
  return std::log1p(p_caps[static_cast<std::size_t>(q)] * g);
}

NoiseDesign design_ideal(const CMatrix& H, std::span<const double> p_caps, double P_N) {
  check_inputs(H, p_caps, P_N);
  NoiseDesign d;
  d.kind = NoiseKind::ideal;
  d.C_z = ideal_covariance(P_N, static_cast<int>(H.rows()));
  d.eigenvalues = ascending_eigenvalues(d.C_z);
  d.achieved_objective = design_objective(H, p_caps, d.C_z, OracleObjective::sum_rate);
  return d;
}

NoiseDesign solve_p1(const CMatrix& H, std::span<const double> p_caps, double P_N, double tol) {
  check_inputs(H, p_caps, P_N);
  if (H.cwiseAbs().maxCoeff() == 0.0) throw DegenerateInputError("solve_p1: all-zero channel");
  const int n = static_cast<int>(H.rows());
  const CMatrix A = signal_covariance(H, p_caps);
  Eigen::SelfAdjointEigenSolver<CMatrix> es(A);
  const Eigen::VectorXd ups = es.eigenvalues();
  const double zero_tol = 1e-12 * std::max(ups.maxCoeff(), 0.0);
  if (!(ups.maxCoeff() > 0.0)) throw DegenerateInputError("solve_p1: zero signal covariance");

  const double floor = kNullSpaceFloor * P_N / n;
  int null_dims = 0;
  for (int i = 0; i < n; ++i) null_dims += ups(i) <= zero_tol ? 1 : 0;
  const double budget = P_N - floor * null_dims;

  auto excess = [&](double t) {
    const double nu = std::exp(t);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += ups(i) > zero_tol ? p1_sigma(ups(i), nu) : 0.0;
    return s - budget;
  };
  // Trace is decreasing in nu; search in log(nu) for a bracket.
  double lo = 0.0;
  double hi = 0.0;
  while (excess(lo) <= 0.0) {
    lo -= 8.0;
    if (lo < -700.0) throw NumericalError("solve_p1: cannot bracket the multiplier");
  }
  while (excess(hi) >= 0.0) {
    hi += 8.0;
    if (hi > 700.0) throw NumericalError("solve_p1: cannot bracket the multiplier");
  }
  const double t = bisect(excess, lo, hi, tol);
  // Step to the feasible side so trace(C_z) never exceeds the budget.
  const double nu = std::exp(t + tol);

  Eigen::VectorXd sigma(n);
  for (int i = 0; i < n; ++i) sigma(i) = ups(i) > zero_tol ? p1_sigma(ups(i), nu) : floor;

  NoiseDesign d;
  d.kind = NoiseKind::worst_sum_rate;
  d.nu = nu;
  d.C_z = hermitian_part(es.eigenvectors() * sigma.asDiagonal() * es.eigenvectors().adjoint());
  d.eigenvalues = ascending_eigenvalues(d.C_z);
  d.achieved_objective = design_objective(H, p_caps, d.C_z, OracleObjective::sum_rate);
  return d;
}

NoiseDesign solve_p2(const CMatrix& H, std::span<const double> p_caps, double P_N,
                     double delta_reg) {
  check_inputs(H, p_caps, P_N);
  if (!(delta_reg > 0.0 && delta_reg <= 0.1)) {
    throw InvalidArgumentError("solve_p2: delta_reg must lie in (0, 0.1]");
  }
  const int q = strongest_user(H, p_caps);
  const CVector h = H.col(q);
  const double norm2 = h.squaredNorm();
  if (!(norm2 > 0.0)) throw DegenerateInputError("solve_p2: strongest user has a zero channel");
  const int n = static_cast<int>(H.rows());

  NoiseDesign d;
  d.kind = NoiseKind::worst_strongest_user;
  d.delta_reg = delta_reg;
  d.C_z = hermitian_part((1.0 - delta_reg) * P_N * (h * h.adjoint()) / norm2 +
                         ideal_covariance(P_N, n) * delta_reg);
  d.eigenvalues = ascending_eigenvalues(d.C_z);
  d.achieved_objective = design_objective(H, p_caps, d.C_z, OracleObjective::strongest_user);
  return d;
}

NoiseDesign oracle_min_covariance(const CMatrix& H, std::span<const double> p_caps, double P_N,
                                  OracleObjective objective, const OracleOptions& opts) {
  check_inputs(H, p_caps, P_N);
  const int n = static_cast<int>(H.rows());
  const double floor = kNullSpaceFloor * P_N / n;
  const CMatrix A = signal_covariance(H, p_caps);
  const int sq = strongest_user(H, p_caps);
  const CVector hq = H.col(sq);
  const double pq = p_caps[static_cast<std::size_t>(sq)];

  auto value = [&](const CMatrix& C) {
    const double v = design_objective(H, p_caps, C, objective);
    if (!std::isfinite(v)) throw NumericalError("oracle_min_covariance: non-finite objective");
    return v;
  };
  auto gradient = [&](const CMatrix& C) -> CMatrix {
    const CMatrix Cinv = C.llt().solve(CMatrix::Identity(n, n));
    if (objective == OracleObjective::sum_rate) {
      return hermitian_part(CMatrix((C + A).llt().solve(CMatrix::Identity(n, n))) - Cinv);
    }
    const CVector u = Cinv * hq;
    const double g = hq.dot(u).real();  // h^H C^-1 h
    return hermitian_part(-pq * (u * u.adjoint()) / (1.0 + pq * g));
  };

  CMatrix C = project(opts.init ? *opts.init : ideal_covariance(P_N, n), P_N, floor);
  double f = value(C);
  CMatrix best = C;
  double best_f = f;
  double eta = opts.step;
  for (int it = 0; it < opts.iters && eta > 1e-14; ++it) {
    // Descent direction C (G - mu I) C: preconditioned so near-null noise
    // directions are not over-weighted, with mu chosen to keep the trace.
    CMatrix G = gradient(C);
    const CMatrix C2 = C * C;
    const double mu = (C2 * G).trace().real() / C2.trace().real();
    G.diagonal().array() -= mu;
    G = hermitian_part(C * G * C);
    const double gnorm = G.norm();
    if (!(gnorm > 0.0)) break;
    const CMatrix trial = project(C - (eta * P_N / gnorm) * G, P_N, floor);
    const double ft = value(trial);
    if (ft < f) {
      C = trial;
      f = ft;
      eta *= 1.25;
    } else {
      eta *= 0.5;
    }
    if (f < best_f) {
      best_f = f;
      best = C;
    }
    if (opts.trace) opts.trace->push_back(best_f);
  }

  NoiseDesign d;
  d.kind = objective == OracleObjective::sum_rate ? NoiseKind::worst_sum_rate
                                                  : NoiseKind::worst_strongest_user;
  d.C_z = best;
  d.eigenvalues = ascending_eigenvalues(best);
  d.achieved_objective = best_f;
  return d;
}

NoiseDesign solve_p1_certified(const CMatrix& H, std::span<const double> p_caps, double P_N) {
  NoiseDesign closed = solve_p1(H, p_caps, P_N);
  if (H.rows() > 8) return closed;
  OracleOptions opts;
  opts.init = closed.C_z;
  NoiseDesign oracle = oracle_min_covariance(H, p_caps, P_N, OracleObjective::sum_rate, opts);
  if (oracle.achieved_objective < closed.achieved_objective * (1.0 - 1e-2)) {
    std::cerr << "warning: P1 closed form beaten by oracle (" << closed.achieved_objective << " vs "
              << oracle.achieved_objective << " nats); using oracle design\n";
    oracle.oracle_substituted = true;
    return oracle;
  }
  return closed;
}

NoiseDesign design_noise(NoiseKind kind, const CMatrix& H, std::span<const double> p_caps,
                         double P_N, double delta_reg) {
  switch (kind) {
    case NoiseKind::ideal: return design_ideal(H, p_caps, P_N);
    case NoiseKind::worst_sum_rate: return solve_p1_certified(H, p_caps, P_N);
    case NoiseKind::worst_strongest_user: return solve_p2(H, p_caps, P_N, delta_reg);
  }
  throw InvalidArgumentError("design_noise: unknown kind");
}

}  // namespace taskfuse
