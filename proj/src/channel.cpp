// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "taskfuse/error.hpp"
#include "taskfuse/rng.hpp"

namespace taskfuse {

namespace {

// h^H X^-1 h through a Cholesky factor of X.
double quad_inverse(const CMatrix& X, const CVector& h, const char* what) {
  Eigen::LLT<CMatrix> llt(X);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": interference-plus-noise matrix is not positive definite");
  }
  const CVector y = llt.matrixL().solve(h);
  return y.squaredNorm();
}

double log_det_pd(const CMatrix& X, const char* what) {
  Eigen::LLT<CMatrix> llt(X);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": matrix is not positive definite");
  }
  double s = 0.0;
  const CMatrix& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) s += std::log(L(i, i).real());
  return 2.0 * s;
}

// Interference-plus-noise covariance seen by user q under SIC.
CMatrix interference_plus_noise(int q, const ChannelState& s) {
  CMatrix X = s.C_z;
  const auto pos = std::find(s.order.begin(), s.order.end(), q);
  for (auto it = std::next(pos); it != s.order.end(); ++it) {
    const auto& h = s.H.col(*it);
    X.noalias() += s.p[static_cast<std::size_t>(*it)] * (h * h.adjoint());
  }
  return X;
}

double sinr(int q, const ChannelState& s) {
  if (q < 0 || q >= s.num_users()) throw InvalidArgumentError("user index out of range");
  const double p = s.p[static_cast<std::size_t>(q)];
  if (p == 0.0) return 0.0;
  return p * quad_inverse(interference_plus_noise(q, s), s.H.col(q), "user_rate");
}

}  // namespace

double path_loss(double distance_m) {
  if (!(distance_m > 0.0)) throw InvalidArgumentError("path_loss: distance must be positive");
  return std::pow(distance_m / kReferenceDistance, -kPathLossExponent);
}

std::vector<double> sample_positions(int num_users, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "channel.positions"));
  std::uniform_real_distribution<double> u(kMinDistance, kMaxDistance);
  std::vector<double> d(static_cast<std::size_t>(num_users));
  for (auto& x : d) x = u(rng);
  return d;
}

CMatrix sample_channels(int num_users, int num_rx, std::span<const double> positions,
                        std::uint64_t seed) {
  if (num_users < 1 || num_rx < 1) throw InvalidArgumentError("sample_channels: need Q, N_R >= 1");
  if (positions.size() != static_cast<std::size_t>(num_users)) {
    throw InvalidArgumentError("sample_channels: one position per user required");
  }
  Rng rng(derive_seed(seed, "channel.fading"));
  // CN(0, 1): real and imaginary parts each N(0, 1/2).
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  CMatrix H(num_rx, num_users);
  for (int q = 0; q < num_users; ++q) {
    const double d = positions[static_cast<std::size_t>(q)];
    if (!(d > 0.0)) throw InvalidArgumentError("sample_channels: nonpositive distance");
    const double gain = std::sqrt(path_loss(d));
    for (int r = 0; r < num_rx; ++r) {
      const double re = n(rng);
      const double im = n(rng);
      H(r, q) = gain * std::complex<double>(re, im);
    }
  }
  return H;
}

std::vector<int> sic_order(const CMatrix& H, std::span<const double> powers) {
  if (powers.size() != static_cast<std::size_t>(H.cols())) {
    throw InvalidArgumentError("sic_order: one power per channel column required");
  }
  std::vector<double> strength(powers.size());
  for (std::size_t q = 0; q < powers.size(); ++q) {
    strength[q] = powers[q] * H.col(static_cast<Eigen::Index>(q)).squaredNorm();
  }
  std::vector<int> order(powers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return strength[static_cast<std::size_t>(a)] < strength[static_cast<std::size_t>(b)];
  });
  return order;
}

void ChannelState::validate() const {
  const auto q = static_cast<std::size_t>(num_users());
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgumentError("channel state: " + what);
  };
  require(p.size() == q && p_max.size() == q, "power vectors must have one entry per user");
  require(C_z.rows() == H.rows() && C_z.cols() == H.rows(), "C_z must be N_R x N_R");
  require((C_z - C_z.adjoint()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, C_z.cwiseAbs().maxCoeff()),
          "C_z must be Hermitian");
  require(C_z.trace().real() <= P_N * (1.0 + 1e-9), "trace(C_z) exceeds P_N");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(C_z, Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() >= -1e-12, "C_z must be positive semidefinite");
  for (std::size_t i = 0; i < q; ++i) {
    require(p[i] >= 0.0 && p[i] <= p_max[i], "powers must satisfy 0 <= p_q <= P_max,q");
  }
  require(order == sic_order(H, p), "SIC order must be ascending p_q ||h_q||^2");
}

ChannelState make_state(CMatrix H, std::vector<double> p_max, CMatrix C_z, double P_N,
                        std::vector<double> positions) {
  ChannelState s;
  s.H = std::move(H);
  s.p = p_max;
  s.p_max = std::move(p_max);
  s.C_z = std::move(C_z);
  s.P_N = P_N;
  s.order = sic_order(s.H, s.p);
  s.positions = std::move(positions);
  return s;
}

double user_rate(int q, const ChannelState& state) { return std::log1p(sinr(q, state)); }

double mmse(int q, const ChannelState& state) { return 1.0 / (1.0 + sinr(q, state)); }

SumRate sum_rate(const ChannelState& state) {
  CMatrix S = CMatrix::Zero(state.num_rx(), state.num_rx());
  double trace_sum = 0.0;
  Eigen::LLT<CMatrix> noise(state.C_z);
  if (noise.info() != Eigen::Success) throw NumericalError("sum_rate: C_z is singular");
  for (int q = 0; q < state.num_users(); ++q) {
    const double p = state.p[static_cast<std::size_t>(q)];
    const auto& h = state.H.col(q);
    S.noalias() += p * (h * h.adjoint());
    trace_sum += p * noise.matrixL().solve(h).squaredNorm();
  }
  SumRate out;
  out.logdet = log_det_pd(state.C_z + S, "sum_rate") - log_det_pd(state.C_z, "sum_rate");
  out.trace_form = std::log1p(trace_sum);
  return out;
}

double report_snr(const ChannelState& state) {
  const double noise = state.C_z.trace().real();
  if (!(noise > 0.0)) throw InvalidArgumentError("report_snr: zero noise trace");
  double signal = 0.0;
  for (int q = 0; q < state.num_users(); ++q) {
    signal += state.p[static_cast<std::size_t>(q)] * state.H.col(q).squaredNorm();
  }
  return 10.0 * std::log10(signal / noise);
}

double LinkMetrics::mean_mse() const {
  if (mse.empty()) return 0.0;
  return std::accumulate(mse.begin(), mse.end(), 0.0) / static_cast<double>(mse.size());
}

LinkMetrics link_metrics(const ChannelState& state) {
  LinkMetrics m;
  for (int q = 0; q < state.num_users(); ++q) {
    const double g = sinr(q, state);
    m.rate.push_back(std::log1p(g));
    m.mse.push_back(1.0 / (1.0 + g));
  }
  const SumRate sr = sum_rate(state);
  m.sum_rate = sr.logdet;
  m.sum_rate_trace_form = sr.trace_form;
  m.snr_db = report_snr(state);
  return m;
}

double calibrate_noise_power(int num_users, int num_rx, double p_max, double target_db, int draws,
                             std::uint64_t seed) {
  if (draws < 1) throw InvalidArgumentError("calibrate_noise_power: draws must be >= 1");
  // With trace(C_z) = P_N the reported SNR is 10 log10(S) - 10 log10(P_N), so
  // the mean over draws is linear in 10 log10(P_N).
  double mean_signal_db = 0.0;
  for (int i = 0; i < draws; ++i) {
    const std::uint64_t s = derive_seed(seed, "calibration", static_cast<std::uint64_t>(i));
    const auto pos = sample_positions(num_users, s);
    const CMatrix H = sample_channels(num_users, num_rx, pos, s);
    double signal = 0.0;
    for (int q = 0; q < num_users; ++q) signal += p_max * H.col(q).squaredNorm();
    mean_signal_db += 10.0 * std::log10(signal);
  }
  mean_signal_db /= draws;
  return std::pow(10.0, (mean_signal_db - target_db) / 10.0);
}

}  // namespace taskfuse
