// SPDX-License-Identifier: Apache-2.0
//
// MIMO multiple-access uplink: Q single-antenna users, N_R receive antennas,
// successive interference cancellation at the receiver. Rates are in nats.
//
// User indices are 0-based throughout the API.
#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace taskfuse {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline constexpr double kReferenceDistance = 100.0;  // meters
inline constexpr double kPathLossExponent = 3.5;
inline constexpr double kMinDistance = 100.0;
inline constexpr double kMaxDistance = 1000.0;

// Power gain (d / 100 m)^-3.5.
double path_loss(double distance_m);

std::vector<double> sample_positions(int num_users, std::uint64_t seed);

// Column q is sqrt(PL(d_q)) * g_q with g_q ~ CN(0, I).
CMatrix sample_channels(int num_users, int num_rx, std::span<const double> positions,
                        std::uint64_t seed);

// Users sorted by ascending p_q ||h_q||^2, ties by index. The last entry is
// the strongest user, decoded last.
std::vector<int> sic_order(const CMatrix& H, std::span<const double> powers);

struct ChannelState {
  CMatrix H;                 // N_R x Q
  std::vector<double> p;     // transmit powers (W)
  std::vector<double> p_max; // per-user caps (W)
  CMatrix C_z;               // noise covariance, Hermitian PSD
  double P_N = 0.0;          // noise power budget (W)
  std::vector<int> order;    // SIC order, see sic_order()
  std::vector<double> positions;

  int num_users() const { return static_cast<int>(H.cols()); }
  int num_rx() const { return static_cast<int>(H.rows()); }

  // Throws InvalidArgumentError naming the violated invariant.
  void validate() const;
};

// Builds a state with p = p_max and the SIC order filled in.
ChannelState make_state(CMatrix H, std::vector<double> p_max, CMatrix C_z, double P_N,
                        std::vector<double> positions = {});

double user_rate(int q, const ChannelState& state);
double mmse(int q, const ChannelState& state);

struct SumRate {
  double logdet = 0.0;      // log det(I + H P H^H C_z^-1), authoritative
  double trace_form = 0.0;  // log(1 + sum_q p_q h_q^H C_z^-1 h_q), diagnostic only
};

SumRate sum_rate(const ChannelState& state);

// 10 log10(sum_q p_q ||h_q||^2 / trace(C_z)).
double report_snr(const ChannelState& state);

struct LinkMetrics {
  std::vector<double> rate;  // R_q
  std::vector<double> mse;   // mu_q
  double sum_rate = 0.0;
  double sum_rate_trace_form = 0.0;
  double snr_db = 0.0;

  double mean_mse() const;
};

LinkMetrics link_metrics(const ChannelState& state);

// Noise power that makes the mean reported SNR (in dB) over `draws` random
// placements equal `target_db` with isotropic noise.
double calibrate_noise_power(int num_users, int num_rx, double p_max, double target_db, int draws,
                             std::uint64_t seed);

}  // namespace taskfuse
