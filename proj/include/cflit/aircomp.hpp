#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cflit/error.hpp"
#include "cflit/rng.hpp"

namespace cflit::aircomp {

using Eigen::Index;

/// Variance floor below which an update is treated as constant.
inline constexpr double kStdFloor = 1e-12;

/// Per-device statistics of a local model change. `symbols` holds the
/// zero-mean, unit-variance transmit vector (all zeros when degenerate).
struct LocalUpdateStats {
  Eigen::VectorXd delta;
  double mean = 0.0;
  double std = 0.0;
  double weight = 1.0;
  Eigen::VectorXd symbols;
  bool degenerate = false;
};

LocalUpdateStats normalize_update(const Eigen::Ref<const Eigen::VectorXd>& delta, double weight = 1.0);

/// Transmit scalars p (devices x RBs), receive de-noising scalars c (one per
/// RB), and the per-RB power cap they were designed for.
struct TransceiverDesign {
  Eigen::MatrixXcd transmit;
  Eigen::VectorXcd denoise;
  double power_cap = 1.0;
};

struct RbTransceiver {
  Eigen::VectorXcd transmit;
  std::complex<double> denoise;
};

/// MMSE-optimal scalars for one RB: c = max_k(rho_k nu_k / |h_k|) / sqrt(P1)
/// and p_k = rho_k nu_k / (c h_k), so c h_k p_k / nu_k = rho_k for every
/// device with nu_k > 0. Devices with nu_k = 0 transmit nothing.
RbTransceiver optimal_transceiver(const Eigen::Ref<const Eigen::VectorXcd>& channels,
                                  const Eigen::Ref<const Eigen::VectorXd>& weights,
                                  const Eigen::Ref<const Eigen::VectorXd>& stds, double power_cap);

/// Applies optimal_transceiver to every column of a devices x RBs channel matrix.
TransceiverDesign design_transceivers(const Eigen::Ref<const Eigen::MatrixXcd>& channels,
                                      const Eigen::Ref<const Eigen::VectorXd>& weights,
                                      const Eigen::Ref<const Eigen::VectorXd>& stds, double power_cap);

/// Closed-form minimum aggregation MSE,
/// e = (sigma^2 / P1) * sum_i max_k rho_k^2 nu_k^2 / |h_{k,i}|^2.
double aggregation_mse(const Eigen::Ref<const Eigen::MatrixXcd>& channels,
                       const Eigen::Ref<const Eigen::VectorXd>& weights,
                       const Eigen::Ref<const Eigen::VectorXd>& stds, double power_cap, double noise_var);

struct AggregationResult {
  /// Real-valued estimate Re(c y) + mean term used for the model update.
  Eigen::VectorXd estimate;
  /// Noise-free weighted sum of local changes.
  Eigen::VectorXd exact;
  /// ||estimate - exact||^2. Only the in-phase noise component survives
  /// demodulation, so its expectation is half of mse_closed_form.
  double mse_realized = 0.0;
  /// sum_i |c_i y_i + mean - r_i|^2 on the complex pre-demodulation
  /// estimate; its expectation equals mse_closed_form.
  double mse_complex = 0.0;
  double mse_closed_form = 0.0;
};

/// One noisy over-the-air round: y_i = sum_k h_{k,i} p_{k,i} x_k[i] + z_i,
/// z_i ~ CN(0, sigma^2), estimate_i = Re(c_i y_i) + sum_k rho_k mean_k.
AggregationResult aggregate_over_air(const std::vector<LocalUpdateStats>& stats, const TransceiverDesign& design,
                                     const Eigen::Ref<const Eigen::MatrixXcd>& channels, double noise_var,
                                     CounterRng& rng);

AggregationResult aggregate_over_air(const std::vector<LocalUpdateStats>& stats, const TransceiverDesign& design,
                                     const Eigen::Ref<const Eigen::MatrixXcd>& channels, double noise_var,
                                     std::uint64_t seed);

/// Upper bound on the expected aggregation MSE for clipped local SGD:
/// lambda^2 tau^2 G^2 sigma^2 / P1 * E[max_k rho_k^2 / |h_k|^2].
double expected_mse_bound(double learning_rate, int tau, double grad_bound, double noise_var, double power_cap,
                          double channel_term);

/// Sample mean of max_k rho_k^2 / g_k over the columns of a devices x samples
/// gain matrix. Gains below `gain_floor` are clamped up to it.
double channel_term_from_gains(const Eigen::Ref<const Eigen::VectorXd>& weights,
                               const Eigen::Ref<const Eigen::MatrixXd>& gains,
                               std::optional<double> gain_floor = std::nullopt);

/// Monte Carlo estimate of E[max_k rho_k^2 / |h_k|^2] with h_k ~ CN(0,1).
/// The exact expectation is infinite for Rayleigh fading (the density of
/// |h|^2 is positive at zero), so the value depends on n_samples and on the
/// optional gain floor.
double estimate_channel_term(const Eigen::Ref<const Eigen::VectorXd>& weights, std::int64_t n_samples,
                             std::uint64_t seed, std::optional<double> gain_floor = std::nullopt);

}  // namespace cflit::aircomp
