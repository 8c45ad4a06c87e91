#include "cflit/aircomp.hpp"

#include <cmath>

namespace cflit::aircomp {

namespace {

void check_device_vectors(Index devices, const Eigen::Ref<const Eigen::VectorXd>& weights,
                          const Eigen::Ref<const Eigen::VectorXd>& stds) {
  if (devices < 1) throw InvalidInput("aircomp: at least one device is required");
  if (weights.size() != devices || stds.size() != devices) {
    throw InvalidInput("aircomp: weights/stds length does not match device count");
  }
  if ((stds.array() < 0.0).any()) throw InvalidInput("aircomp: negative update std");
}

}  // namespace

LocalUpdateStats normalize_update(const Eigen::Ref<const Eigen::VectorXd>& delta, double weight) {
  if (delta.size() == 0) throw InvalidInput("normalize_update: empty update");
  LocalUpdateStats out;
  out.delta = delta;
  out.weight = weight;
  const auto d = static_cast<double>(delta.size());
  out.mean = delta.mean();
  const Eigen::ArrayXd centered = delta.array() - out.mean;
  out.std = std::sqrt(centered.square().sum() / d);
  if (out.std < kStdFloor) {
    out.degenerate = true;
    out.std = 0.0;
    out.symbols = Eigen::VectorXd::Zero(delta.size());
  } else {
    out.symbols = (centered / out.std).matrix();
  }
  return out;
}

RbTransceiver optimal_transceiver(const Eigen::Ref<const Eigen::VectorXcd>& channels,
                                  const Eigen::Ref<const Eigen::VectorXd>& weights,
                                  const Eigen::Ref<const Eigen::VectorXd>& stds, double power_cap) {
  const Index devices = channels.size();
  check_device_vectors(devices, weights, stds);
  if (!(power_cap > 0.0)) throw InvalidConfig("optimal_transceiver: power cap must be > 0");

  double ratio = 0.0;
  for (Index k = 0; k < devices; ++k) {
    const double magnitude = std::abs(channels(k));
    if (magnitude == 0.0) throw DegenerateChannel("optimal_transceiver: zero channel coefficient");
    ratio = std::max(ratio, weights(k) * stds(k) / magnitude);
  }

  RbTransceiver out{Eigen::VectorXcd::Zero(devices), ratio / std::sqrt(power_cap)};
  if (ratio == 0.0) return out;
  for (Index k = 0; k < devices; ++k) {
    if (stds(k) > 0.0) out.transmit(k) = weights(k) * stds(k) / (out.denoise * channels(k));
  }
  return out;
}

TransceiverDesign design_transceivers(const Eigen::Ref<const Eigen::MatrixXcd>& channels,
                                      const Eigen::Ref<const Eigen::VectorXd>& weights,
                                      const Eigen::Ref<const Eigen::VectorXd>& stds, double power_cap) {
  TransceiverDesign design;
  design.power_cap = power_cap;
  design.transmit.resize(channels.rows(), channels.cols());
  design.denoise.resize(channels.cols());
  for (Index i = 0; i < channels.cols(); ++i) {
    RbTransceiver rb = optimal_transceiver(channels.col(i), weights, stds, power_cap);
    design.transmit.col(i) = rb.transmit;
    design.denoise(i) = rb.denoise;
  }
  return design;
}

double aggregation_mse(const Eigen::Ref<const Eigen::MatrixXcd>& channels,
                       const Eigen::Ref<const Eigen::VectorXd>& weights,
                       const Eigen::Ref<const Eigen::VectorXd>& stds, double power_cap, double noise_var) {
  check_device_vectors(channels.rows(), weights, stds);
  if (channels.cols() < 1) throw InvalidInput("aggregation_mse: need at least one RB");
  if (!(power_cap > 0.0)) throw InvalidConfig("aggregation_mse: power cap must be > 0");
  if (noise_var < 0.0) throw InvalidConfig("aggregation_mse: noise variance must be >= 0");

  const Eigen::ArrayXd scale = (weights.array() * stds.array()).square();
  double total = 0.0;
  for (Index i = 0; i < channels.cols(); ++i) {
    const Eigen::ArrayXd gains = channels.col(i).cwiseAbs2().array();
    if ((gains == 0.0).any()) throw DegenerateChannel("aggregation_mse: zero channel coefficient");
    total += (scale / gains).maxCoeff();
  }
  return noise_var / power_cap * total;
}

AggregationResult aggregate_over_air(const std::vector<LocalUpdateStats>& stats, const TransceiverDesign& design,
                                     const Eigen::Ref<const Eigen::MatrixXcd>& channels, double noise_var,
                                     CounterRng& rng) {
  const auto devices = static_cast<Index>(stats.size());
  if (devices < 1) throw InvalidInput("aggregate_over_air: no devices");
  const Index d = stats.front().delta.size();
  if (channels.rows() != devices || channels.cols() != d || design.transmit.rows() != devices ||
      design.transmit.cols() != d || design.denoise.size() != d) {
    throw InvalidInput("aggregate_over_air: dimension mismatch between stats, design and channels");
  }
  if (noise_var < 0.0) throw InvalidConfig("aggregate_over_air: noise variance must be >= 0");

  Eigen::VectorXd weights(devices), stds(devices);
  AggregationResult out;
  out.exact = Eigen::VectorXd::Zero(d);
  double mean_term = 0.0;
  for (Index k = 0; k < devices; ++k) {
    const LocalUpdateStats& s = stats[static_cast<std::size_t>(k)];
    if (s.delta.size() != d) throw InvalidInput("aggregate_over_air: update length mismatch");
    weights(k) = s.weight;
    stds(k) = s.std;
    out.exact += s.weight * s.delta;
    mean_term += s.weight * s.mean;
  }

  // Received superposition per RB, then linear de-noising.
  Eigen::VectorXcd received = Eigen::VectorXcd::Zero(d);
  for (Index k = 0; k < devices; ++k) {
    received += channels.row(k).transpose().cwiseProduct(design.transmit.row(k).transpose()).cwiseProduct(
        stats[static_cast<std::size_t>(k)].symbols.cast<std::complex<double>>());
  }
  for (Index i = 0; i < d; ++i) received(i) += rng.complex_normal(noise_var);

  const Eigen::VectorXcd complex_estimate =
      design.denoise.cwiseProduct(received).array() + std::complex<double>(mean_term, 0.0);
  out.estimate = complex_estimate.real();
  out.mse_realized = (out.estimate - out.exact).squaredNorm();
  out.mse_complex = (complex_estimate - out.exact.cast<std::complex<double>>()).squaredNorm();
  out.mse_closed_form = aggregation_mse(channels, weights, stds, design.power_cap, noise_var);
  return out;
}

AggregationResult aggregate_over_air(const std::vector<LocalUpdateStats>& stats, const TransceiverDesign& design,
                                     const Eigen::Ref<const Eigen::MatrixXcd>& channels, double noise_var,
                                     std::uint64_t seed) {
  CounterRng rng(seed);
  return aggregate_over_air(stats, design, channels, noise_var, rng);
}

double expected_mse_bound(double learning_rate, int tau, double grad_bound, double noise_var, double power_cap,
                          double channel_term) {
  if (!(learning_rate > 0.0) || tau < 1 || !(grad_bound > 0.0) || !(power_cap > 0.0) || !(channel_term > 0.0) ||
      noise_var < 0.0) {
    throw InvalidConfig("expected_mse_bound: parameters must be positive (noise variance may be zero)");
  }
  const double t = static_cast<double>(tau);
  return learning_rate * learning_rate * t * t * grad_bound * grad_bound * noise_var / power_cap * channel_term;
}

double channel_term_from_gains(const Eigen::Ref<const Eigen::VectorXd>& weights,
                               const Eigen::Ref<const Eigen::MatrixXd>& gains, std::optional<double> gain_floor) {
  if (weights.size() < 1 || gains.rows() != weights.size() || gains.cols() < 1) {
    throw InvalidInput("channel_term_from_gains: dimension mismatch");
  }
  const Eigen::ArrayXd weight_sq = weights.array().square();
  double total = 0.0;
  for (Index j = 0; j < gains.cols(); ++j) {
    Eigen::ArrayXd g = gains.col(j).array();
    if (gain_floor) g = g.max(*gain_floor);
    total += (weight_sq / g).maxCoeff();
  }
  return total / static_cast<double>(gains.cols());
}

double estimate_channel_term(const Eigen::Ref<const Eigen::VectorXd>& weights, std::int64_t n_samples,
                             std::uint64_t seed, std::optional<double> gain_floor) {
  if (weights.size() < 1 || (weights.array() <= 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
    throw InvalidInput("estimate_channel_term: weights must be positive and sum to 1");
  }
  if (n_samples < 1) throw InvalidInput("estimate_channel_term: n_samples must be >= 1");
  if (gain_floor && !(*gain_floor > 0.0)) throw InvalidInput("estimate_channel_term: gain floor must be > 0");

  CounterRng rng(seed);
  const Eigen::ArrayXd weight_sq = weights.array().square();
  double total = 0.0;
  for (std::int64_t j = 0; j < n_samples; ++j) {
    double worst = 0.0;
    for (Index k = 0; k < weights.size(); ++k) {
      double g = std::norm(rng.complex_normal());
      if (gain_floor) g = std::max(g, *gain_floor);
      worst = std::max(worst, weight_sq(k) / g);
    }
    total += worst;
  }
  return total / static_cast<double>(n_samples);
}

}  // namespace cflit::aircomp
