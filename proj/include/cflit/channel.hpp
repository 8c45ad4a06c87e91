#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cflit/error.hpp"
#include "cflit/rng.hpp"

namespace cflit::channel {

using Eigen::Index;

enum class FadingProfile {
  /// i.i.d. CN(0,1) per (device, subcarrier, coherence block).
  Iid,
  /// Tapped delay line with an exponential power-delay profile; subcarrier
  /// responses are correlated, each with unit average power.
  TappedDelayLine,
};

struct ChannelConfig {
  Index devices = 1;
  Index subcarriers = 1;
  Index symbols = 1;
  Index coherence_len = 1;
  FadingProfile profile = FadingProfile::Iid;
  Index taps = 6;
  /// Power of tap l is proportional to exp(-decay * l).
  double tap_decay = 1.0;

  Index blocks() const { return (symbols + coherence_len - 1) / coherence_len; }
  void validate() const;
};

/// Lazily evaluated block-fading field. Every coefficient is a pure function
/// of (seed, device, subcarrier, block), so large horizons never need to be
/// materialized and concurrent readers share nothing mutable.
class FadingModel {
 public:
  FadingModel(const ChannelConfig& config, std::uint64_t seed);

  const ChannelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// Zero-based device k, subcarrier m, symbol s.
  std::complex<double> coefficient(Index device, Index subcarrier, Index symbol) const;
  double gain(Index device, Index subcarrier, Index symbol) const {
    return std::norm(coefficient(device, subcarrier, symbol));
  }

  /// Gains of all devices on one subcarrier/symbol.
  Eigen::VectorXd gains_at(Index subcarrier, Index symbol) const;
  /// devices x subcarriers gain matrix for one symbol.
  Eigen::MatrixXd symbol_gains(Index symbol) const;

 private:
  ChannelConfig config_;
  std::uint64_t seed_;
  Eigen::VectorXd tap_stddev_;
};

/// Materialized channel realization. Immutable after construction.
class ChannelGrid {
 public:
  ChannelGrid(const ChannelConfig& config, Eigen::VectorXcd coefficients);

  const ChannelConfig& config() const { return config_; }
  Index devices() const { return config_.devices; }
  Index subcarriers() const { return config_.subcarriers; }
  Index symbols() const { return config_.symbols; }
  Index coherence_len() const { return config_.coherence_len; }

  std::complex<double> operator()(Index device, Index subcarrier, Index symbol) const {
    return data_[offset(device, subcarrier, symbol)];
  }
  double gain(Index device, Index subcarrier, Index symbol) const {
    return std::norm((*this)(device, subcarrier, symbol));
  }

  /// Row-major (device, subcarrier, symbol) storage.
  const Eigen::VectorXcd& data() const { return data_; }

  bool operator==(const ChannelGrid& other) const;

 private:
  Index offset(Index device, Index subcarrier, Index symbol) const {
    return (device * config_.subcarriers + subcarrier) * config_.symbols + symbol;
  }

  ChannelConfig config_;
  Eigen::VectorXcd data_;
};

ChannelGrid sample_block_fading(const ChannelConfig& config, std::uint64_t seed);

/// Binary dump: 8-byte magic "CFLITCH1", then devices, subcarriers, symbols,
/// coherence_len as little-endian u64, then (re, im) f64 pairs row-major.
void write_grid(std::ostream& out, const ChannelGrid& grid);
ChannelGrid read_grid(std::istream& in);

struct MaxGain {
  double value;
  Index argmax;
};

/// Largest gain and its (lowest on ties) index.
template <typename Derived>
MaxGain max_gain(const Eigen::DenseBase<Derived>& gains) {
  if (gains.size() == 0) throw InvalidInput("max_gain: empty gain list");
  MaxGain best{gains(0), 0};
  for (Index i = 1; i < gains.size(); ++i) {
    if (gains(i) > best.value) best = {gains(i), i};
  }
  return best;
}

inline MaxGain max_gain(const std::vector<double>& gains) {
  return max_gain(Eigen::Map<const Eigen::VectorXd>(gains.data(), static_cast<Index>(gains.size())));
}

/// CDF of the best of n i.i.d. Exp(1) gains: (1 - e^{-x})^n.
template <typename T>
T max_gain_cdf(T x, int n) {
  if (n < 1) throw InvalidInput("max_gain_cdf: n must be >= 1");
  if (x <= T(0)) return T(0);
  return std::pow(-std::expm1(-x), T(n));
}

template <typename T>
T max_gain_pdf(T x, int n) {
  if (n < 1) throw InvalidInput("max_gain_pdf: n must be >= 1");
  if (x < T(0)) return T(0);
  if (n == 1) return std::exp(-x);
  return T(n) * std::exp(-x) * std::pow(-std::expm1(-x), T(n - 1));
}

/// Threshold q with P(best gain >= q) = p_it: q = -ln(1 - (1 - p_it)^{1/n}).
template <typename T>
T quantile_threshold(T p_it, int n) {
  if (n < 1) throw InvalidInput("quantile_threshold: n must be >= 1");
  if (!(p_it > T(0))) throw DomainError("quantile_threshold: p_it must be > 0");
  if (p_it > T(1)) throw InvalidInput("quantile_threshold: p_it must be <= 1");
  if (p_it == T(1)) return T(0);
  // (1 - p)^{1/n} computed as exp(log1p(-p)/n) to keep precision near p -> 0.
  const T root = std::exp(std::log1p(-p_it) / T(n));
  return -std::log1p(-root);
}

/// Order statistics of the best IT channel gain among n devices.
struct GainOrderStats {
  int n_devices = 1;

  double cdf(double x) const { return max_gain_cdf(x, n_devices); }
  double pdf(double x) const { return max_gain_pdf(x, n_devices); }
  double quantile(double p_it) const { return quantile_threshold(p_it, n_devices); }
};

FadingProfile parse_profile(const std::string& name);
std::string to_string(FadingProfile profile);

}  // namespace cflit::channel
