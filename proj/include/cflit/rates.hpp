#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "cflit/allocation.hpp"
#include "cflit/error.hpp"

namespace cflit::rates {

using Eigen::Index;

/// e^z E1(z) for z > 0: power series up to z = 1, continued fraction above.
template <typename T>
T scaled_exp_integral_e1(T z) {
  if (!(z > T(0))) throw DomainError("exp_integral_e1: z must be > 0");
  const T eps = std::numeric_limits<T>::epsilon();
  if (z <= T(1)) {
    // E1(z) = -gamma - ln z - sum_{k>=1} (-z)^k / (k k!)
    T sum = T(0);
    T term = T(1);
    for (int k = 1; k < 200; ++k) {
      term *= -z / T(k);
      const T add = term / T(k);
      sum += add;
      if (std::abs(add) <= eps * std::abs(sum)) break;
    }
    const T e1 = -std::numbers::egamma_v<T> - std::log(z) - sum;
    return std::exp(z) * e1;
  }
  // Modified Lentz evaluation of the continued fraction 1/(z+1- 1/(z+3- 4/(z+5- ...))).
  const T tiny = std::numeric_limits<T>::min() / eps;
  T b = z + T(1);
  T c = T(1) / tiny;
  T d = T(1) / b;
  T h = d;
  for (int i = 1; i < 10000; ++i) {
    const T a = -T(i) * T(i);
    b += T(2);
    d = T(1) / (a * d + b);
    c = b + a / c;
    const T delta = c * d;
    h *= delta;
    if (std::abs(delta - T(1)) <= eps) break;
  }
  return h;
}

template <typename T>
T exp_integral_e1(T z) {
  return std::exp(-z) * scaled_exp_integral_e1(z);
}

double exp_integral_e1(double z);

/// theta = P2 / (phi sigma^2) with phi given in dB.
double effective_snr(double it_power, double gap_db, double noise_var);

/// log2(1 + theta g).
double rb_rate(double gain, double theta);

/// (1 / MS) sum over IT RBs of log2(1 + theta g) for the assigned device.
double average_sum_rate(const allocation::AllocationGrid& grid, const allocation::GainSource& gains, double theta);

/// Bits per RB divided by the symbol duration, in Kbps.
inline double to_kbps(double bits_per_rb, double symbol_duration) { return bits_per_rb / symbol_duration / 1000.0; }

/// Expected average IT sum-rate of the threshold rule: E[log2(1 + theta g) 1{g >= q}]
/// for g the best of n Exp(1) gains.
double analytic_rate_threshold(int n, double theta, double q);

/// Expected rate of random allocation with p_it = 1 - (1 - e^{-q})^n:
/// p_it E[log2(1 + theta g)].
double analytic_rate_rsca(int n, double theta, double q);

/// analytic_rate_threshold - analytic_rate_rsca, evaluated as one sum.
double rate_improvement(int n, double theta, double q);

/// R = E[ln(1 + theta g)].
double log_rate_mean(int n, double theta);

/// Stationary point q* = (e^R - 1) / theta of rate_improvement.
double optimal_threshold_qstar(int n, double theta);

/// Above this many devices the alternating binomial sums are replaced by quadrature.
inline constexpr int kMaxAlternatingDevices = 20;

}  // namespace cflit::rates
