#include "cflit/rates.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include "cflit/channel.hpp"

namespace cflit::rates {

namespace {

using Real = long double;

void check(int n, double theta, double q) {
  if (n < 1) throw InvalidInput("rates: n must be >= 1");
  if (!(theta > 0.0) || !std::isfinite(theta)) throw InvalidInput("rates: theta must be > 0");
  if (!(q >= 0.0)) throw InvalidInput("rates: q must be >= 0");
}

/// C(n, k) in extended precision.
Real binomial(int n, int k) {
  Real c = 1;
  for (int j = 1; j <= k; ++j) c = c * Real(n - k + j) / Real(j);
  return c;
}

/// Sum over i of (-1)^i C(n, i+1) f(i+1), which equals
/// n sum_i C(n-1, i) (-1)^i / (i+1) f(i+1), with Kahan-compensated accumulation.
template <typename F>
Real alternating(int n, F f) {
  Real sum = 0, carry = 0;
  for (int i = 0; i < n; ++i) {
    const Real sign = (i % 2 == 0) ? Real(1) : Real(-1);
    const Real term = sign * binomial(n, i + 1) * f(Real(i + 1)) - carry;
    const Real next = sum + term;
    carry = (next - sum) - term;
    sum = next;
  }
  return sum;
}

/// integral_q^inf log2(1 + theta x) pdf_n(x) dx.
double rate_tail_quadrature(int n, double theta, double q) {
  boost::math::quadrature::exp_sinh<double> integrator;
  const auto f = [n, theta](double x) {
    return std::log2(1.0 + theta * x) * channel::max_gain_pdf(x, n);
  };
  return integrator.integrate([&](double u) { return f(q + u); }, 0.0, std::numeric_limits<double>::infinity());
}

Real full_rate_sum(int n, Real theta) {
  return alternating(n, [theta](Real j) { return scaled_exp_integral_e1(j / theta); });
}

Real threshold_sum(int n, Real theta, Real q) {
  const Real log_term = std::log1p(theta * q);
  return alternating(n, [=](Real j) {
    const Real decay = std::exp(-j * q);
    return decay * (log_term + scaled_exp_integral_e1(j / theta + j * q));
  });
}

Real it_probability(int n, Real q) { return Real(1) - std::pow(-std::expm1(-q), Real(n)); }

}  // namespace

double exp_integral_e1(double z) { return static_cast<double>(exp_integral_e1<Real>(z)); }

double effective_snr(double it_power, double gap_db, double noise_var) {
  if (!(it_power > 0.0) || !(noise_var > 0.0)) throw InvalidConfig("effective_snr: power and noise must be > 0");
  if (gap_db < 0.0) throw InvalidConfig("effective_snr: the rate gap must be >= 0 dB");
  return it_power / (std::pow(10.0, gap_db / 10.0) * noise_var);
}

double rb_rate(double gain, double theta) {
  if (!(gain >= 0.0)) throw InvalidInput("rb_rate: gain must be >= 0");
  if (!(theta > 0.0)) throw InvalidInput("rb_rate: theta must be > 0");
  return std::log2(1.0 + theta * gain);
}

double average_sum_rate(const allocation::AllocationGrid& grid, const allocation::GainSource& gains, double theta) {
  if (gains.devices() != grid.devices || gains.subcarriers() != grid.subcarriers ||
      gains.symbols() < grid.symbols) {
    throw InvalidInput("average_sum_rate: gain source does not match the allocation grid");
  }
  double total = 0.0;
  for (Index s = 0; s < grid.symbols; ++s) {
    for (Index m = 0; m < grid.subcarriers; ++m) {
      for (Index n = 0; n < grid.devices; ++n) {
        if (grid.it_flag(n, m, s)) total += rb_rate(gains.gain(n, m, s), theta);
      }
    }
  }
  return total / static_cast<double>(grid.rb_count());
}

double analytic_rate_threshold(int n, double theta, double q) {
  check(n, theta, q);
  if (n > kMaxAlternatingDevices) return rate_tail_quadrature(n, theta, q);
  return static_cast<double>(threshold_sum(n, theta, q) / std::numbers::ln2_v<Real>);
}

double analytic_rate_rsca(int n, double theta, double q) {
  check(n, theta, q);
  const Real p_it = it_probability(n, q);
  if (n > kMaxAlternatingDevices) return static_cast<double>(p_it) * rate_tail_quadrature(n, theta, 0.0);
  return static_cast<double>(p_it * full_rate_sum(n, theta) / std::numbers::ln2_v<Real>);
}

double rate_improvement(int n, double theta, double q) {
  check(n, theta, q);
  if (n > kMaxAlternatingDevices) {
    return rate_tail_quadrature(n, theta, q) -
           static_cast<double>(it_probability(n, q)) * rate_tail_quadrature(n, theta, 0.0);
  }
  const Real t = theta;
  const Real qq = q;
  const Real log_term = std::log1p(t * qq);
  const Real keep = std::pow(-std::expm1(-qq), Real(n)) - Real(1);
  const Real sum = alternating(n, [=](Real j) {
    const Real decay = std::exp(-j * qq);
    return decay * (log_term + scaled_exp_integral_e1(j / t + j * qq)) + keep * scaled_exp_integral_e1(j / t);
  });
  return static_cast<double>(sum / std::numbers::ln2_v<Real>);
}

double log_rate_mean(int n, double theta) {
  check(n, theta, 0.0);
  if (n > kMaxAlternatingDevices) return rate_tail_quadrature(n, theta, 0.0) * std::numbers::ln2;
  return static_cast<double>(full_rate_sum(n, theta));
}

double optimal_threshold_qstar(int n, double theta) {
  return std::expm1(log_rate_mean(n, theta)) / theta;
}

}  // namespace cflit::rates
