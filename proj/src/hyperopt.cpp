#include "cflit/hyperopt.hpp"

#include <cmath>
#include <string>

namespace cflit::hyperopt {

namespace {

void check_tau(double tau) {
  if (!(tau >= 1.0)) throw InvalidInput("tau must be >= 1, got " + std::to_string(tau));
}

void check_grad(double grad_bound, double lipschitz, double hetero) {
  if (!(grad_bound > 0.0)) throw InvalidInput("grad_bound must be > 0");
  if (lipschitz < 0.0 || hetero < 0.0) throw InvalidInput("lipschitz and hetero must be >= 0");
}

double bracket(int tau, const BoundParams& p) {
  const double t = tau;
  const double g2 = p.grad_bound * p.grad_bound;
  return (2.0 * t * t + 1.0) / (3.0 * t) * g2 + 4.0 * p.lipschitz * p.hetero / t +
         g2 * p.noise_var / p.power_cap * p.channel_term;
}

}  // namespace

void BoundParams::validate(bool for_bound) const {
  if (!(mu > 0.0) || !(lipschitz > 0.0) || !(grad_bound > 0.0) || !(power_cap > 0.0) || !(channel_term > 0.0) ||
      !(gamma > 0.0) || !(init_dist_sq >= 0.0)) {
    throw InvalidConfig("bound parameters must be positive");
  }
  if (hetero < 0.0 || noise_var < 0.0) throw InvalidConfig("hetero and noise_var must be >= 0");
  if (for_bound && gamma < 16.0 * lipschitz / mu) {
    throw InvalidConfig("gamma = " + std::to_string(gamma) + " is below 16 L / mu = " +
                        std::to_string(16.0 * lipschitz / mu));
  }
}

double zeta(int tau, const BoundParams& params) {
  check_tau(tau);
  params.validate();
  return 24.0 / params.mu * bracket(tau, params);
}

double psi(double tau, double grad_bound, double lipschitz, double hetero) {
  check_tau(tau);
  const double g2 = grad_bound * grad_bound;
  return 2.0 * g2 / 3.0 * tau + (g2 + 12.0 * lipschitz * hetero) / (3.0 * tau);
}

double tau_relax(double grad_bound, double lipschitz, double hetero) {
  check_grad(grad_bound, lipschitz, hetero);
  return std::max(1.0, std::sqrt(0.5 + 6.0 * lipschitz * hetero / (grad_bound * grad_bound)));
}

int optimal_tau(double grad_bound, double lipschitz, double hetero) {
  const double relaxed = tau_relax(grad_bound, lipschitz, hetero);
  const double lo = std::floor(relaxed);
  const double hi = std::ceil(relaxed);
  const double chosen =
      psi(hi, grad_bound, lipschitz, hetero) < psi(lo, grad_bound, lipschitz, hetero) ? hi : lo;
  return static_cast<int>(chosen);
}

double rounds_real(int tau, double epsilon, const BoundParams& params) {
  if (!(epsilon > 0.0)) throw InvalidInput("epsilon must be > 0");
  return zeta(tau, params) / epsilon;
}

std::int64_t optimal_T(int tau, double epsilon, const BoundParams& params) {
  const double real = rounds_real(tau, epsilon, params);
  if (!std::isfinite(real) || real > 9.0e18) throw DomainError("required rounds overflow");
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(real)));
}

double weight_sum(std::int64_t T, double gamma) {
  const double t = static_cast<double>(T);
  return gamma * gamma * t + gamma * t * (t - 1.0) + t * (t - 1.0) * (2.0 * t - 1.0) / 6.0;
}

Bound convergence_bound(std::int64_t T, int tau, const BoundParams& params) {
  if (T < 1) throw InvalidInput("T must be >= 1");
  check_tau(tau);
  params.validate(true);
  const double t = static_cast<double>(T);
  const double s = weight_sum(T, params.gamma);
  const double z = zeta(tau, params);
  const double g3 = params.gamma * params.gamma * params.gamma;

  Bound out;
  out.finite = 8.0 * t * (t + 2.0 * params.gamma) / (params.mu * s) * bracket(tau, params) +
               params.mu * g3 / (4.0 * s) * params.init_dist_sq;
  out.leading = z / t;
  out.asymptotic = out.leading + 2.0 * params.gamma * z / (t * t) + 3.0 * params.mu * g3 * params.init_dist_sq /
                                                                         (4.0 * t * t * t);
  return out;
}

Plan plan(double epsilon, const BoundParams& params) {
  Plan out;
  out.tau_relax = tau_relax(params.grad_bound, params.lipschitz, params.hetero);
  out.tau = optimal_tau(params.grad_bound, params.lipschitz, params.hetero);
  out.zeta = zeta(out.tau, params);
  out.rounds = optimal_T(out.tau, epsilon, params);
  return out;
}

std::vector<ZetaRow> zeta_table(int max_tau, double epsilon, const BoundParams& params) {
  check_tau(max_tau);
  std::vector<ZetaRow> rows;
  for (int tau = 1; tau <= max_tau; ++tau) {
    rows.push_back({tau, psi(tau, params.grad_bound, params.lipschitz, params.hetero), zeta(tau, params),
                    optimal_T(tau, epsilon, params)});
  }
  return rows;
}

}  // namespace cflit::hyperopt
