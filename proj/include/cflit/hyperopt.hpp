#pragma once

#include <cstdint>
#include <vector>

#include "cflit/error.hpp"

namespace cflit::hyperopt {

/// Constants of the convergence bound. The defaults are the full-scale
/// values (sigma^2 = 0.1, P1 = 1, channel term 1.294, L = 10.25, Gamma = 0.639).
struct BoundParams {
  double mu = 0.5;
  double lipschitz = 10.25;
  double hetero = 0.639;
  double grad_bound = 1.0;
  double noise_var = 0.1;
  double power_cap = 1.0;
  double channel_term = 1.294;
  double gamma = 1000.0;
  double init_dist_sq = 1.0;

  /// Throws InvalidConfig on nonpositive fields (noise_var and hetero may be
  /// zero). With `for_bound`, also requires gamma >= 16 L / mu.
  void validate(bool for_bound = false) const;
};

/// (24/mu) [ (2 tau^2 + 1)/(3 tau) G^2 + 4 L Gamma / tau + G^2 sigma^2 / P1 * term ].
double zeta(int tau, const BoundParams& params);

/// (2 G^2 / 3) tau + (G^2 + 12 L Gamma) / (3 tau), over real tau >= 1.
double psi(double tau, double grad_bound, double lipschitz, double hetero);

/// Real minimizer of psi over [1, inf): max{1, sqrt(1/2 + 6 L Gamma / G^2)}.
double tau_relax(double grad_bound, double lipschitz, double hetero);

/// Better of floor/ceil of tau_relax under psi; ties go to the smaller tau.
int optimal_tau(double grad_bound, double lipschitz, double hetero);

/// zeta(tau) / epsilon before rounding.
double rounds_real(int tau, double epsilon, const BoundParams& params);

/// Smallest T with zeta(tau) / T <= epsilon, at least 1.
std::int64_t optimal_T(int tau, double epsilon, const BoundParams& params);

/// S_T = sum_{t<T} (gamma + t)^2 in closed form.
double weight_sum(std::int64_t T, double gamma);

struct Bound {
  /// Finite-T bound with 8T(T + 2 gamma)/(mu S_T) and mu gamma^3/(4 S_T) factors.
  double finite = 0.0;
  /// zeta/T + 2 gamma zeta/T^2 + 3 mu gamma^3 init / (4 T^3).
  double asymptotic = 0.0;
  /// zeta/T, the large-T approximation used to size T.
  double leading = 0.0;
};

Bound convergence_bound(std::int64_t T, int tau, const BoundParams& params);

struct Plan {
  double tau_relax = 0.0;
  int tau = 1;
  std::int64_t rounds = 1;
  double zeta = 0.0;
};

Plan plan(double epsilon, const BoundParams& params);

struct ZetaRow {
  int tau;
  double psi;
  double zeta;
  std::int64_t rounds;
};

/// zeta, psi and required rounds for tau = 1..max_tau.
std::vector<ZetaRow> zeta_table(int max_tau, double epsilon, const BoundParams& params);

}  // namespace cflit::hyperopt
