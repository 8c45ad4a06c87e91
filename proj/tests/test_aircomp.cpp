#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "cflit/aircomp.hpp"

using namespace cflit;
using namespace cflit::aircomp;

namespace {

Eigen::MatrixXcd random_channels(Index k, Index d, CounterRng& rng) {
  Eigen::MatrixXcd h(k, d);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < d; ++j) h(i, j) = rng.complex_normal();
  return h;
}

std::vector<LocalUpdateStats> random_updates(const Eigen::VectorXd& weights, Index d, CounterRng& rng) {
  std::vector<LocalUpdateStats> out;
  for (Index k = 0; k < weights.size(); ++k) {
    Eigen::VectorXd delta(d);
    for (Index i = 0; i < d; ++i) delta(i) = rng.normal(0.3 * static_cast<double>(k), 1.0 + static_cast<double>(k));
    out.push_back(normalize_update(delta, weights(k)));
  }
  return out;
}

/// E|c (sum_k h_k p_k x_k + z) - sum_k rho_k nu_k x_k|^2 for unit-variance independent x_k.
double rb_mse(const Eigen::VectorXcd& h, const Eigen::VectorXcd& p, std::complex<double> c, const Eigen::VectorXd& rho,
              const Eigen::VectorXd& nu, double noise_var) {
  double e = std::norm(c) * noise_var;
  for (Index k = 0; k < h.size(); ++k) e += std::norm(c * h(k) * p(k) - rho(k) * nu(k));
  return e;
}

}  // namespace

TEST(Normalize, ProducesUnitVarianceSymbols) {
  Eigen::VectorXd delta(5);
  delta << 1.0, -2.0, 0.5, 4.0, 3.0;
  const LocalUpdateStats s = normalize_update(delta, 0.25);
  EXPECT_NEAR(s.symbols.mean(), 0.0, 1e-14);
  EXPECT_NEAR(s.symbols.squaredNorm() / 5.0, 1.0, 1e-14);
  EXPECT_TRUE(((s.symbols.array() * s.std + s.mean) - delta.array()).abs().maxCoeff() < 1e-12);
  EXPECT_DOUBLE_EQ(s.weight, 0.25);
}

TEST(Normalize, ConstantUpdateIsDegenerate) {
  const LocalUpdateStats s = normalize_update(Eigen::VectorXd::Constant(4, 2.5));
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_TRUE(s.symbols.isZero());
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
}

TEST(Transceiver, AlignsEveryDeviceAndMeetsPowerCap) {
  CounterRng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Index k = 1 + static_cast<Index>(rng.uniform_index(6));
    const Eigen::VectorXcd h = random_channels(k, 1, rng).col(0);
    Eigen::VectorXd rho = Eigen::VectorXd::NullaryExpr(k, [&] { return rng.uniform(); });
    rho /= rho.sum();
    const Eigen::VectorXd nu = Eigen::VectorXd::NullaryExpr(k, [&] { return 0.1 + rng.uniform(); });
    const double cap = 0.5 + rng.uniform();
    const RbTransceiver t = optimal_transceiver(h, rho, nu, cap);
    double max_power = 0.0;
    for (Index i = 0; i < k; ++i) {
      EXPECT_NEAR(std::abs(t.denoise * h(i) * t.transmit(i) / nu(i) - rho(i)), 0.0, 1e-12);
      EXPECT_LE(std::norm(t.transmit(i)), cap * (1 + 1e-12));
      max_power = std::max(max_power, std::norm(t.transmit(i)));
    }
    EXPECT_NEAR(max_power, cap, 1e-12 * cap);
  }
}

TEST(Transceiver, ZeroChannelIsDegenerate) {
  Eigen::VectorXcd h(2);
  h << 1.0, 0.0;
  EXPECT_THROW(optimal_transceiver(h, Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(1, 1), 1.0), DegenerateChannel);
}

TEST(AggregationMse, MatchesDirectEvaluationOfDesign) {
  CounterRng rng(2);
  const Eigen::MatrixXcd h = random_channels(3, 7, rng);
  const Eigen::Vector3d rho(0.2, 0.3, 0.5);
  const Eigen::Vector3d nu(1.0, 0.4, 2.0);
  const TransceiverDesign d = design_transceivers(h, rho, nu, 1.0);
  double direct = 0.0;
  for (Index i = 0; i < 7; ++i) direct += rb_mse(h.col(i), d.transmit.col(i), d.denoise(i), rho, nu, 0.1);
  EXPECT_NEAR(aggregation_mse(h, rho, nu, 1.0, 0.1), direct, 1e-12 * direct);
}

TEST(AggregationMse, GridSearchOverAlignedDesignsNeverBeatsClosedForm) {
  // Aligned designs satisfy c h_k p_k = rho_k nu_k, so p is fixed by c and
  // only the power cap |p_k|^2 <= P1 decides feasibility.
  CounterRng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXcd h = random_channels(2, 1, rng).col(0);
    const Eigen::Vector2d rho(0.4, 0.6);
    const Eigen::Vector2d nu(0.5 + rng.uniform(), 0.5 + rng.uniform());
    const double best = aggregation_mse(h, rho, nu, 1.0, 0.1);
    double grid_best = 1e300;
    for (int ic = 1; ic <= 4000; ++ic) {
      for (int ph = 0; ph < 8; ++ph) {
        const std::complex<double> c = std::polar(0.001 * ic, ph * std::numbers::pi / 4);
        Eigen::VectorXcd p(2);
        for (Index k = 0; k < 2; ++k) p(k) = rho(k) * nu(k) / (c * h(k));
        if (p.cwiseAbs2().maxCoeff() > 1.0) continue;
        grid_best = std::min(grid_best, rb_mse(h, p, c, rho, nu, 0.1));
      }
    }
    EXPECT_GE(grid_best, best - 1e-9);
    EXPECT_LT(grid_best, best * 1.01 + 1e-6);
  }
}

TEST(AggregationMse, MisalignedDesignsCanTradeBiasForNoise) {
  // The closed form is the minimum over aligned designs only: scaling the
  // weak device below its aligned power level can lower the total error.
  CounterRng rng(3);
  int beaten = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXcd h = random_channels(2, 1, rng).col(0);
    const Eigen::Vector2d rho(0.4, 0.6);
    const Eigen::Vector2d nu(0.5 + rng.uniform(), 0.5 + rng.uniform());
    const double best = aggregation_mse(h, rho, nu, 1.0, 0.1);
    double grid_best = 1e300;
    for (int ic = 1; ic <= 200; ++ic) {
      const double c = 0.02 * ic;
      for (int a = 0; a <= 60; ++a) {
        for (int b = 0; b <= 60; ++b) {
          Eigen::VectorXcd p(2);
          p(0) = std::polar(a / 60.0, -std::arg(h(0)));
          p(1) = std::polar(b / 60.0, -std::arg(h(1)));
          grid_best = std::min(grid_best, rb_mse(h, p, c, rho, nu, 0.1));
        }
      }
    }
    if (grid_best < best * 0.999) ++beaten;
  }
  EXPECT_GT(beaten, 0);
}

TEST(OverTheAir, NoiselessAggregationIsExact) {
  CounterRng rng(4);
  const Eigen::VectorXd rho = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
  const auto stats = random_updates(rho, 9, rng);
  const Eigen::MatrixXcd h = random_channels(4, 9, rng);
  Eigen::VectorXd nu(4);
  for (Index k = 0; k < 4; ++k) nu(k) = stats[static_cast<std::size_t>(k)].std;
  const AggregationResult r = aggregate_over_air(stats, design_transceivers(h, rho, nu, 1.0), h, 0.0, 7);
  EXPECT_LT((r.estimate - r.exact).norm(), 1e-12 * r.exact.norm());
  EXPECT_EQ(r.mse_closed_form, 0.0);
}

TEST(OverTheAir, MonteCarloMseMatchesClosedForm) {
  CounterRng rng(5);
  const Eigen::VectorXd rho = Eigen::Vector3d(0.5, 0.3, 0.2);
  const auto stats = random_updates(rho, 12, rng);
  const Eigen::MatrixXcd h = random_channels(3, 12, rng);
  Eigen::VectorXd nu(3);
  for (Index k = 0; k < 3; ++k) nu(k) = stats[static_cast<std::size_t>(k)].std;
  const TransceiverDesign design = design_transceivers(h, rho, nu, 1.0);
  CounterRng noise(6);
  double complex_sum = 0.0;
  double real_sum = 0.0;
  const int draws = 40000;
  double closed = 0.0;
  for (int i = 0; i < draws; ++i) {
    const AggregationResult r = aggregate_over_air(stats, design, h, 0.1, noise);
    complex_sum += r.mse_complex;
    real_sum += r.mse_realized;
    closed = r.mse_closed_form;
  }
  EXPECT_NEAR(complex_sum / draws / closed, 1.0, 0.02);
  EXPECT_NEAR(real_sum / draws / closed, 0.5, 0.01);
}

TEST(OverTheAir, RejectsMismatchedShapes) {
  CounterRng rng(8);
  const auto stats = random_updates(Eigen::Vector2d(0.5, 0.5), 4, rng);
  const Eigen::MatrixXcd h = random_channels(2, 3, rng);
  TransceiverDesign d = design_transceivers(h, Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(1, 1), 1.0);
  EXPECT_THROW(aggregate_over_air(stats, d, h, 0.1, 1), InvalidInput);
}

TEST(MseBound, MatchesFormulaAndAllowsZeroNoise) {
  EXPECT_DOUBLE_EQ(expected_mse_bound(0.1, 3, 2.0, 0.5, 2.0, 1.5), 0.01 * 9 * 4 * 0.5 / 2.0 * 1.5);
  EXPECT_EQ(expected_mse_bound(0.1, 3, 1.0, 0.0, 1.0, 1.0), 0.0);
  EXPECT_THROW(expected_mse_bound(0.0, 3, 1.0, 0.1, 1.0, 1.0), InvalidConfig);
}

TEST(MseBound, DominatesMonteCarloForClippedUpdates) {
  // K = 2, tau = 2, d = 4; updates respect ||delta|| <= lambda tau G. The
  // channel term is measured on the same draws, so the bound holds per sample.
  const double lambda = 0.05;
  const int tau = 2;
  const double g = 1.0;
  const Index d = 4;
  const Eigen::Vector2d rho(0.5, 0.5);
  CounterRng rng(9);
  const int draws = 20000;
  double mse = 0.0;
  Eigen::MatrixXd gains(2, draws * d);
  for (int i = 0; i < draws; ++i) {
    std::vector<LocalUpdateStats> stats;
    for (Index k = 0; k < 2; ++k) {
      Eigen::VectorXd delta(d);
      for (Index j = 0; j < d; ++j) delta(j) = rng.normal();
      delta *= lambda * tau * g * rng.uniform() / delta.norm();
      stats.push_back(normalize_update(delta, rho(k)));
    }
    const Eigen::MatrixXcd h = random_channels(2, d, rng);
    mse += aggregation_mse(h, rho, Eigen::Vector2d(stats[0].std, stats[1].std), 1.0, 0.1);
    gains.middleCols(i * d, d) = h.cwiseAbs2();
  }
  const double term = channel_term_from_gains(rho, gains);
  EXPECT_LE(mse / draws, expected_mse_bound(lambda, tau, g, 0.1, 1.0, term));
}

TEST(ChannelTerm, HandComputedAndFloored) {
  Eigen::MatrixXd gains(2, 2);
  gains << 1.0, 0.5,
           4.0, 1e-6;
  const Eigen::Vector2d rho(0.5, 0.5);
  // column 0: max(0.25/1, 0.25/4) = 0.25; column 1: max(0.25/0.5, 0.25/1e-6) = 2.5e5
  EXPECT_NEAR(channel_term_from_gains(rho, gains), (0.25 + 2.5e5) / 2.0, 1e-6);
  EXPECT_NEAR(channel_term_from_gains(rho, gains, 1e-3), (0.25 + 250.0) / 2.0, 1e-9);
}

TEST(ChannelTerm, MonteCarloIsDeterministicAndPositive) {
  Eigen::VectorXd rho = Eigen::VectorXd::Constant(20, 0.05);
  const double a = estimate_channel_term(rho, 20000, 11, 1e-3);
  EXPECT_EQ(a, estimate_channel_term(rho, 20000, 11, 1e-3));
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 0.05 * 0.05 / 1e-3 + 1e-12);
}
