// Acceptance checks. Prints one PASS/FAIL line per criterion. The exit code is
// 0 when every failing criterion is listed with --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "cflit/aircomp.hpp"
#include "cflit/channel.hpp"
#include "cflit/config.hpp"
#include "cflit/experiments.hpp"
#include "cflit/harness.hpp"
#include "cflit/hyperopt.hpp"
#include "cflit/learning.hpp"
#include "cflit/rates.hpp"
#include "cflit/rng.hpp"

using namespace cflit;
using Eigen::Index;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1, 2 ------------------------------------------------------------------

Outcome optimal_tau_check() {
  const int tau = hyperopt::optimal_tau(1.0, 10.25, 0.639);
  return {tau == 6, fmt("tau*=%d (want 6)", tau)};
}

Outcome optimal_rounds_check() {
  hyperopt::BoundParams p;
  p.mu = 0.5;
  p.noise_var = 0.1;
  p.power_cap = 1.0;
  p.channel_term = 1.294;
  const std::int64_t t = hyperopt::optimal_T(6, 0.34, p);
  return {t == 1208, fmt("T*=%lld (want 1208)", static_cast<long long>(t))};
}

// 3 -------------------------------------------------------------------

double rb_mse(const Eigen::VectorXcd& h, const Eigen::VectorXcd& p, std::complex<double> c, const Eigen::VectorXd& rho,
              const Eigen::VectorXd& nu, double noise_var) {
  double e = std::norm(c) * noise_var;
  for (Index k = 0; k < h.size(); ++k) e += std::norm(c * h(k) * p(k) - rho(k) * nu(k));
  return e;
}

Outcome aggregation_mse_check() {
  CounterRng rng(31);
  const double noise_var = 0.1;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const Index k = 1 + static_cast<Index>(rng.uniform_index(5));
    const Index d = 4 + static_cast<Index>(rng.uniform_index(13));
    Eigen::VectorXd rho = Eigen::VectorXd::NullaryExpr(k, [&] { return 0.1 + rng.uniform(); });
    rho /= rho.sum();
    std::vector<aircomp::LocalUpdateStats> stats;
    Eigen::VectorXd nu(k);
    for (Index i = 0; i < k; ++i) {
      Eigen::VectorXd delta = Eigen::VectorXd::NullaryExpr(d, [&] { return rng.normal(0.0, 0.2 + rng.uniform()); });
      stats.push_back(aircomp::normalize_update(delta, rho(i)));
      nu(i) = stats.back().std;
    }
    const Eigen::MatrixXcd h = Eigen::MatrixXcd::NullaryExpr(k, d, [&] { return rng.complex_normal(); });
    const aircomp::TransceiverDesign design = aircomp::design_transceivers(h, rho, nu, 1.0);
    const double closed = aircomp::aggregation_mse(h, rho, nu, 1.0, noise_var);
    CounterRng noise(1000 + static_cast<std::uint64_t>(inst));
    double sum = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) sum += aircomp::aggregate_over_air(stats, design, h, noise_var, noise).mse_complex;
    worst = std::max(worst, std::abs(sum / draws / closed - 1.0));
  }

  // Grid over feasible aligned designs on two devices: c on a polar grid,
  // p_k = rho_k nu_k / (c h_k), kept when |p_k|^2 <= P1.
  double undercut = -1e300;
  double unconstrained_gain = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const Eigen::VectorXcd h = Eigen::VectorXcd::NullaryExpr(2, [&] { return rng.complex_normal(); });
    Eigen::Vector2d rho(0.2 + rng.uniform(), 0.2 + rng.uniform());
    rho /= rho.sum();
    const Eigen::Vector2d nu(0.5 + rng.uniform(), 0.5 + rng.uniform());
    const double best = aircomp::aggregation_mse(h, rho, nu, 1.0, noise_var);
    double grid = 1e300;
    for (int ic = 1; ic <= 4000; ++ic) {
      for (int ph = 0; ph < 8; ++ph) {
        const std::complex<double> c = std::polar(0.001 * ic, ph * std::numbers::pi / 4);
        Eigen::VectorXcd p(2);
        for (Index i = 0; i < 2; ++i) p(i) = rho(i) * nu(i) / (c * h(i));
        if (p.cwiseAbs2().maxCoeff() > 1.0) continue;
        grid = std::min(grid, rb_mse(h, p, c, rho, nu, noise_var));
      }
    }
    undercut = std::max(undercut, best - grid);
    // Unconstrained (p, c) for the record: misaligned designs may do better.
    double free_grid = 1e300;
    for (int ic = 1; ic <= 100; ++ic) {
      for (int a = 0; a <= 40; ++a) {
        for (int b = 0; b <= 40; ++b) {
          Eigen::VectorXcd p(2);
          p(0) = std::polar(a / 40.0, -std::arg(h(0)));
          p(1) = std::polar(b / 40.0, -std::arg(h(1)));
          free_grid = std::min(free_grid, rb_mse(h, p, 0.04 * ic, rho, nu, noise_var));
        }
      }
    }
    unconstrained_gain = std::max(unconstrained_gain, 1.0 - free_grid / best);
  }
  const bool pass = worst < 0.01 && undercut <= 1e-9;
  return {pass, fmt("max |MC/closed-1|=%.4f (tol 0.01); aligned grid undercut=%.2e (tol 1e-9); "
                    "unconstrained grid lower by up to %.1f%%",
                    worst, undercut, 100 * unconstrained_gain)};
}

// 4, 5 ----------------------------------------------------------------

Outcome threshold_rate_check() {
  const int n = 5;
  const double theta = 2.512;
  const double q = 2.754;
  const double p_it = 1.0 - channel::max_gain_cdf(q, n);
  CounterRng rng(41);
  const int samples = 1000000;
  double thr = 0.0;
  double rsca = 0.0;
  for (int i = 0; i < samples; ++i) {
    double best = 0.0;
    for (int k = 0; k < n; ++k) best = std::max(best, rng.exponential());
    const double r = std::log2(1.0 + theta * best);
    if (best >= q) thr += r;
    if (rng.uniform() < p_it) rsca += r;
  }
  thr /= samples;
  rsca /= samples;
  const double a_thr = rates::analytic_rate_threshold(n, theta, q);
  const double a_rsca = rates::analytic_rate_rsca(n, theta, q);
  const double e_thr = std::abs(a_thr / thr - 1.0);
  const double e_rsca = std::abs(a_rsca / rsca - 1.0);
  const double e_id = std::abs(rates::rate_improvement(n, theta, q) - (a_thr - a_rsca));
  return {e_thr < 0.005 && e_rsca < 0.005 && e_id < 1e-9,
          fmt("threshold %.5f vs MC %.5f (rel %.2e); rsca %.5f vs MC %.5f (rel %.2e); identity %.1e", a_thr, thr, e_thr,
              a_rsca, rsca, e_rsca, e_id)};
}

Outcome improvement_shape_check() {
  double min_val = 1e300;
  double at_zero = 0.0;
  double far = 0.0;
  bool local_max = true;
  for (int n : {1, 2, 5, 10}) {
    for (double theta : {0.5, 2.51, 10.0}) {
      const double qs = rates::optimal_threshold_qstar(n, theta);
      const double hi = 20.0 + qs;
      for (int i = 0; i < 1000; ++i) min_val = std::min(min_val, rates::rate_improvement(n, theta, hi * i / 999.0));
      at_zero = std::max(at_zero, std::abs(rates::rate_improvement(n, theta, 0.0)));
      far = std::max(far, rates::rate_improvement(n, theta, hi));
      const double h = 1e-3 * qs;
      const double mid = rates::rate_improvement(n, theta, qs);
      local_max = local_max && mid >= rates::rate_improvement(n, theta, qs - h) &&
                  mid >= rates::rate_improvement(n, theta, qs + h);
    }
  }
  return {min_val >= -1e-9 && at_zero <= 1e-12 && far < 1e-4 && local_max,
          fmt("min=%.2e; |rho(0)|=%.1e; rho(20+q*)=%.2e; q* local max: %s", min_val, at_zero, far,
              local_max ? "yes" : "no")};
}

// 6, 7 ----------------------------------------------------------------

Outcome full_scale_allocation_check() {
  ExperimentConfig c = full_config();
  const harness::HyperPlan plan = harness::plan_hyperparameters(c, harness::bound_params(c, nullptr, c.run.seed));
  const Index demand = harness::transmit_dim(c) * static_cast<Index>(plan.rounds);
  double online = 0.0;
  double offline = 0.0;
  bool exact = true;
  for (int i = 0; i < 20; ++i) {
    const auto seeds = harness::TrialSeeds::derive(harness::trial_seed(c.run.seed, i));
    const harness::ItOutcome on = harness::allocate_and_rate(c, AllocationConfig::Scheme::Online, demand, seeds);
    const harness::ItOutcome off = harness::allocate_and_rate(c, AllocationConfig::Scheme::Offline, demand, seeds);
    exact = exact && on.allocation.grid.fl_count() == demand && off.allocation.grid.fl_count() == demand;
    online += on.bits_per_rb;
    offline += off.bits_per_rb;
  }
  const double ratio = online / offline;
  return {exact && ratio >= 0.98, fmt("d*T*=%lld FL RBs exact: %s; online/offline=%.4f (min 0.98)",
                                      static_cast<long long>(demand), exact ? "yes" : "no", ratio)};
}

Outcome desk_ordering_check() {
  ExperimentConfig c = desk_config();
  c.run.trials = 20;
  const auto rows = harness::scheme_rates(c, harness::standard_schemes());
  const auto get = [&](const std::string& name) {
    return *std::find_if(rows.begin(), rows.end(), [&](const harness::SchemeRate& r) { return r.name == name; });
  };
  const auto proposed = get("proposed");
  const auto offline = get("offline");
  const auto rsca = get("rsca");
  const auto tau1 = get("fixed_tau1");
  const auto tau10 = get("fixed_tau10");
  const bool pass = offline.bits_mean >= proposed.bits_mean && proposed.bits_mean > rsca.bits_mean &&
                    tau1.bits_mean == 0.0 && tau10.bits_mean < proposed.bits_mean &&
                    proposed.bits_mean / offline.bits_mean >= 0.98;
  return {pass, fmt("bits/RB offline %.4f, proposed %.4f (tau=%d), rsca %.4f, tau1 %.4f, tau10 %.4f; "
                    "proposed/offline=%.4f",
                    offline.bits_mean, proposed.bits_mean, proposed.tau, rsca.bits_mean, tau1.bits_mean,
                    tau10.bits_mean, proposed.bits_mean / offline.bits_mean)};
}

// 8 -------------------------------------------------------------------

Outcome convergence_check() {
  ExperimentConfig c = desk_config();
  c.run.trials = 20;
  const harness::HyperPlan plan = harness::plan_hyperparameters(c, harness::reference_bound(c));
  std::vector<harness::CurveRequest> req;
  for (int tau : {plan.tau, 1, 20}) req.push_back({"tau" + std::to_string(tau), tau, plan.rounds, false});
  const auto curves = harness::gap_curves(c, req, true);
  const double g_star = curves[0].final_avg_gap();
  const double g1 = curves[1].final_avg_gap();
  const double g20 = curves[2].final_avg_gap();
  const bool trend = g_star < g1 && g_star < g20;

  ExperimentConfig th = c;
  th.learning.schedule = learning::LearningRateSchedule::Kind::Theorem;
  th.learning.epsilon = 0.34;
  const harness::HyperPlan tplan = harness::plan_hyperparameters(th, harness::reference_bound(th));
  const auto max_rounds = static_cast<std::int64_t>(std::ceil(1.3 * static_cast<double>(tplan.rounds))) + 1;
  const auto rr = harness::required_rounds(th, {tplan.tau}, th.learning.epsilon, max_rounds).front();
  int reached = 0;
  double sum = 0.0;
  for (auto r : rr.per_trial) {
    if (r > 0) {
      ++reached;
      sum += static_cast<double>(r);
    }
  }
  const double mean_sim = reached > 0 ? sum / reached : -1.0;
  const double ratio = mean_sim / static_cast<double>(rr.analytic);
  const bool rounds_ok = rr.simulated > 0 && ratio >= 0.8 && ratio <= 1.3;
  return {trend && rounds_ok,
          fmt("avg-model gap after %lld rounds: tau*=%d %.4f, tau=1 %.4f, tau=20 %.4f (%s); theorem schedule "
              "eps=0.34: predicted %lld rounds, simulated %.1f (%d/%zu trials reached within %lld), ratio %.3f (want 0.8-1.3, all trials)",
              static_cast<long long>(plan.rounds), plan.tau, g_star, g1, g20, trend ? "ok" : "violated",
              static_cast<long long>(rr.analytic), mean_sim, reached, rr.per_trial.size(),
              static_cast<long long>(max_rounds), ratio)};
}

// 9 -------------------------------------------------------------------

ExperimentConfig tiny_config() {
  ExperimentConfig c = desk_config();
  c.system.fl_devices = 3;
  c.system.it_devices = 2;
  c.system.subcarriers = 16;
  c.system.symbols = 40;
  c.learning.total_samples = 150;
  c.learning.compressed_dim = 20;
  c.hyperopt.rounds = 12;
  c.run.trials = 3;
  c.run.threads = 1;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome hygiene_check() {
  const ExperimentConfig c = desk_config();
  const learning::SyntheticDataset ds = learning::generate_synthetic(c.synthetic(), 91);
  const learning::DeviceData& data = ds.devices[0];
  CounterRng rng(92);
  const Eigen::VectorXd w = Eigen::VectorXd::NullaryExpr(ds.model_dim(), [&] { return rng.normal(0.0, 0.3); });
  const Eigen::VectorXd g = learning::gradient(w, data, c.learning.reg);
  double grad_err = 0.0;
  const double h = 1e-6;
  for (Index i = 0; i < w.size(); ++i) {
    Eigen::VectorXd wp = w, wm = w;
    wp(i) += h;
    wm(i) -= h;
    const double fd = (learning::loss(wp, data, c.learning.reg) - learning::loss(wm, data, c.learning.reg)) / (2 * h);
    grad_err = std::max(grad_err, std::abs(fd - g(i)));
  }

  double e1_err = 0.0;
  for (double z : {1e-4, 0.01, 0.3, 1.0, 2.5, 7.0, 15.0, 20.0}) {
    const double quad = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [](double t) { return std::exp(-t) / t; }, z, z + 60.0, 20, 1e-14);
    e1_err = std::max(e1_err, std::abs(rates::exp_integral_e1(z) / quad - 1.0));
  }

  double rt_err = 0.0;
  for (int n : {1, 2, 5, 10, 40}) {
    for (double p = 0.01; p < 1.0; p += 0.01) {
      rt_err = std::max(rt_err, std::abs(1.0 - channel::max_gain_cdf(channel::quantile_threshold(p, n), n) - p));
    }
  }

  const ExperimentConfig tc = tiny_config();
  std::stringstream a, b;
  harness::write_transcript_csv(a, harness::run_cflit(tc, 5));
  harness::write_transcript_csv(b, harness::run_cflit(tc, 5));
  bool identical = a.str() == b.str();
  const auto base = std::filesystem::temp_directory_path() / "cflit_acceptance";
  std::filesystem::remove_all(base);
  const auto fa = harness::reproduce_experiment("fig3", tc, base / "a");
  const auto fb = harness::reproduce_experiment("fig3", tc, base / "b");
  for (std::size_t i = 0; i < fa.data.size(); ++i) identical = identical && slurp(fa.data[i]) == slurp(fb.data[i]);
  std::filesystem::remove_all(base);

  return {grad_err < 1e-5 && e1_err < 1e-10 && rt_err < 1e-10 && identical,
          fmt("gradient FD max err %.1e; E1 rel err %.1e; quantile round trip %.1e; reruns byte-identical: %s", grad_err,
              e1_err, rt_err, identical ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::vector<int> expect_fail;
  app.add_option("--only", only, "Criteria to run (default all)");
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail; they do not affect the exit code");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "optimal tau closed form", 1e-3, optimal_tau_check},
      {2, "optimal round count closed form", 1e-3, optimal_rounds_check},
      {3, "aggregation MSE closed form", 60, aggregation_mse_check},
      {4, "threshold and random allocation rates vs Monte Carlo", 30, threshold_rate_check},
      {5, "rate improvement shape", 10, improvement_shape_check},
      {6, "online allocation at full scale", 120, full_scale_allocation_check},
      {7, "desk scheme ordering", 600, desk_ordering_check},
      {8, "desk convergence trend and round prediction", 600, convergence_check},
      {9, "numerical hygiene", 60, hygiene_check},
  };

  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  int unexpected = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = out.pass && in_time;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << out.detail
              << fmt("; %.3f s (limit %g s)", secs, c.limit_seconds);
    if (!pass && expected.count(c.id)) std::cout << " [known failure]";
    std::cout << std::endl;
    if (!pass && !expected.count(c.id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
