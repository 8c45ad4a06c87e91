#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cflit/allocation.hpp"
#include "cflit/config.hpp"
#include "cflit/error.hpp"
#include "cflit/experiments.hpp"
#include "cflit/harness.hpp"
#include "cflit/hyperopt.hpp"
#include "cflit/rates.hpp"

namespace {

using namespace cflit;

constexpr int kExitUsage = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitNumeric = 4;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string out;
  std::string format = "csv";
  std::vector<std::string> overrides;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? full_config() : load_config_file(g.config_path);
  c = apply_overrides(c, g.overrides);
  if (g.seed) c.run.seed = *g.seed;
  if (g.trials) c.run.trials = *g.trials;
  c.validate();
  return c;
}

bool json_output(const Globals& g) { return g.format == "json"; }

/// Writes to --out when given, else to stdout.
template <typename F>
void emit(const Globals& g, F&& write) {
  if (g.out.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream out(g.out);
  if (!out) throw InvalidInput("cannot write '" + g.out + "'");
  write(out);
}

int cmd_hyperopt(const Globals& g, int max_tau) {
  const ExperimentConfig c = resolve(g);
  const hyperopt::BoundParams bound = harness::reference_bound(c);
  const hyperopt::Plan plan = hyperopt::plan(c.learning.epsilon, bound);
  const auto table = hyperopt::zeta_table(max_tau, c.learning.epsilon, bound);
  emit(g, [&](std::ostream& out) {
    if (json_output(g)) {
      nlohmann::json j;
      j["epsilon"] = c.learning.epsilon;
      j["tau_relax"] = plan.tau_relax;
      j["tau_star"] = plan.tau;
      j["rounds_star"] = plan.rounds;
      j["zeta_star"] = plan.zeta;
      j["lipschitz"] = bound.lipschitz;
      j["hetero"] = bound.hetero;
      j["channel_term"] = bound.channel_term;
      for (const auto& row : table) j["table"].push_back({{"tau", row.tau}, {"psi", row.psi}, {"zeta", row.zeta}, {"rounds", row.rounds}});
      out << j.dump(2) << '\n';
      return;
    }
    out.precision(10);
    out << "# epsilon=" << c.learning.epsilon << " L=" << bound.lipschitz << " Gamma=" << bound.hetero
        << " channel_term=" << bound.channel_term << '\n';
    out << "# tau_relax=" << plan.tau_relax << " tau*=" << plan.tau << " T*=" << plan.rounds << '\n';
    out << "tau,psi,zeta,rounds\n";
    for (const auto& row : table) out << row.tau << ',' << row.psi << ',' << row.zeta << ',' << row.rounds << '\n';
  });
  return 0;
}

int cmd_allocate(const Globals& g, const std::string& rle_path) {
  const ExperimentConfig c = resolve(g);
  const hyperopt::BoundParams bound = harness::reference_bound(c);
  const harness::HyperPlan plan = harness::plan_hyperparameters(c, bound);
  const Eigen::Index demand = harness::transmit_dim(c) * plan.rounds;
  const harness::TrialSeeds seeds = harness::TrialSeeds::derive(c.run.seed);
  const harness::ItOutcome it = harness::allocate_and_rate(c, c.allocation.scheme, demand, seeds);
  if (!rle_path.empty()) {
    std::ofstream rle(rle_path);
    if (!rle) throw InvalidInput("cannot write '" + rle_path + "'");
    allocation::write_rle(rle, it.allocation.grid);
  }
  emit(g, [&](std::ostream& out) {
    auto j = nlohmann::json::parse(allocation::summary_json(it.allocation));
    j["scheme"] = to_string(c.allocation.scheme);
    j["tau"] = plan.tau;
    j["rounds"] = plan.rounds;
    j["bits_per_rb"] = it.bits_per_rb;
    j["kbps"] = it.kbps;
    if (json_output(g)) {
      out << j.dump(2) << '\n';
    } else {
      out << "key,value\n";
      for (const auto& [k, v] : j.items()) out << k << ',' << v.dump() << '\n';
    }
  });
  return 0;
}

int cmd_rates(const Globals& g, int n, std::optional<double> theta_opt, std::optional<double> q_opt) {
  const ExperimentConfig c = resolve(g);
  const double theta = theta_opt ? *theta_opt : c.theta();
  const double q_star = rates::optimal_threshold_qstar(n, theta);
  const double q = q_opt ? *q_opt : q_star;
  const double threshold = rates::analytic_rate_threshold(n, theta, q);
  const double rsca = rates::analytic_rate_rsca(n, theta, q);
  const double gain = rates::rate_improvement(n, theta, q);
  const double p_it = 1.0 - std::pow(1.0 - std::exp(-q), n);
  emit(g, [&](std::ostream& out) {
    if (json_output(g)) {
      nlohmann::json j = {{"n", n},          {"theta", theta},   {"q", q},           {"p_it", p_it},
                          {"threshold_rate", threshold}, {"rsca_rate", rsca}, {"improvement", gain}, {"q_star", q_star}};
      out << j.dump(2) << '\n';
      return;
    }
    out.precision(12);
    out << "n,theta,q,p_it,threshold_rate,rsca_rate,improvement,q_star\n"
        << n << ',' << theta << ',' << q << ',' << p_it << ',' << threshold << ',' << rsca << ',' << gain << ','
        << q_star << '\n';
  });
  return 0;
}

int cmd_simulate(const Globals& g) {
  const ExperimentConfig c = resolve(g);
  const harness::SimulationTranscript tr = harness::run_cflit(c, c.run.seed);
  emit(g, [&](std::ostream& out) {
    if (json_output(g)) {
      out << harness::transcript_json(tr).dump(2) << '\n';
    } else {
      harness::write_transcript_csv(out, tr);
    }
  });
  std::cerr << "tau=" << tr.tau << " rounds=" << tr.rounds << " final_gap=" << tr.final_gap()
            << " final_avg_gap=" << tr.final_avg_gap() << " it_kbps=" << tr.it_kbps << '\n';
  return 0;
}

int cmd_reproduce(const Globals& g, const std::string& name) {
  const ExperimentConfig c = resolve(g);
  const std::filesystem::path dir = g.out.empty() ? std::filesystem::path("out") / name : std::filesystem::path(g.out);
  const auto files = harness::reproduce_experiment(name, c, dir,
                                                   json_output(g) ? harness::OutputFormat::Json : harness::OutputFormat::Csv);
  for (const auto& p : files.data) std::cout << p.string() << '\n';
  std::cout << files.manifest.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Over-the-air federated learning sharing OFDM resource blocks with information transfer"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "INI config file (defaults: full-scale setup)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Base seed");
  app.add_option("--trials", g.trials, "Monte Carlo trials")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output file (directory for reproduce)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--set", g.overrides, "Override a config value, e.g. --set system.symbols=400")->take_all();

  int max_tau = 20;
  auto* hyper = app.add_subcommand("hyperopt", "Print tau*, T* and the zeta(tau) table");
  hyper->add_option("--max-tau", max_tau, "Largest tau in the table")->check(CLI::PositiveNumber);

  std::string rle_path;
  auto* alloc = app.add_subcommand("allocate", "Allocate one frame with the configured scheme");
  alloc->add_option("--rle", rle_path, "Also write the grid in run-length form");

  int n = 5;
  std::optional<double> theta;
  std::optional<double> q;
  auto* rate = app.add_subcommand("rates", "Closed-form IT rates and the optimal threshold");
  rate->add_option("--n", n, "IT devices")->check(CLI::PositiveNumber);
  rate->add_option("--theta", theta, "Effective SNR (defaults to the config's)");
  rate->add_option("--q", q, "Gain threshold (defaults to q*)");

  auto* sim = app.add_subcommand("simulate", "Run one end-to-end trial and write its transcript");

  std::string experiment;
  auto* repro = app.add_subcommand("reproduce", "Regenerate a figure or table");
  std::string names;
  for (const auto& e : harness::experiment_names()) names += (names.empty() ? "" : ", ") + e;
  repro->add_option("name", experiment, "One of: " + names)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*hyper) return cmd_hyperopt(g, max_tau);
    if (*alloc) return cmd_allocate(g, rle_path);
    if (*rate) return cmd_rates(g, n, theta, q);
    if (*sim) return cmd_simulate(g);
    if (*repro) return cmd_reproduce(g, experiment);
  } catch (const Infeasible& e) {
    std::cerr << "infeasible: " << e.what() << "\n  demand=" << e.demand() << " available=" << e.available()
              << " deficit=" << e.deficit() << " minimal_symbols=" << e.minimal_symbols() << '\n';
    return kExitInfeasible;
  } catch (const InvalidConfig& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitUsage;
}
