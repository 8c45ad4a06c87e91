#include "cflit/experiments.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <variant>

#include <nlohmann/json.hpp>

#include "cflit/error.hpp"
#include "cflit/rates.hpp"

#ifndef CFLIT_GIT_DESCRIBE
#define CFLIT_GIT_DESCRIBE "unknown"
#endif

namespace cflit::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
using Scheme = AllocationConfig::Scheme;

/// Rows of mixed cells written as CSV or as a JSON array of objects.
class Table {
 public:
  using Cell = std::variant<std::string, double, std::int64_t>;

  explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add(std::vector<Cell> row) {
    if (row.size() != columns_.size()) throw InvalidInput("table row has the wrong number of cells");
    rows_.push_back(std::move(row));
  }

  void write(const std::filesystem::path& path, OutputFormat format) const {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
    if (format == OutputFormat::Json) {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : rows_) {
        nlohmann::json obj;
        for (std::size_t i = 0; i < row.size(); ++i) {
          std::visit([&](const auto& v) { obj[columns_[i]] = v; }, row[i]);
        }
        rows.push_back(std::move(obj));
      }
      out << rows.dump(2) << '\n';
      return;
    }
    out.precision(10);
    for (std::size_t i = 0; i < columns_.size(); ++i) out << (i ? "," : "") << columns_[i];
    out << '\n';
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out << ',';
        std::visit([&](const auto& v) { out << v; }, row[i]);
      }
      out << '\n';
    }
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<Cell>> rows_;
};

/// Bound constants of one trial; estimated sources need the trial's data.
hyperopt::BoundParams trial_bound(const ExperimentConfig& config, const TrialSeeds& seeds, const TrialData* td) {
  return bound_params(config, td, seeds.data);
}

HyperPlan scheme_plan(const ExperimentConfig& config, const hyperopt::BoundParams& bound, const SchemeSpec& spec) {
  ExperimentConfig c = config;
  c.allocation.scheme = spec.scheme;
  if (spec.tau > 0) {
    c.allocation.scheme = Scheme::FixedTau;
    c.allocation.fixed_tau = spec.tau;
    c.hyperopt.tau = 0;
  }
  return plan_hyperparameters(c, bound);
}

std::int64_t rounds_for(const ExperimentConfig& config, const hyperopt::BoundParams& bound, int tau) {
  return config.hyperopt.rounds > 0 ? config.hyperopt.rounds : hyperopt::optimal_T(tau, config.learning.epsilon, bound);
}

struct Moments {
  double mean = 0.0;
  double stderr_ = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  const double n = static_cast<double>(v.size());
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stderr_ = std::sqrt(ss / (n - 1.0) / n);
  }
  return m;
}

double last_finite(const std::vector<double>& v) {
  for (auto it = v.rbegin(); it != v.rend(); ++it) {
    if (std::isfinite(*it)) return *it;
  }
  return kNaN;
}

Index frame_symbols_for(const ExperimentConfig& config, Index d, std::int64_t rounds) {
  const Index m = config.system.subcarriers;
  return std::max(config.system.symbols, (d * rounds + m - 1) / m);
}

std::vector<Index> symbol_sweep(Index base) {
  std::vector<Index> out;
  for (double f : {0.5, 0.75, 1.0, 1.5, 2.0}) {
    out.push_back(std::max<Index>(1, static_cast<Index>(std::llround(f * static_cast<double>(base)))));
  }
  return out;
}

std::vector<CurveRequest> comparison_requests(const ExperimentConfig& config, const hyperopt::BoundParams& bound) {
  const HyperPlan proposed = scheme_plan(config, bound, {"proposed", Scheme::Online, 0});
  return {{"proposed", proposed.tau, proposed.rounds, true},
          {"fixed_tau1", 1, rounds_for(config, bound, 1), true},
          {"fixed_tau10", 10, rounds_for(config, bound, 10), true}};
}

void add_rate_rows(Table& table, const std::vector<SchemeRate>& rates, const std::vector<Table::Cell>& prefix) {
  for (const SchemeRate& r : rates) {
    std::vector<Table::Cell> row = prefix;
    row.insert(row.end(), {r.name, static_cast<std::int64_t>(r.tau), r.rounds, static_cast<std::int64_t>(r.fl_demand),
                           static_cast<std::int64_t>(r.feasible), r.p_it, r.bits_mean, r.bits_stderr, r.kbps_mean});
    table.add(std::move(row));
  }
}

std::vector<std::string> rate_columns(std::vector<std::string> prefix) {
  for (const char* c : {"scheme", "tau", "rounds", "fl_demand", "feasible", "p_it", "bits_per_rb", "bits_stderr", "kbps"}) {
    prefix.emplace_back(c);
  }
  return prefix;
}

}  // namespace

hyperopt::BoundParams reference_bound(const ExperimentConfig& config) {
  const TrialSeeds seeds = TrialSeeds::derive(trial_seed(config.run.seed, 0));
  if (config.hyperopt.source == HyperoptConfig::Source::Configured) return trial_bound(config, seeds, nullptr);
  const TrialData td = prepare_trial(config, seeds);
  return trial_bound(config, seeds, &td);
}

std::vector<SchemeSpec> standard_schemes() {
  return {{"proposed", Scheme::Online, 0},
          {"offline", Scheme::Offline, 0},
          {"rsca", Scheme::Rsca, 0},
          {"fixed_tau1", Scheme::Online, 1},
          {"fixed_tau10", Scheme::Online, 10}};
}

std::vector<SchemeRate> scheme_rates(const ExperimentConfig& config, const std::vector<SchemeSpec>& schemes) {
  config.validate();
  const Index tx_dim = transmit_dim(config);
  const Index capacity = config.system.subcarriers * config.system.symbols;

  struct Cell {
    HyperPlan plan;
    Index demand = 0;
    bool feasible = true;
    double p_it = 0.0;
    double bits = 0.0;
    double kbps = 0.0;
  };
  const std::function<std::vector<Cell>(int)> trial = [&](int i) {
    const TrialSeeds seeds = TrialSeeds::derive(trial_seed(config.run.seed, i));
    std::optional<TrialData> td;
    if (config.hyperopt.source == HyperoptConfig::Source::Estimated) td = prepare_trial(config, seeds);
    const hyperopt::BoundParams bound = trial_bound(config, seeds, td ? &*td : nullptr);
    std::vector<Cell> cells;
    for (const SchemeSpec& spec : schemes) {
      Cell cell;
      cell.plan = scheme_plan(config, bound, spec);
      if (cell.plan.rounds > capacity / tx_dim + 1) {
        cell.demand = capacity + 1;
      } else {
        cell.demand = tx_dim * cell.plan.rounds;
      }
      if (cell.demand > capacity) {
        cell.feasible = false;
      } else {
        const ItOutcome it = allocate_and_rate(config, spec.scheme, cell.demand, seeds);
        cell.p_it = it.allocation.budget.p_it;
        cell.bits = it.bits_per_rb;
        cell.kbps = it.kbps;
      }
      cells.push_back(cell);
    }
    return cells;
  };
  const auto results = run_trials(config.run.trials, config.run.threads, trial);

  std::vector<SchemeRate> out;
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    SchemeRate r;
    r.name = schemes[s].name;
    const Cell& first = results.front()[s];
    r.tau = first.plan.tau;
    r.rounds = first.plan.rounds;
    r.fl_demand = first.feasible ? first.demand : tx_dim * first.plan.rounds;
    std::vector<double> bits;
    std::vector<double> kbps;
    std::vector<double> p_it;
    for (const auto& cells : results) {
      r.feasible = r.feasible && cells[s].feasible;
      bits.push_back(cells[s].bits);
      kbps.push_back(cells[s].kbps);
      p_it.push_back(cells[s].p_it);
    }
    const Moments mb = moments(bits);
    r.bits_mean = mb.mean;
    r.bits_stderr = mb.stderr_;
    r.kbps_mean = moments(kbps).mean;
    r.p_it = moments(p_it).mean;
    out.push_back(r);
  }
  return out;
}

double GapCurve::final_gap() const { return last_finite(gap); }

double GapCurve::final_avg_gap() const { return last_finite(avg_gap); }

std::vector<GapCurve> gap_curves(const ExperimentConfig& config, const std::vector<CurveRequest>& requests,
                                 bool extend_frame) {
  config.validate();
  const Index d = transmit_dim(config);
  const Index capacity_rounds = config.system.subcarriers * config.system.symbols / d;

  std::vector<GapCurve> curves;
  std::int64_t longest = 0;
  for (const CurveRequest& req : requests) {
    if (req.tau < 1 || req.rounds < 1) throw InvalidInput("gap_curves: tau and rounds must be >= 1");
    GapCurve c;
    c.label = req.label;
    c.tau = req.tau;
    c.rounds = req.rounds;
    if (!extend_frame && req.rounds > capacity_rounds) {
      if (!req.allow_truncation) {
        const Index needed = d * req.rounds;
        const Index m = config.system.subcarriers;
        throw Infeasible("gap_curves: " + req.label + " needs " + std::to_string(needed) + " RBs", needed,
                         m * config.system.symbols, (needed + m - 1) / m);
      }
      c.rounds = capacity_rounds;
      c.truncated = true;
    }
    longest = std::max(longest, c.rounds);
    curves.push_back(c);
  }

  ExperimentConfig run_config = config;
  if (extend_frame) run_config.system.symbols = frame_symbols_for(config, d, longest);

  const std::function<std::vector<FlOutcome>(int)> trial = [&](int i) {
    const TrialSeeds seeds = TrialSeeds::derive(trial_seed(config.run.seed, i));
    const TrialData td = prepare_trial(config, seeds);
    const FlProblem problem{&td.dataset, &td.pooled, td.optimum.value};
    std::vector<FlOutcome> outs;
    for (const GapCurve& c : curves) {
      const auto rbs = sequential_rounds(run_config.system.subcarriers, run_config.system.symbols, d, c.rounds);
      outs.push_back(run_federated(run_config, problem, c.tau, rbs, seeds));
    }
    return outs;
  };
  const auto results = run_trials(config.run.trials, config.run.threads, trial);

  for (std::size_t k = 0; k < curves.size(); ++k) {
    GapCurve& c = curves[k];
    for (std::int64_t t = 0; t < c.rounds; ++t) {
      const RoundRecord& head = results.front()[k].rounds[static_cast<std::size_t>(t)];
      if (!std::isfinite(head.gap)) continue;
      double gap = 0.0;
      double avg = 0.0;
      for (const auto& outs : results) {
        const RoundRecord& r = outs[k].rounds[static_cast<std::size_t>(t)];
        gap += r.gap;
        avg += r.avg_gap;
      }
      const double n = static_cast<double>(results.size());
      c.round.push_back(t + 1);
      c.gap.push_back(gap / n);
      c.avg_gap.push_back(avg / n);
    }
  }
  return curves;
}

std::vector<RequiredRounds> required_rounds(const ExperimentConfig& config, const std::vector<int>& taus,
                                            double epsilon, std::int64_t max_rounds) {
  config.validate();
  if (!(epsilon > 0.0) || max_rounds < 1) throw InvalidInput("required_rounds: need epsilon > 0 and max_rounds >= 1");
  const Index d = transmit_dim(config);
  ExperimentConfig run_config = config;
  run_config.system.symbols = frame_symbols_for(config, d, max_rounds);
  run_config.run.eval_every = 1;

  struct Cell {
    std::int64_t analytic = 0;
    std::int64_t simulated = -1;
  };
  const std::function<std::vector<Cell>(int)> trial = [&](int i) {
    const TrialSeeds seeds = TrialSeeds::derive(trial_seed(config.run.seed, i));
    const TrialData td = prepare_trial(config, seeds);
    const hyperopt::BoundParams bound = trial_bound(config, seeds, &td);
    const FlProblem problem{&td.dataset, &td.pooled, td.optimum.value};
    const auto rbs = sequential_rounds(run_config.system.subcarriers, run_config.system.symbols, d, max_rounds);
    std::vector<Cell> cells;
    for (int tau : taus) {
      if (tau < 1) throw InvalidInput("required_rounds: tau must be >= 1");
      Cell cell;
      cell.analytic = hyperopt::optimal_T(tau, epsilon, bound);
      const FlOutcome fl = run_federated(run_config, problem, tau, rbs, seeds,
                                         [epsilon](const RoundRecord& r) { return r.avg_gap <= epsilon; });
      const RoundRecord& last = fl.rounds.back();
      if (last.avg_gap <= epsilon) cell.simulated = last.round + 1;
      cells.push_back(cell);
    }
    return cells;
  };
  const auto results = run_trials(config.run.trials, config.run.threads, trial);

  std::vector<RequiredRounds> out;
  for (std::size_t k = 0; k < taus.size(); ++k) {
    RequiredRounds r;
    r.tau = taus[k];
    double analytic = 0.0;
    double simulated = 0.0;
    bool reached = true;
    for (const auto& cells : results) {
      analytic += static_cast<double>(cells[k].analytic);
      simulated += static_cast<double>(cells[k].simulated);
      reached = reached && cells[k].simulated > 0;
      r.per_trial.push_back(cells[k].simulated);
    }
    const double n = static_cast<double>(results.size());
    r.analytic = std::llround(analytic / n);
    r.simulated = reached ? std::llround(simulated / n) : -1;
    out.push_back(r);
  }
  return out;
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "table1"};
  return names;
}

ExperimentFiles reproduce_experiment(const std::string& name, const ExperimentConfig& config,
                                     const std::filesystem::path& out_dir, OutputFormat format) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw InvalidInput("unknown experiment '" + name + "' (known: " + list + ")");
  }
  config.validate();
  std::filesystem::create_directories(out_dir);
  const auto started = std::chrono::steady_clock::now();
  const std::string ext = format == OutputFormat::Json ? ".json" : ".csv";
  const hyperopt::BoundParams bound = reference_bound(config);
  nlohmann::json extra;

  ExperimentFiles files;
  const auto emit = [&](const Table& table, const std::string& stem) {
    const auto path = out_dir / (stem + ext);
    table.write(path, format);
    files.data.push_back(path);
  };
  const auto curve_table = [](const std::vector<GapCurve>& curves) {
    Table t({"label", "tau", "rounds", "truncated", "round", "gap", "avg_gap"});
    for (const GapCurve& c : curves) {
      for (std::size_t i = 0; i < c.round.size(); ++i) {
        t.add({c.label, static_cast<std::int64_t>(c.tau), c.rounds, static_cast<std::int64_t>(c.truncated), c.round[i],
               c.gap[i], c.avg_gap[i]});
      }
    }
    return t;
  };

  if (name == "fig2") {
    const HyperPlan plan = scheme_plan(config, bound, {"proposed", Scheme::Online, 0});
    std::vector<CurveRequest> requests;
    for (int tau : {1, 3, plan.tau, 10, 20}) {
      if (std::any_of(requests.begin(), requests.end(), [&](const CurveRequest& r) { return r.tau == tau; })) continue;
      requests.push_back({"tau" + std::to_string(tau), tau, plan.rounds, false});
    }
    extra["rounds"] = plan.rounds;
    extra["tau_star"] = plan.tau;
    emit(curve_table(gap_curves(config, requests, true)), "fig2");
  } else if (name == "fig3") {
    emit(curve_table(gap_curves(config, comparison_requests(config, bound), false)), "fig3");
  } else if (name == "fig4") {
    constexpr double kEpsilon = 0.36;
    constexpr std::int64_t kMaxRounds = 3000;
    std::vector<int> taus(20);
    std::iota(taus.begin(), taus.end(), 1);
    Table t({"tau", "analytic_rounds", "simulated_rounds", "trials_reached"});
    for (const RequiredRounds& r : required_rounds(config, taus, kEpsilon, kMaxRounds)) {
      const auto reached = std::count_if(r.per_trial.begin(), r.per_trial.end(), [](std::int64_t v) { return v > 0; });
      t.add({static_cast<std::int64_t>(r.tau), r.analytic, r.simulated, static_cast<std::int64_t>(reached)});
    }
    extra["epsilon"] = kEpsilon;
    extra["max_rounds"] = kMaxRounds;
    emit(t, "fig4");
  } else if (name == "fig5") {
    Table t(rate_columns({"it_devices"}));
    const std::vector<SchemeSpec> schemes = {
        {"proposed", Scheme::Online, 0}, {"offline", Scheme::Offline, 0}, {"rsca", Scheme::Rsca, 0}};
    for (Index n = 1; n <= 10; ++n) {
      ExperimentConfig c = config;
      c.system.it_devices = n;
      const auto rates = scheme_rates(c, schemes);
      add_rate_rows(t, rates, {static_cast<std::int64_t>(n)});
      const SchemeRate& proposed = rates.front();
      if (proposed.feasible && proposed.p_it > 0.0) {
        const double q = channel::quantile_threshold(proposed.p_it, n);
        const double theta = c.theta();
        const double a1 = rates::analytic_rate_threshold(static_cast<int>(n), theta, q);
        const double a2 = rates::analytic_rate_rsca(static_cast<int>(n), theta, q);
        const double dur = c.system.symbol_duration;
        t.add({static_cast<std::int64_t>(n), std::string("analytic_threshold"), static_cast<std::int64_t>(proposed.tau),
               proposed.rounds, static_cast<std::int64_t>(proposed.fl_demand), std::int64_t{1}, proposed.p_it, a1, 0.0,
               rates::to_kbps(a1, dur)});
        t.add({static_cast<std::int64_t>(n), std::string("analytic_rsca"), static_cast<std::int64_t>(proposed.tau),
               proposed.rounds, static_cast<std::int64_t>(proposed.fl_demand), std::int64_t{1}, proposed.p_it, a2, 0.0,
               rates::to_kbps(a2, dur)});
      }
    }
    emit(t, "fig5");
  } else if (name == "fig6") {
    Table t({"symbols", "label", "tau", "rounds", "truncated", "final_gap", "final_avg_gap"});
    for (Index s : symbol_sweep(config.system.symbols)) {
      ExperimentConfig c = config;
      c.system.symbols = s;
      for (const GapCurve& g : gap_curves(c, comparison_requests(c, bound), false)) {
        t.add({static_cast<std::int64_t>(s), g.label, static_cast<std::int64_t>(g.tau), g.rounds,
               static_cast<std::int64_t>(g.truncated), g.final_gap(), g.final_avg_gap()});
      }
    }
    emit(t, "fig6");
  } else if (name == "fig7") {
    Table t(rate_columns({"symbols"}));
    for (Index s : symbol_sweep(config.system.symbols)) {
      ExperimentConfig c = config;
      c.system.symbols = s;
      add_rate_rows(t, scheme_rates(c, standard_schemes()), {static_cast<std::int64_t>(s)});
    }
    emit(t, "fig7");
  } else {
    Table t(rate_columns({}));
    add_rate_rows(t, scheme_rates(config, standard_schemes()), {});
    emit(t, "table1");
  }

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  nlohmann::json manifest;
  manifest["experiment"] = name;
  manifest["git_describe"] = CFLIT_GIT_DESCRIBE;
  manifest["config"] = config_json(config);
  manifest["base_seed"] = config.run.seed;
  nlohmann::json seeds = nlohmann::json::array();
  for (int i = 0; i < config.run.trials; ++i) seeds.push_back(trial_seed(config.run.seed, i));
  manifest["trial_seeds"] = seeds;
  manifest["bound"] = {{"lipschitz", bound.lipschitz}, {"hetero", bound.hetero}, {"channel_term", bound.channel_term}};
  manifest["parameters"] = extra;
  manifest["wall_seconds"] = seconds;
  nlohmann::json data = nlohmann::json::array();
  for (const auto& p : files.data) data.push_back(p.filename().string());
  manifest["files"] = data;
  files.manifest = out_dir / "manifest.json";
  std::ofstream out(files.manifest);
  if (!out) throw InvalidInput("cannot write '" + files.manifest.string() + "'");
  out << manifest.dump(2) << '\n';
  return files;
}

}  // namespace cflit::harness
