#include "cflit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

#include "cflit/aircomp.hpp"
#include "cflit/rates.hpp"

namespace cflit::harness {

namespace {

constexpr std::uint64_t kTrialTag = 0x7121A1;
constexpr std::uint64_t kSgdTag = 0x5ED;
constexpr std::uint64_t kNoiseTag = 0x2015E;
constexpr std::uint64_t kMaskTag = 0x3A5C;
constexpr std::uint64_t kTermTag = 0x7E53;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Sorted random subset of `count` coordinates out of `dim`.
std::vector<Index> random_mask(Index dim, Index count, CounterRng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(dim));
  for (Index i = 0; i < dim; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.uniform_index(static_cast<std::uint64_t>(dim - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

double last_finite(const std::vector<RoundRecord>& records, double RoundRecord::*field) {
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (std::isfinite((*it).*field)) return (*it).*field;
  }
  return kNaN;
}

}  // namespace

TrialSeeds TrialSeeds::derive(std::uint64_t seed) {
  return {stream_key(seed, {1}), stream_key(seed, {2}), stream_key(seed, {3}), stream_key(seed, {4}),
          stream_key(seed, {5})};
}

std::uint64_t trial_seed(std::uint64_t base, int trial) {
  return stream_key(base, {kTrialTag, static_cast<std::uint64_t>(trial)});
}

hyperopt::BoundParams bound_params(const ExperimentConfig& config, const TrialData* trial, std::uint64_t seed) {
  hyperopt::BoundParams b;
  b.mu = config.learning.reg;
  b.grad_bound = config.learning.clip;
  b.noise_var = config.system.noise_var;
  b.power_cap = config.system.fl_power;
  b.gamma = config.learning.gamma;
  b.lipschitz = config.hyperopt.lipschitz;
  b.hetero = config.hyperopt.hetero;
  b.channel_term = config.hyperopt.channel_term;
  if (trial != nullptr) b.init_dist_sq = trial->optimum.weights.squaredNorm();
  if (config.hyperopt.source == HyperoptConfig::Source::Estimated) {
    if (trial == nullptr || !trial->estimate) {
      throw InvalidConfig("estimated hyperopt parameters need a learning estimate");
    }
    b.lipschitz = trial->estimate->params.lipschitz;
    b.hetero = trial->estimate->params.hetero;
    std::optional<double> floor;
    if (config.hyperopt.channel_term_floor > 0.0) floor = config.hyperopt.channel_term_floor;
    b.channel_term = aircomp::estimate_channel_term(trial->dataset.weights, config.hyperopt.channel_term_samples,
                                                    stream_key(seed, {kTermTag}), floor);
  }
  return b;
}

HyperPlan plan_hyperparameters(const ExperimentConfig& config, const hyperopt::BoundParams& bound) {
  HyperPlan plan;
  plan.bound = bound;
  plan.tau_relax = hyperopt::tau_relax(bound.grad_bound, bound.lipschitz, bound.hetero);
  plan.tau = config.allocation.scheme == AllocationConfig::Scheme::FixedTau
                 ? config.allocation.fixed_tau
                 : hyperopt::optimal_tau(bound.grad_bound, bound.lipschitz, bound.hetero);
  if (config.hyperopt.tau > 0) plan.tau = config.hyperopt.tau;
  plan.zeta = hyperopt::zeta(plan.tau, bound);
  plan.rounds = config.hyperopt.rounds > 0 ? config.hyperopt.rounds
                                           : hyperopt::optimal_T(plan.tau, config.learning.epsilon, bound);
  return plan;
}

Index transmit_dim(const ExperimentConfig& config) {
  const learning::SyntheticConfig s = config.synthetic();
  const Index dim = s.classes * (s.features + 1);
  return config.learning.compressed_dim > 0 ? config.learning.compressed_dim : dim;
}

ItOutcome allocate_and_rate(const ExperimentConfig& config, AllocationConfig::Scheme scheme, Index fl_demand,
                            const TrialSeeds& seeds) {
  const SystemConfig& sys = config.system;
  channel::ChannelConfig it_config;
  it_config.devices = sys.it_devices;
  it_config.subcarriers = sys.subcarriers;
  it_config.symbols = sys.symbols;
  it_config.coherence_len = sys.coherence_len;
  it_config.profile = sys.profile;
  const allocation::FadingGainSource source(channel::FadingModel(it_config, seeds.it_channel));

  ItOutcome out;
  if (scheme == AllocationConfig::Scheme::Offline) {
    out.allocation = allocation::offline_allocate(source, sys.subcarriers, sys.symbols, fl_demand);
  } else {
    allocation::GainStream stream(source);
    out.allocation = scheme == AllocationConfig::Scheme::Rsca
                         ? allocation::rsca_allocate(stream, sys.subcarriers, sys.symbols, fl_demand, seeds.allocation)
                         : allocation::online_allocate(stream, sys.subcarriers, sys.symbols, fl_demand);
  }
  out.bits_per_rb = rates::average_sum_rate(out.allocation.grid, source, config.theta());
  out.kbps = rates::to_kbps(out.bits_per_rb, sys.symbol_duration);
  return out;
}

std::vector<std::vector<allocation::Rb>> sequential_rounds(Index subcarriers, Index symbols, Index d,
                                                           std::int64_t rounds) {
  if (d < 1 || rounds < 0) throw InvalidInput("sequential_rounds: need d >= 1 and rounds >= 0");
  const Index needed = d * rounds;
  if (needed > subcarriers * symbols) {
    throw Infeasible("sequential_rounds: " + std::to_string(needed) + " RBs exceed the frame", needed,
                     subcarriers * symbols, (needed + subcarriers - 1) / subcarriers);
  }
  std::vector<std::vector<allocation::Rb>> out(static_cast<std::size_t>(rounds));
  for (Index r = 0; r < needed; ++r) {
    out[static_cast<std::size_t>(r / d)].push_back({r % subcarriers, r / subcarriers});
  }
  return out;
}

FlOutcome run_federated(const ExperimentConfig& config, const FlProblem& problem, int tau,
                        const std::vector<std::vector<allocation::Rb>>& round_rbs, const TrialSeeds& seeds,
                        const std::function<bool(const RoundRecord&)>& stop) {
  const learning::SyntheticDataset& data = *problem.dataset;
  const learning::DeviceData& pooled = *problem.pooled;
  const SystemConfig& sys = config.system;
  const LearningConfig& lc = config.learning;
  const Index dim = data.model_dim();
  const Index tx_dim = transmit_dim(config);
  const auto devices = static_cast<Index>(data.devices.size());
  const bool compressed = tx_dim < dim;

  channel::ChannelConfig fl_config;
  fl_config.devices = devices;
  fl_config.subcarriers = sys.subcarriers;
  fl_config.symbols = sys.symbols;
  fl_config.coherence_len = sys.coherence_len;
  fl_config.profile = sys.profile;
  const channel::FadingModel fl_channel(fl_config, seeds.fl_channel);

  learning::LearningRateSchedule schedule;
  schedule.kind = lc.schedule;
  schedule.base = lc.base_rate;
  schedule.gamma = lc.gamma;
  schedule.mu = lc.reg;
  schedule.tau = tau;

  learning::ModelState state{Eigen::VectorXd::Zero(dim), 0, schedule(0)};
  learning::WeightedAverager averager(lc.gamma);
  std::vector<Eigen::VectorXd> residual(static_cast<std::size_t>(compressed ? devices : 0),
                                        Eigen::VectorXd::Zero(dim));
  learning::LocalSgdConfig sgd{tau, lc.batch, 0.0, lc.clip, lc.reg};

  FlOutcome out;
  const auto total = static_cast<std::int64_t>(round_rbs.size());
  for (std::int64_t t = 0; t < total; ++t) {
    const auto& rbs = round_rbs[static_cast<std::size_t>(t)];
    if (static_cast<Index>(rbs.size()) != tx_dim) {
      throw InvalidInput("run_federated: round " + std::to_string(t) + " has " + std::to_string(rbs.size()) +
                         " RBs, expected " + std::to_string(tx_dim));
    }
    averager.add(state.weights);
    sgd.learning_rate = state.learning_rate;

    std::vector<Index> mask;
    if (compressed) {
      CounterRng mask_rng(stream_key(seeds.training, {kMaskTag, static_cast<std::uint64_t>(t)}));
      mask = random_mask(dim, tx_dim, mask_rng);
    }

    std::vector<aircomp::LocalUpdateStats> stats;
    stats.reserve(static_cast<std::size_t>(devices));
    for (Index k = 0; k < devices; ++k) {
      CounterRng rng(stream_key(seeds.training, {kSgdTag, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t)}));
      Eigen::VectorXd delta = learning::local_sgd(state.weights, data.devices[static_cast<std::size_t>(k)], sgd, rng);
      if (compressed) {
        Eigen::VectorXd& carry = residual[static_cast<std::size_t>(k)];
        carry += delta;
        delta = carry(mask);
        carry(mask).setZero();
      }
      stats.push_back(aircomp::normalize_update(delta, data.weights(k)));
    }

    Eigen::MatrixXcd h(devices, tx_dim);
    for (Index i = 0; i < tx_dim; ++i) {
      const allocation::Rb rb = rbs[static_cast<std::size_t>(i)];
      for (Index k = 0; k < devices; ++k) h(k, i) = fl_channel.coefficient(k, rb.subcarrier, rb.symbol);
    }
    Eigen::VectorXd stds(devices);
    for (Index k = 0; k < devices; ++k) stds(k) = stats[static_cast<std::size_t>(k)].std;
    const aircomp::TransceiverDesign design = aircomp::design_transceivers(h, data.weights, stds, sys.fl_power);
    CounterRng noise(stream_key(seeds.training, {kNoiseTag, static_cast<std::uint64_t>(t)}));
    const aircomp::AggregationResult agg = aircomp::aggregate_over_air(stats, design, h, sys.noise_var, noise);

    RoundRecord record;
    record.round = t;
    record.learning_rate = state.learning_rate;
    record.mse = agg.mse_realized;
    record.mse_closed_form = agg.mse_closed_form;
    if (compressed) {
      Eigen::VectorXd full = Eigen::VectorXd::Zero(dim);
      full(mask) = agg.estimate;
      state = learning::global_update(state, full, schedule);
    } else {
      state = learning::global_update(state, agg.estimate, schedule);
    }

    const bool evaluate = (t + 1) % config.run.eval_every == 0 || t + 1 == total;
    record.gap = kNaN;
    record.avg_gap = kNaN;
    if (evaluate) {
      record.gap = learning::loss(state.weights, pooled, lc.reg) - problem.optimum;
      record.avg_gap = learning::loss(averager.value(), pooled, lc.reg) - problem.optimum;
    }
    out.rounds.push_back(record);
    if (stop && evaluate && stop(record)) break;
  }
  out.final_weights = state.weights;
  out.averaged_weights = averager.count() > 0 ? averager.value() : state.weights;
  return out;
}

double SimulationTranscript::final_gap() const { return last_finite(records, &RoundRecord::gap); }

double SimulationTranscript::final_avg_gap() const { return last_finite(records, &RoundRecord::avg_gap); }

TrialData prepare_trial(const ExperimentConfig& config, const TrialSeeds& seeds) {
  TrialData td;
  td.dataset = learning::generate_synthetic(config.synthetic(), seeds.data);
  td.pooled = td.dataset.pooled();
  if (config.hyperopt.source == HyperoptConfig::Source::Estimated) {
    td.estimate = learning::estimate_learning_params(td.dataset, config.learning.reg, config.learning.clip,
                                                     config.learning.gamma, config.learning.batch,
                                                     config.learning.optimum_tol);
    td.optimum = td.estimate->global;
  } else {
    td.optimum = learning::estimate_optimum(td.pooled, config.learning.reg, config.learning.optimum_tol,
                                            td.dataset.model_dim());
  }
  return td;
}

SimulationTranscript run_cflit(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const TrialSeeds seeds = TrialSeeds::derive(seed);
  const TrialData td = prepare_trial(config, seeds);

  const hyperopt::BoundParams bound = bound_params(config, &td, seeds.data);
  const HyperPlan plan = plan_hyperparameters(config, bound);

  const Index tx_dim = transmit_dim(config);
  if (plan.rounds > std::numeric_limits<Index>::max() / tx_dim) throw DomainError("FL demand overflows");
  const Index demand = tx_dim * plan.rounds;
  const ItOutcome it = allocate_and_rate(config, config.allocation.scheme, demand, seeds);
  const auto round_rbs = allocation::partition_fl_rbs(it.allocation.grid, tx_dim);

  const FlProblem problem{&td.dataset, &td.pooled, td.optimum.value};
  const FlOutcome fl = run_federated(config, problem, plan.tau, round_rbs, seeds);

  SimulationTranscript tr;
  tr.scheme = to_string(config.allocation.scheme);
  tr.seed = seed;
  tr.tau = plan.tau;
  tr.rounds = plan.rounds;
  tr.transmit_dim = tx_dim;
  tr.fl_demand = demand;
  tr.p_it = it.allocation.budget.p_it;
  tr.q = std::isfinite(it.allocation.budget.q) ? it.allocation.budget.q : kNaN;
  tr.optimum = td.optimum.value;
  tr.bound = bound;
  tr.fl_rbs = it.allocation.grid.fl_count();
  tr.it_rbs = it.allocation.grid.it_count();
  tr.it_bits_per_rb = it.bits_per_rb;
  tr.it_kbps = it.kbps;
  tr.records = fl.rounds;
  return tr;
}

void write_transcript_csv(std::ostream& out, const SimulationTranscript& transcript) {
  out << "round,gap,avg_gap,mse,mse_closed_form,learning_rate\n";
  out.precision(10);
  for (const RoundRecord& r : transcript.records) {
    out << r.round << ',' << r.gap << ',' << r.avg_gap << ',' << r.mse << ',' << r.mse_closed_form << ','
        << r.learning_rate << '\n';
  }
}

nlohmann::json transcript_json(const SimulationTranscript& t) {
  nlohmann::json j;
  j["scheme"] = t.scheme;
  j["seed"] = t.seed;
  j["tau"] = t.tau;
  j["rounds"] = t.rounds;
  j["transmit_dim"] = t.transmit_dim;
  j["fl_demand"] = t.fl_demand;
  j["p_it"] = t.p_it;
  j["q"] = t.q;
  j["optimum"] = t.optimum;
  j["bound"] = {{"mu", t.bound.mu},
                {"lipschitz", t.bound.lipschitz},
                {"hetero", t.bound.hetero},
                {"grad_bound", t.bound.grad_bound},
                {"noise_var", t.bound.noise_var},
                {"power_cap", t.bound.power_cap},
                {"channel_term", t.bound.channel_term},
                {"gamma", t.bound.gamma},
                {"init_dist_sq", t.bound.init_dist_sq}};
  j["fl_rbs"] = t.fl_rbs;
  j["it_rbs"] = t.it_rbs;
  j["it_bits_per_rb"] = t.it_bits_per_rb;
  j["it_kbps"] = t.it_kbps;
  j["final_gap"] = t.final_gap();
  j["final_avg_gap"] = t.final_avg_gap();
  nlohmann::json rounds = nlohmann::json::array();
  for (const RoundRecord& r : t.records) {
    rounds.push_back({r.round, r.gap, r.avg_gap, r.mse, r.mse_closed_form, r.learning_rate});
  }
  j["records_columns"] = {"round", "gap", "avg_gap", "mse", "mse_closed_form", "learning_rate"};
  j["records"] = std::move(rounds);
  return j;
}

}  // namespace cflit::harness
