#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cflit/allocation.hpp"
#include "cflit/config.hpp"
#include "cflit/hyperopt.hpp"
#include "cflit/learning.hpp"

namespace cflit::harness {

using Eigen::Index;

/// Independent sub-seeds of one trial.
struct TrialSeeds {
  std::uint64_t data;
  std::uint64_t fl_channel;
  std::uint64_t it_channel;
  std::uint64_t training;
  std::uint64_t allocation;

  static TrialSeeds derive(std::uint64_t seed);
};

/// Constants feeding the bound, with the learning rate constants used for
/// the round count and the chosen (tau, T).
struct HyperPlan {
  hyperopt::BoundParams bound;
  int tau = 1;
  std::int64_t rounds = 1;
  double tau_relax = 1.0;
  double zeta = 0.0;
};

/// Problem data shared by every scheme of one trial.
struct TrialData {
  learning::SyntheticDataset dataset;
  learning::DeviceData pooled;
  learning::Optimum optimum;
  std::optional<learning::LearningEstimate> estimate;
};

TrialData prepare_trial(const ExperimentConfig& config, const TrialSeeds& seeds);

/// Bound constants from the config. With estimated parameters, `trial` supplies
/// measured L and Gamma, and the channel term is drawn by Monte Carlo with
/// the trial's data weights. ||w*||^2 comes from the trial when given.
hyperopt::BoundParams bound_params(const ExperimentConfig& config, const TrialData* trial, std::uint64_t seed);

/// tau and T for a scheme: fixed_tau uses the configured tau with its own
/// round count; the hyperopt overrides replace either value when nonzero.
HyperPlan plan_hyperparameters(const ExperimentConfig& config, const hyperopt::BoundParams& bound);

/// Symbols each device transmits per round.
Index transmit_dim(const ExperimentConfig& config);

struct ItOutcome {
  allocation::AllocationResult allocation;
  double bits_per_rb = 0.0;
  double kbps = 0.0;
};

/// Allocates the M x S grid for the given FL demand with the configured
/// scheme (fixed_tau uses the online rule) and evaluates the IT rate.
ItOutcome allocate_and_rate(const ExperimentConfig& config, AllocationConfig::Scheme scheme, Index fl_demand,
                            const TrialSeeds& seeds);

struct RoundRecord {
  std::int64_t round = 0;
  /// F(w_{t+1}) - F*; NaN on rounds that were not evaluated.
  double gap = 0.0;
  /// F(w_avg) - F* for the weighted average of w_0..w_t.
  double avg_gap = 0.0;
  double mse = 0.0;
  double mse_closed_form = 0.0;
  double learning_rate = 0.0;
};

struct FlOutcome {
  std::vector<RoundRecord> rounds;
  Eigen::VectorXd final_weights;
  Eigen::VectorXd averaged_weights;
};

struct FlProblem {
  const learning::SyntheticDataset* dataset = nullptr;
  const learning::DeviceData* pooled = nullptr;
  double optimum = 0.0;
};

/// Runs over-the-air FL for tau local steps per round, one round per entry
/// of `round_rbs` (the RBs each round transmits on). Optional `stop`
/// ends training early after a round.
FlOutcome run_federated(const ExperimentConfig& config, const FlProblem& problem, int tau,
                        const std::vector<std::vector<allocation::Rb>>& round_rbs, const TrialSeeds& seeds,
                        const std::function<bool(const RoundRecord&)>& stop = {});

/// RBs for `rounds` rounds laid out symbol-major from the start of the frame,
/// ignoring IT; used when the round budget, not the allocator, is fixed.
std::vector<std::vector<allocation::Rb>> sequential_rounds(Index subcarriers, Index symbols, Index d,
                                                           std::int64_t rounds);

struct SimulationTranscript {
  std::string scheme;
  std::uint64_t seed = 0;
  int tau = 1;
  std::int64_t rounds = 0;
  Index transmit_dim = 0;
  Index fl_demand = 0;
  double p_it = 0.0;
  /// NaN when p_it = 0.
  double q = 0.0;
  double optimum = 0.0;
  hyperopt::BoundParams bound;
  Index fl_rbs = 0;
  Index it_rbs = 0;
  double it_bits_per_rb = 0.0;
  double it_kbps = 0.0;
  std::vector<RoundRecord> records;

  double final_gap() const;
  double final_avg_gap() const;
};

/// Generate data, pick (tau, T), allocate, train T rounds over the FL RBs and
/// rate the IT RBs. Throws Infeasible when d T exceeds M S.
SimulationTranscript run_cflit(const ExperimentConfig& config, std::uint64_t seed);

/// Seed of trial i derived from the base seed.
std::uint64_t trial_seed(std::uint64_t base, int trial);

/// Runs fn(trial) for trial = 0..trials-1 on the configured number of
/// threads and returns results in trial order.
template <typename T>
std::vector<T> run_trials(int trials, int threads, const std::function<T(int)>& fn);

void write_transcript_csv(std::ostream& out, const SimulationTranscript& transcript);
nlohmann::json transcript_json(const SimulationTranscript& transcript);

}  // namespace cflit::harness

#include "cflit/detail/trials.hpp"
