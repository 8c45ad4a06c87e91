#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cflit/harness.hpp"

namespace cflit::harness {

/// One compared scheme: an allocation rule plus how tau is chosen (0 = tau*).
struct SchemeSpec {
  std::string name;
  AllocationConfig::Scheme scheme;
  int tau = 0;
};

/// Bound constants used to pick (tau, T) before trials run: the configured
/// constants, or the estimates from trial 0's data.
hyperopt::BoundParams reference_bound(const ExperimentConfig& config);

/// proposed, offline, rsca, fixed_tau1, fixed_tau10.
std::vector<SchemeSpec> standard_schemes();

struct SchemeRate {
  std::string name;
  int tau = 1;
  std::int64_t rounds = 0;
  Index fl_demand = 0;
  /// False when d T exceeds M S; the scheme then spends every RB on FL and its IT rate is 0.
  bool feasible = true;
  double p_it = 0.0;
  double bits_mean = 0.0;
  double bits_stderr = 0.0;
  double kbps_mean = 0.0;
};

/// Mean IT rate of each scheme over config.run.trials independent channel draws.
std::vector<SchemeRate> scheme_rates(const ExperimentConfig& config, const std::vector<SchemeSpec>& schemes);

struct GapCurve {
  std::string label;
  int tau = 1;
  /// Rounds actually run; shorter than requested when the frame cannot host them.
  std::int64_t rounds = 0;
  bool truncated = false;
  std::vector<std::int64_t> round;
  std::vector<double> gap;
  std::vector<double> avg_gap;

  double final_gap() const;
  double final_avg_gap() const;
};

struct CurveRequest {
  std::string label;
  int tau = 1;
  std::int64_t rounds = 0;
  /// Cap the rounds at the frame capacity M S / d instead of throwing.
  bool allow_truncation = false;
};

/// Mean optimality-gap curves over config.run.trials; all requests of a trial
/// share that trial's dataset and channels. RBs are taken symbol-major from
/// the frame, or from an extended frame when `extend_frame` is set.
std::vector<GapCurve> gap_curves(const ExperimentConfig& config, const std::vector<CurveRequest>& requests,
                                 bool extend_frame);

struct RequiredRounds {
  int tau = 1;
  std::int64_t analytic = 0;
  std::int64_t simulated = -1;
  /// Per-trial first crossing rounds (-1 where not reached).
  std::vector<std::int64_t> per_trial;
};

/// For each tau: rounds predicted by the bound at `epsilon`, and the mean over
/// trials of the first round whose averaged-model gap is <= epsilon (-1 if
/// some trial does not get there within max_rounds).
std::vector<RequiredRounds> required_rounds(const ExperimentConfig& config, const std::vector<int>& taus,
                                            double epsilon, std::int64_t max_rounds);

/// Names accepted by reproduce_experiment.
const std::vector<std::string>& experiment_names();

enum class OutputFormat { Csv, Json };

struct ExperimentFiles {
  std::vector<std::filesystem::path> data;
  std::filesystem::path manifest;
};

/// Runs a named experiment and writes one data file (CSV with a header line,
/// or JSON) plus manifest.json into out_dir. Throws InvalidInput for unknown names.
ExperimentFiles reproduce_experiment(const std::string& name, const ExperimentConfig& config,
                                     const std::filesystem::path& out_dir, OutputFormat format = OutputFormat::Csv);

}  // namespace cflit::harness
