#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cflit/channel.hpp"
#include "cflit/learning.hpp"

namespace cflit {

struct SystemConfig {
  Eigen::Index fl_devices = 20;   // K
  Eigen::Index it_devices = 5;    // N
  Eigen::Index subcarriers = 512; // M
  Eigen::Index symbols = 2000;    // S
  double fl_power = 1.0;          // P1
  double it_power = 1.0;          // P2
  double noise_var = 0.1;         // sigma^2
  double gap_db = 6.0;            // phi
  double symbol_duration = 16e-6; // seconds
  Eigen::Index coherence_len = 1;
  channel::FadingProfile profile = channel::FadingProfile::Iid;
};

struct LearningConfig {
  double alpha = 1.0;
  double beta = 1.0;
  Eigen::Index total_samples = 20000;
  double power_law_exponent = 1.5;
  Eigen::Index min_size = 32;
  Eigen::Index batch = 32;
  double clip = 1.0; // G
  double gamma = 1000.0;
  learning::LearningRateSchedule::Kind schedule = learning::LearningRateSchedule::Kind::Decaying;
  double base_rate = 0.05;
  double reg = 0.5;
  double epsilon = 0.34;
  /// Symbols sent per round; 0 sends the full model.
  Eigen::Index compressed_dim = 0;
  double optimum_tol = 1e-8;
};

struct HyperoptConfig {
  enum class Source { Configured, Estimated };

  /// Configured uses the constants below; Estimated measures L and Gamma on
  /// the generated data and the channel term by Monte Carlo.
  Source source = Source::Configured;
  double lipschitz = 10.25;
  double hetero = 0.639;
  double channel_term = 1.294;
  std::int64_t channel_term_samples = 100000;
  /// Gain floor for the Monte Carlo channel term; 0 disables it.
  double channel_term_floor = 1e-3;
  /// Overrides for tau and the round count; 0 means use the optimizer.
  int tau = 0;
  std::int64_t rounds = 0;
};

struct AllocationConfig {
  enum class Scheme { Online, Offline, Rsca, FixedTau };

  Scheme scheme = Scheme::Online;
  int fixed_tau = 10;
};

struct RunConfig {
  int trials = 20;
  std::uint64_t seed = 1;
  /// Worker threads for independent trials; 0 picks the hardware count.
  int threads = 0;
  /// Evaluate the optimality gap every this many rounds (the last round is always evaluated).
  std::int64_t eval_every = 1;
};

struct ExperimentConfig {
  SystemConfig system;
  LearningConfig learning;
  HyperoptConfig hyperopt;
  AllocationConfig allocation;
  RunConfig run;

  /// Throws InvalidConfig on out-of-range values.
  void validate() const;
  learning::SyntheticConfig synthetic() const;
  double theta() const;
};

/// Reads an INI-style file of `key = value` lines in [system], [learning],
/// [hyperopt], [allocation] and [run] sections. Missing keys keep their
/// defaults; unknown sections or keys are rejected.
ExperimentConfig load_config(std::istream& in);
ExperimentConfig load_config_file(const std::string& path);

/// The resolved configuration in the same INI layout.
void write_config(std::ostream& out, const ExperimentConfig& config);
nlohmann::json config_json(const ExperimentConfig& config);

/// Applies "section.key=value" assignments on top of `config` and revalidates.
ExperimentConfig apply_overrides(const ExperimentConfig& config, const std::vector<std::string>& assignments);

/// Full-scale defaults (K = 20, N = 5, M = 512, S = 2000, full model).
ExperimentConfig full_config();

/// Desk scale: K = 10, M = 64, S = 400, 61 symbols per round, 2000 samples.
ExperimentConfig desk_config();

std::string to_string(AllocationConfig::Scheme scheme);
AllocationConfig::Scheme parse_scheme(const std::string& name);

}  // namespace cflit
