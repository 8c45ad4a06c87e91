#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cflit/error.hpp"
#include "cflit/rng.hpp"

namespace cflit::learning {

using Eigen::Index;

/// One device's local samples: features (samples x features) and class labels.
struct DeviceData {
  Eigen::MatrixXd features;
  Eigen::VectorXi labels;

  Index size() const { return features.rows(); }
};

struct SyntheticConfig {
  double alpha = 1.0;
  double beta = 1.0;
  Index devices = 20;
  Index total_samples = 20000;
  double power_law_exponent = 1.5;
  Index min_size = 32;
  Index features = 60;
  Index classes = 10;
  /// Feature j (1-based) has conditional variance j^{-feature_decay}.
  double feature_decay = 1.2;
};

/// Parameters each device's samples were drawn from; kept for inspection and tests.
struct DeviceGenerator {
  double model_mean = 0.0;  // u_k
  double data_mean = 0.0;   // B_k
  Eigen::MatrixXd weights;  // W_k, classes x features
  Eigen::VectorXd bias;     // b_k
  Eigen::VectorXd center;   // v_k
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::uint64_t seed = 0;
  std::vector<DeviceData> devices;
  /// rho_k = D_k / D.
  Eigen::VectorXd weights;
  std::vector<DeviceGenerator> generators;

  Index classes() const { return config.classes; }
  Index features() const { return config.features; }
  /// classes * features weights plus classes biases (610 for the default task).
  Index model_dim() const { return config.classes * (config.features + 1); }
  Index total_samples() const;
  DeviceData pooled() const;
};

/// Dataset sizes from a Pareto power law with the given tail exponent, each
/// at least min_size, rescaled to sum to exactly `total`.
std::vector<Index> power_law_sizes(Index devices, Index total, double exponent, Index min_size, std::uint64_t seed);

/// Heterogeneous softmax-generated data: W_k, b_k ~ N(u_k, 1), u_k ~ N(0, alpha);
/// x_j ~ N(v_k[j], j^{-1.2}), v_k[j] ~ N(B_k, 1), B_k ~ N(0, beta);
/// y = argmax(W_k x + b_k).
SyntheticDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

void save_dataset(std::ostream& out, const SyntheticDataset& dataset);
SyntheticDataset load_dataset(std::istream& in);

// --- regularized multinomial logistic regression -------------------------
//
// The flat parameter vector holds W (classes x features, row-major)
// followed by the bias b (classes).

/// Mean cross-entropy of softmax(W x + b) plus (reg / 2) ||w||^2.
double loss(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data, double reg);

/// Loss and its gradient over all samples of `data`.
double loss_and_gradient(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data, double reg,
                         Eigen::VectorXd& gradient);

Eigen::VectorXd gradient(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data, double reg);

/// Product of the unregularized cross-entropy Hessian with `direction`.
Eigen::VectorXd hessian_vector_product(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data,
                                       const Eigen::Ref<const Eigen::VectorXd>& direction);

/// v * min(1, bound / ||v||).
template <typename Derived>
Eigen::VectorXd clip(const Eigen::MatrixBase<Derived>& v, double bound) {
  const double norm = v.norm();
  if (norm <= bound || norm == 0.0) return v;
  return v * (bound / norm);
}

struct LocalSgdConfig {
  int tau = 1;
  Index batch = 32;
  double learning_rate = 0.05;
  double clip = 1.0;
  double reg = 0.5;
};

/// Runs tau clipped mini-batch SGD steps from `global` on one device's data
/// and returns the model change. Batches are consecutive slices of a random
/// permutation, reshuffled whenever fewer than `batch` unused samples remain.
Eigen::VectorXd local_sgd(const Eigen::Ref<const Eigen::VectorXd>& global, const DeviceData& data,
                          const LocalSgdConfig& config, CounterRng& rng);

struct LearningRateSchedule {
  enum class Kind {
    /// base * gamma / (gamma + t)
    Decaying,
    /// 8 / (mu tau (gamma + t)), the schedule the convergence bound assumes.
    Theorem,
  };

  Kind kind = Kind::Decaying;
  double base = 0.05;
  double gamma = 1000.0;
  double mu = 0.5;
  int tau = 1;

  double operator()(std::int64_t round) const;
};

struct ModelState {
  Eigen::VectorXd weights;
  std::int64_t round = 0;
  double learning_rate = 0.0;
};

/// w_{t+1} = w_t + estimate; advances the round and the learning rate.
ModelState global_update(const ModelState& state, const Eigen::Ref<const Eigen::VectorXd>& estimate,
                         const LearningRateSchedule& schedule);

/// Running weighted average with weights eta_t = (gamma + t)^2.
class WeightedAverager {
 public:
  explicit WeightedAverager(double gamma) : gamma_(gamma) {}

  void add(const Eigen::Ref<const Eigen::VectorXd>& w);
  Eigen::VectorXd value() const;
  std::int64_t count() const { return count_; }
  double weight_sum() const { return weight_sum_; }

 private:
  double gamma_;
  std::int64_t count_ = 0;
  double weight_sum_ = 0.0;
  Eigen::VectorXd sum_;
};

Eigen::VectorXd weighted_average(const std::vector<Eigen::VectorXd>& history, double gamma);

struct Optimum {
  double value = 0.0;
  Eigen::VectorXd weights;
  std::int64_t iterations = 0;
  double grad_norm = 0.0;
};

/// Accelerated full-batch gradient descent (backtracking step, gradient
/// restart) until ||grad F|| < tolerance.
Optimum estimate_optimum(const DeviceData& data, double reg, double tolerance, Index model_dim,
                         std::optional<Eigen::VectorXd> start = std::nullopt, std::int64_t max_iterations = 200000);

struct LearningParams {
  double mu = 0.5;
  double lipschitz = 10.25;
  double hetero = 0.639;
  double grad_bound = 1.0;
  double gamma = 1000.0;
  double clip = 1.0;
  Index batch = 32;
  double reg = 0.5;

  void validate(bool for_bound = false) const;
};

struct LearningEstimate {
  LearningParams params;
  Optimum global;
  std::vector<double> local_optima;
  /// ||w_0 - w*||^2 with w_0 = 0.
  double init_dist_sq = 0.0;
};

/// mu = reg; L = reg + power-iteration estimate of the cross-entropy Hessian
/// norm at w*; Gamma = F* - sum_k rho_k F_k*; G = clip.
LearningEstimate estimate_learning_params(const SyntheticDataset& dataset, double reg, double clip = 1.0,
                                          double gamma = 1000.0, Index batch = 32, double tolerance = 1e-8);

}  // namespace cflit::learning
