#include "cflit/learning.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

namespace cflit::learning {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint64_t kSizesTag = 0x512E;
constexpr std::uint64_t kDeviceTag = 0xDE71CE;

struct Shape {
  Index classes;
  Index features;
};

Shape shape_of(Index dim, const DeviceData& data) {
  const Index features = data.features.cols();
  if (features < 1 || dim % (features + 1) != 0 || dim / (features + 1) < 2) {
    throw InvalidInput("model dimension " + std::to_string(dim) + " does not match " + std::to_string(features) +
                       " features");
  }
  if (data.labels.size() != data.features.rows()) throw InvalidInput("labels/features row mismatch");
  return {dim / (features + 1), features};
}

/// Row-wise softmax probabilities of X W^T + b, with the mean cross-entropy.
double softmax_probabilities(const Eigen::Ref<const Eigen::VectorXd>& weights, const Shape& shape,
                             const Eigen::MatrixXd& features, const Eigen::VectorXi& labels, Eigen::MatrixXd& probs) {
  const Eigen::Map<const RowMajorMatrix> w(weights.data(), shape.classes, shape.features);
  const Eigen::Map<const Eigen::VectorXd> b(weights.data() + shape.classes * shape.features, shape.classes);
  probs.noalias() = features * w.transpose();
  probs.rowwise() += b.transpose();
  const Eigen::VectorXd row_max = probs.rowwise().maxCoeff();
  probs.colwise() -= row_max;
  double cross_entropy = 0.0;
  for (Index i = 0; i < probs.rows(); ++i) cross_entropy -= probs(i, labels(i));
  probs = probs.array().exp();
  const Eigen::VectorXd sums = probs.rowwise().sum();
  cross_entropy += sums.array().log().sum();
  probs.array().colwise() /= sums.array();
  return cross_entropy / static_cast<double>(probs.rows());
}

void scatter_gradient(const Eigen::MatrixXd& residual, const Eigen::MatrixXd& features, const Shape& shape,
                      double scale, Eigen::VectorXd& out) {
  out.resize(shape.classes * (shape.features + 1));
  Eigen::Map<RowMajorMatrix> dw(out.data(), shape.classes, shape.features);
  dw.noalias() = scale * residual.transpose() * features;
  out.tail(shape.classes) = scale * residual.colwise().sum().transpose();
}

double loss_grad_rows(const Eigen::Ref<const Eigen::VectorXd>& weights, const Shape& shape,
                      const Eigen::MatrixXd& features, const Eigen::VectorXi& labels, double reg,
                      Eigen::VectorXd& grad) {
  Eigen::MatrixXd probs(features.rows(), shape.classes);
  const double ce = softmax_probabilities(weights, shape, features, labels, probs);
  for (Index i = 0; i < probs.rows(); ++i) probs(i, labels(i)) -= 1.0;
  scatter_gradient(probs, features, shape, 1.0 / static_cast<double>(features.rows()), grad);
  grad += reg * weights;
  return ce + 0.5 * reg * weights.squaredNorm();
}

}  // namespace

Index SyntheticDataset::total_samples() const {
  Index total = 0;
  for (const auto& d : devices) total += d.size();
  return total;
}

DeviceData SyntheticDataset::pooled() const {
  DeviceData out;
  out.features.resize(total_samples(), config.features);
  out.labels.resize(total_samples());
  Index row = 0;
  for (const auto& d : devices) {
    out.features.middleRows(row, d.size()) = d.features;
    out.labels.segment(row, d.size()) = d.labels;
    row += d.size();
  }
  return out;
}

std::vector<Index> power_law_sizes(Index devices, Index total, double exponent, Index min_size,
                                   std::uint64_t seed) {
  if (devices < 1 || min_size < 1 || !(exponent > 0.0)) {
    throw InvalidConfig("power_law_sizes: need devices >= 1, min_size >= 1, exponent > 0");
  }
  if (total < devices * min_size) {
    throw InvalidConfig("power_law_sizes: total " + std::to_string(total) + " below devices * min_size");
  }
  CounterRng rng(stream_key(seed, {kSizesTag}));
  std::vector<double> raw(static_cast<std::size_t>(devices));
  for (auto& r : raw) r = std::pow(rng.uniform(), -1.0 / exponent);
  const double raw_sum = std::accumulate(raw.begin(), raw.end(), 0.0);

  const Index extra = total - devices * min_size;
  std::vector<Index> sizes(raw.size());
  std::vector<double> fraction(raw.size());
  Index assigned = 0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double share = static_cast<double>(extra) * raw[k] / raw_sum;
    const auto whole = static_cast<Index>(std::floor(share));
    sizes[k] = min_size + whole;
    fraction[k] = share - static_cast<double>(whole);
    assigned += whole;
  }
  // Largest remainders get the leftover samples; ties go to the lower index.
  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fraction[a] > fraction[b]; });
  for (Index r = 0; r < extra - assigned; ++r) ++sizes[order[static_cast<std::size_t>(r) % order.size()]];
  return sizes;
}

SyntheticDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.devices < 1 || config.total_samples < config.devices || config.features < 1 || config.classes < 2) {
    throw InvalidConfig("generate_synthetic: invalid device, sample, feature or class counts");
  }
  if (config.alpha < 0.0 || config.beta < 0.0) throw InvalidConfig("generate_synthetic: alpha, beta must be >= 0");

  SyntheticDataset out;
  out.config = config;
  out.seed = seed;
  const std::vector<Index> sizes =
      power_law_sizes(config.devices, config.total_samples, config.power_law_exponent, config.min_size, seed);

  Eigen::ArrayXd feature_std(config.features);
  for (Index j = 0; j < config.features; ++j) {
    feature_std(j) = std::pow(static_cast<double>(j + 1), -0.5 * config.feature_decay);
  }

  out.weights.resize(config.devices);
  for (Index k = 0; k < config.devices; ++k) {
    CounterRng rng(stream_key(seed, {kDeviceTag, static_cast<std::uint64_t>(k)}));
    DeviceGenerator gen;
    gen.model_mean = rng.normal(0.0, std::sqrt(config.alpha));
    gen.data_mean = rng.normal(0.0, std::sqrt(config.beta));
    gen.weights.resize(config.classes, config.features);
    for (Index c = 0; c < config.classes; ++c) {
      for (Index j = 0; j < config.features; ++j) gen.weights(c, j) = rng.normal(gen.model_mean, 1.0);
    }
    gen.bias.resize(config.classes);
    for (Index c = 0; c < config.classes; ++c) gen.bias(c) = rng.normal(gen.model_mean, 1.0);
    gen.center.resize(config.features);
    for (Index j = 0; j < config.features; ++j) gen.center(j) = rng.normal(gen.data_mean, 1.0);

    const Index n = sizes[static_cast<std::size_t>(k)];
    DeviceData data;
    data.features.resize(n, config.features);
    data.labels.resize(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < config.features; ++j) data.features(i, j) = rng.normal(gen.center(j), feature_std(j));
      const Eigen::VectorXd scores = gen.weights * data.features.row(i).transpose() + gen.bias;
      Index label = 0;
      scores.maxCoeff(&label);
      data.labels(i) = static_cast<int>(label);
    }
    out.weights(k) = static_cast<double>(n) / static_cast<double>(config.total_samples);
    out.devices.push_back(std::move(data));
    out.generators.push_back(std::move(gen));
  }
  return out;
}

void save_dataset(std::ostream& out, const SyntheticDataset& dataset) {
  const SyntheticConfig& c = dataset.config;
  nlohmann::json j;
  j["format"] = "cflit-dataset";
  j["version"] = 1;
  j["seed"] = dataset.seed;
  j["config"] = {{"alpha", c.alpha},
                 {"beta", c.beta},
                 {"devices", c.devices},
                 {"total_samples", c.total_samples},
                 {"power_law_exponent", c.power_law_exponent},
                 {"min_size", c.min_size},
                 {"features", c.features},
                 {"classes", c.classes},
                 {"feature_decay", c.feature_decay}};
  nlohmann::json devices = nlohmann::json::array();
  for (const auto& d : dataset.devices) {
    const RowMajorMatrix rows = d.features;
    devices.push_back({{"size", d.size()},
                       {"features", std::vector<double>(rows.data(), rows.data() + rows.size())},
                       {"labels", std::vector<int>(d.labels.data(), d.labels.data() + d.labels.size())}});
  }
  j["devices"] = std::move(devices);
  out << j.dump() << '\n';
}

SyntheticDataset load_dataset(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("load_dataset: ") + e.what());
  }
  if (j.value("format", "") != "cflit-dataset" || j.value("version", 0) != 1) {
    throw InvalidInput("load_dataset: not a cflit-dataset v1 snapshot");
  }
  SyntheticDataset out;
  const auto& c = j.at("config");
  out.config.alpha = c.at("alpha");
  out.config.beta = c.at("beta");
  out.config.devices = c.at("devices");
  out.config.total_samples = c.at("total_samples");
  out.config.power_law_exponent = c.at("power_law_exponent");
  out.config.min_size = c.at("min_size");
  out.config.features = c.at("features");
  out.config.classes = c.at("classes");
  out.config.feature_decay = c.at("feature_decay");
  out.seed = j.at("seed");
  const auto& devices = j.at("devices");
  if (static_cast<Index>(devices.size()) != out.config.devices) throw InvalidInput("load_dataset: device count");
  out.weights.resize(out.config.devices);
  Index k = 0;
  for (const auto& dj : devices) {
    const Index n = dj.at("size");
    const auto values = dj.at("features").get<std::vector<double>>();
    const auto labels = dj.at("labels").get<std::vector<int>>();
    if (static_cast<Index>(values.size()) != n * out.config.features || static_cast<Index>(labels.size()) != n) {
      throw InvalidInput("load_dataset: array sizes do not match declared dimensions");
    }
    DeviceData d;
    d.features = Eigen::Map<const RowMajorMatrix>(values.data(), n, out.config.features);
    d.labels = Eigen::Map<const Eigen::VectorXi>(labels.data(), n);
    out.weights(k++) = static_cast<double>(n);
    out.devices.push_back(std::move(d));
  }
  out.weights /= static_cast<double>(out.total_samples());
  return out;
}

double loss(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data, double reg) {
  const Shape shape = shape_of(weights.size(), data);
  if (data.size() == 0) throw InvalidInput("loss: empty dataset");
  Eigen::MatrixXd probs(data.size(), shape.classes);
  return softmax_probabilities(weights, shape, data.features, data.labels, probs) + 0.5 * reg * weights.squaredNorm();
}

double loss_and_gradient(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data, double reg,
                         Eigen::VectorXd& gradient) {
  const Shape shape = shape_of(weights.size(), data);
  if (data.size() == 0) throw InvalidInput("loss_and_gradient: empty dataset");
  return loss_grad_rows(weights, shape, data.features, data.labels, reg, gradient);
}

Eigen::VectorXd gradient(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data, double reg) {
  Eigen::VectorXd g;
  loss_and_gradient(weights, data, reg, g);
  return g;
}

Eigen::VectorXd hessian_vector_product(const Eigen::Ref<const Eigen::VectorXd>& weights, const DeviceData& data,
                                       const Eigen::Ref<const Eigen::VectorXd>& direction) {
  const Shape shape = shape_of(weights.size(), data);
  if (direction.size() != weights.size()) throw InvalidInput("hessian_vector_product: direction length");
  Eigen::MatrixXd probs(data.size(), shape.classes);
  softmax_probabilities(weights, shape, data.features, data.labels, probs);

  // For each sample: (diag(p) - p p^T) (V x + v_b).
  Eigen::MatrixXd u(data.size(), shape.classes);
  const Eigen::Map<const RowMajorMatrix> v(direction.data(), shape.classes, shape.features);
  u.noalias() = data.features * v.transpose();
  u.rowwise() += direction.tail(shape.classes).transpose();
  const Eigen::ArrayXd pu = (probs.array() * u.array()).rowwise().sum();
  const Eigen::MatrixXd s = (probs.array() * (u.array().colwise() - pu)).matrix();
  Eigen::VectorXd out;
  scatter_gradient(s, data.features, shape, 1.0 / static_cast<double>(data.size()), out);
  return out;
}

Eigen::VectorXd local_sgd(const Eigen::Ref<const Eigen::VectorXd>& global, const DeviceData& data,
                          const LocalSgdConfig& config, CounterRng& rng) {
  const Shape shape = shape_of(global.size(), data);
  if (config.tau < 1) throw InvalidConfig("local_sgd: tau must be >= 1");
  if (config.batch < 1 || config.batch > data.size()) {
    throw InvalidConfig("local_sgd: batch " + std::to_string(config.batch) + " exceeds local dataset of " +
                        std::to_string(data.size()));
  }
  if (config.learning_rate < 0.0 || !(config.clip > 0.0)) {
    throw InvalidConfig("local_sgd: learning rate must be >= 0 and clip > 0");
  }

  std::vector<Index> perm(static_cast<std::size_t>(data.size()));
  std::iota(perm.begin(), perm.end(), 0);
  auto reshuffle = [&] {
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
  };
  reshuffle();

  Eigen::VectorXd w = global;
  Eigen::MatrixXd batch_x(config.batch, shape.features);
  Eigen::VectorXi batch_y(config.batch);
  Eigen::VectorXd grad;
  std::size_t pos = 0;
  for (int step = 0; step < config.tau; ++step) {
    if (pos + static_cast<std::size_t>(config.batch) > perm.size()) {
      reshuffle();
      pos = 0;
    }
    for (Index b = 0; b < config.batch; ++b, ++pos) {
      batch_x.row(b) = data.features.row(perm[pos]);
      batch_y(b) = data.labels(perm[pos]);
    }
    loss_grad_rows(w, shape, batch_x, batch_y, config.reg, grad);
    w -= config.learning_rate * clip(grad, config.clip);
  }
  return w - global;
}

double LearningRateSchedule::operator()(std::int64_t round) const {
  const double t = static_cast<double>(round);
  switch (kind) {
    case Kind::Decaying:
      return base * gamma / (gamma + t);
    case Kind::Theorem:
      return 8.0 / (mu * static_cast<double>(tau) * (gamma + t));
  }
  return 0.0;
}

ModelState global_update(const ModelState& state, const Eigen::Ref<const Eigen::VectorXd>& estimate,
                         const LearningRateSchedule& schedule) {
  if (estimate.size() != state.weights.size()) throw InvalidInput("global_update: dimension mismatch");
  ModelState next;
  next.weights = state.weights + estimate;
  next.round = state.round + 1;
  next.learning_rate = schedule(next.round);
  return next;
}

void WeightedAverager::add(const Eigen::Ref<const Eigen::VectorXd>& w) {
  const double t = static_cast<double>(count_);
  const double eta = (gamma_ + t) * (gamma_ + t);
  if (count_ == 0) {
    sum_ = eta * w;
  } else {
    if (w.size() != sum_.size()) throw InvalidInput("WeightedAverager: dimension mismatch");
    sum_ += eta * w;
  }
  weight_sum_ += eta;
  ++count_;
}

Eigen::VectorXd WeightedAverager::value() const {
  if (count_ == 0) throw InvalidInput("weighted_average: empty history");
  return sum_ / weight_sum_;
}

Eigen::VectorXd weighted_average(const std::vector<Eigen::VectorXd>& history, double gamma) {
  WeightedAverager avg(gamma);
  for (const auto& w : history) avg.add(w);
  return avg.value();
}

Optimum estimate_optimum(const DeviceData& data, double reg, double tolerance, Index model_dim,
                         std::optional<Eigen::VectorXd> start, std::int64_t max_iterations) {
  if (!(tolerance > 0.0)) throw InvalidConfig("estimate_optimum: tolerance must be > 0");
  if (!(reg > 0.0)) throw InvalidConfig("estimate_optimum: needs reg > 0 for strong convexity");
  shape_of(model_dim, data);

  Eigen::VectorXd x = start ? *start : Eigen::VectorXd::Zero(model_dim);
  if (x.size() != model_dim) throw InvalidInput("estimate_optimum: start has wrong dimension");
  Eigen::VectorXd y = x;
  Eigen::VectorXd grad, x_next, unused;
  double step_lipschitz = std::max(1.0, reg);

  for (std::int64_t it = 0; it < max_iterations; ++it) {
    const double f_y = loss_and_gradient(y, data, reg, grad);
    const double grad_norm = grad.norm();
    if (grad_norm < tolerance) return {f_y, y, it, grad_norm};

    // Backtracking on the sufficient-decrease condition; the slack absorbs
    // rounding once decrements reach machine precision.
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(f_y);
    while (true) {
      x_next = y - grad / step_lipschitz;
      const double f_next = loss(x_next, data, reg);
      if (f_next <= f_y - 0.5 / step_lipschitz * grad_norm * grad_norm + slack) break;
      step_lipschitz *= 2.0;
    }
    const double kappa = std::sqrt(step_lipschitz / reg);
    const double momentum = (kappa - 1.0) / (kappa + 1.0);
    if (grad.dot(x_next - x) > 0.0) {
      y = x_next;
    } else {
      y = x_next + momentum * (x_next - x);
    }
    x = x_next;
  }
  const double final_norm = gradient(y, data, reg).norm();
  throw ConvergenceError("estimate_optimum: gradient norm " + std::to_string(final_norm) + " above tolerance after " +
                             std::to_string(max_iterations) + " iterations",
                         max_iterations, final_norm);
}

void LearningParams::validate(bool for_bound) const {
  if (!(mu > 0.0) || lipschitz < mu || hetero < 0.0 || !(grad_bound > 0.0)) {
    throw InvalidConfig("LearningParams: need mu > 0, L >= mu, Gamma >= 0, G > 0");
  }
  if (for_bound && gamma < 16.0 * lipschitz / mu) {
    throw InvalidConfig("LearningParams: gamma below 16 L / mu");
  }
}

LearningEstimate estimate_learning_params(const SyntheticDataset& dataset, double reg, double clip, double gamma,
                                          Index batch, double tolerance) {
  const Index dim = dataset.model_dim();
  const DeviceData pooled = dataset.pooled();
  LearningEstimate out;
  out.global = estimate_optimum(pooled, reg, tolerance, dim);
  out.init_dist_sq = out.global.weights.squaredNorm();

  double local_sum = 0.0;
  for (std::size_t k = 0; k < dataset.devices.size(); ++k) {
    const Optimum local = estimate_optimum(dataset.devices[k], reg, tolerance, dim, out.global.weights);
    out.local_optima.push_back(local.value);
    local_sum += dataset.weights(static_cast<Index>(k)) * local.value;
  }

  // Power iteration for the largest Hessian eigenvalue (PSD, so this is the norm).
  CounterRng rng(stream_key(dataset.seed, {0x4E55}));
  Eigen::VectorXd v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = rng.normal();
  v.normalize();
  double eigen = 0.0;
  for (int it = 0; it < 500; ++it) {
    Eigen::VectorXd hv = hessian_vector_product(out.global.weights, pooled, v);
    const double next = hv.norm();
    if (next == 0.0) break;
    v = hv / next;
    const bool settled = std::abs(next - eigen) <= 1e-10 * next;
    eigen = next;
    if (settled) break;
  }

  out.params.mu = reg;
  out.params.lipschitz = reg + eigen;
  out.params.hetero = std::max(0.0, out.global.value - local_sum);
  out.params.grad_bound = clip;
  out.params.clip = clip;
  out.params.gamma = gamma;
  out.params.batch = batch;
  out.params.reg = reg;
  return out;
}

}  // namespace cflit::learning
