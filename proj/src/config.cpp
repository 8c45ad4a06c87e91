#include "cflit/config.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "cflit/error.hpp"
#include "cflit/rates.hpp"

namespace cflit {

namespace {

namespace pt = boost::property_tree;
using Schedule = learning::LearningRateSchedule::Kind;

/// Calls f(section, key, field) for every numeric field.
template <typename Config, typename F>
void visit_numeric(Config& c, F&& f) {
  f("system", "fl_devices", c.system.fl_devices);
  f("system", "it_devices", c.system.it_devices);
  f("system", "subcarriers", c.system.subcarriers);
  f("system", "symbols", c.system.symbols);
  f("system", "fl_power", c.system.fl_power);
  f("system", "it_power", c.system.it_power);
  f("system", "noise_var", c.system.noise_var);
  f("system", "gap_db", c.system.gap_db);
  f("system", "symbol_duration", c.system.symbol_duration);
  f("system", "coherence_len", c.system.coherence_len);
  f("learning", "alpha", c.learning.alpha);
  f("learning", "beta", c.learning.beta);
  f("learning", "total_samples", c.learning.total_samples);
  f("learning", "power_law_exponent", c.learning.power_law_exponent);
  f("learning", "min_size", c.learning.min_size);
  f("learning", "batch", c.learning.batch);
  f("learning", "clip", c.learning.clip);
  f("learning", "gamma", c.learning.gamma);
  f("learning", "base_rate", c.learning.base_rate);
  f("learning", "reg", c.learning.reg);
  f("learning", "epsilon", c.learning.epsilon);
  f("learning", "compressed_dim", c.learning.compressed_dim);
  f("learning", "optimum_tol", c.learning.optimum_tol);
  f("hyperopt", "lipschitz", c.hyperopt.lipschitz);
  f("hyperopt", "hetero", c.hyperopt.hetero);
  f("hyperopt", "channel_term", c.hyperopt.channel_term);
  f("hyperopt", "channel_term_samples", c.hyperopt.channel_term_samples);
  f("hyperopt", "channel_term_floor", c.hyperopt.channel_term_floor);
  f("hyperopt", "tau", c.hyperopt.tau);
  f("hyperopt", "rounds", c.hyperopt.rounds);
  f("allocation", "fixed_tau", c.allocation.fixed_tau);
  f("run", "trials", c.run.trials);
  f("run", "seed", c.run.seed);
  f("run", "threads", c.run.threads);
  f("run", "eval_every", c.run.eval_every);
}

const std::set<std::pair<std::string, std::string>>& enum_keys() {
  static const std::set<std::pair<std::string, std::string>> keys = {
      {"system", "profile"}, {"learning", "schedule"}, {"hyperopt", "source"}, {"allocation", "scheme"}};
  return keys;
}

std::string to_string(Schedule s) { return s == Schedule::Decaying ? "decaying" : "theorem"; }

Schedule parse_schedule(const std::string& name) {
  if (name == "decaying") return Schedule::Decaying;
  if (name == "theorem") return Schedule::Theorem;
  throw InvalidConfig("unknown learning-rate schedule '" + name + "' (expected decaying or theorem)");
}

std::string to_string(HyperoptConfig::Source s) { return s == HyperoptConfig::Source::Configured ? "configured" : "estimated"; }

HyperoptConfig::Source parse_source(const std::string& name) {
  if (name == "configured") return HyperoptConfig::Source::Configured;
  if (name == "estimated") return HyperoptConfig::Source::Estimated;
  throw InvalidConfig("unknown hyperopt source '" + name + "' (expected configured or estimated)");
}

template <typename T>
T parse_value(const std::string& section, const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (!in || !(in >> std::ws).eof()) {
    throw InvalidConfig("config: cannot parse " + section + "." + key + " = '" + text + "'");
  }
  return value;
}

/// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto fail = [](const std::string& what) { throw InvalidConfig("config: " + what); };
  if (system.fl_devices < 1 || system.it_devices < 1 || system.subcarriers < 1 || system.symbols < 1) {
    fail("device, subcarrier and symbol counts must be >= 1");
  }
  if (system.coherence_len < 1) fail("coherence_len must be >= 1");
  if (!(system.fl_power > 0.0) || !(system.it_power > 0.0)) fail("powers must be > 0");
  if (system.noise_var < 0.0) fail("noise_var must be >= 0");
  if (system.gap_db < 0.0) fail("gap_db must be >= 0");
  if (!(system.symbol_duration > 0.0)) fail("symbol_duration must be > 0");
  if (learning.alpha < 0.0 || learning.beta < 0.0) fail("alpha and beta must be >= 0");
  if (learning.min_size < 1 || learning.total_samples < system.fl_devices * learning.min_size) {
    fail("total_samples must be at least fl_devices * min_size");
  }
  if (learning.batch < 1 || learning.batch > learning.min_size) fail("batch must be in [1, min_size]");
  if (!(learning.clip > 0.0) || !(learning.reg > 0.0) || !(learning.gamma > 0.0)) {
    fail("clip, reg and gamma must be > 0");
  }
  if (!(learning.base_rate > 0.0) || !(learning.epsilon > 0.0) || !(learning.optimum_tol > 0.0)) {
    fail("base_rate, epsilon and optimum_tol must be > 0");
  }
  if (learning.compressed_dim < 0) fail("compressed_dim must be >= 0");
  if (learning.compressed_dim > synthetic().classes * (synthetic().features + 1)) {
    fail("compressed_dim exceeds the model dimension");
  }
  if (!(hyperopt.lipschitz > 0.0) || hyperopt.hetero < 0.0 || !(hyperopt.channel_term > 0.0)) {
    fail("lipschitz and channel_term must be > 0, hetero >= 0");
  }
  if (hyperopt.channel_term_samples < 1 || hyperopt.channel_term_floor < 0.0) {
    fail("channel_term_samples must be >= 1 and channel_term_floor >= 0");
  }
  if (hyperopt.tau < 0 || hyperopt.rounds < 0) fail("tau and rounds overrides must be >= 0");
  if (allocation.fixed_tau < 1) fail("fixed_tau must be >= 1");
  if (run.trials < 1 || run.threads < 0 || run.eval_every < 1) fail("trials and eval_every must be >= 1");
}

learning::SyntheticConfig ExperimentConfig::synthetic() const {
  learning::SyntheticConfig s;
  s.alpha = learning.alpha;
  s.beta = learning.beta;
  s.devices = system.fl_devices;
  s.total_samples = learning.total_samples;
  s.power_law_exponent = learning.power_law_exponent;
  s.min_size = learning.min_size;
  return s;
}

double ExperimentConfig::theta() const {
  return rates::effective_snr(system.it_power, system.gap_db, system.noise_var);
}

ExperimentConfig load_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InvalidConfig(std::string("config: ") + e.what());
  }

  std::set<std::pair<std::string, std::string>> known = enum_keys();
  ExperimentConfig config;
  visit_numeric(config, [&](const char* section, const char* key, auto& field) {
    known.insert({section, key});
    const auto text = tree.get_optional<std::string>(pt::ptree::path_type(std::string(section) + "/" + key, '/'));
    if (text) field = parse_value<std::remove_reference_t<decltype(field)>>(section, key, *text);
  });
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw InvalidConfig("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      if (!known.count({section, key})) throw InvalidConfig("config: unknown key " + section + "." + key);
    }
  }
  const auto get = [&tree](const char* path) { return tree.get_optional<std::string>(pt::ptree::path_type(path, '/')); };
  if (auto v = get("system/profile")) config.system.profile = channel::parse_profile(*v);
  if (auto v = get("learning/schedule")) config.learning.schedule = parse_schedule(*v);
  if (auto v = get("hyperopt/source")) config.hyperopt.source = parse_source(*v);
  if (auto v = get("allocation/scheme")) config.allocation.scheme = parse_scheme(*v);
  config.validate();
  return config;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("config: cannot open '" + path + "'");
  return load_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  std::string current;
  const auto section = [&](const std::string& name) {
    if (name == current) return;
    if (!current.empty()) out << '\n';
    out << '[' << name << "]\n";
    current = name;
    if (name == "system") out << "profile = " << channel::to_string(config.system.profile) << '\n';
    if (name == "learning") out << "schedule = " << to_string(config.learning.schedule) << '\n';
    if (name == "hyperopt") out << "source = " << to_string(config.hyperopt.source) << '\n';
    if (name == "allocation") out << "scheme = " << to_string(config.allocation.scheme) << '\n';
  };
  visit_numeric(copy, [&](const char* sec, const char* key, auto& field) {
    section(sec);
    if constexpr (std::is_floating_point_v<std::remove_reference_t<decltype(field)>>) {
      out << key << " = " << format_double(field) << '\n';
    } else {
      out << key << " = " << field << '\n';
    }
  });
}

nlohmann::json config_json(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  nlohmann::json j;
  visit_numeric(copy, [&](const char* sec, const char* key, auto& field) { j[sec][key] = field; });
  j["system"]["profile"] = channel::to_string(config.system.profile);
  j["learning"]["schedule"] = to_string(config.learning.schedule);
  j["hyperopt"]["source"] = to_string(config.hyperopt.source);
  j["allocation"]["scheme"] = to_string(config.allocation.scheme);
  return j;
}

ExperimentConfig apply_overrides(const ExperimentConfig& config, const std::vector<std::string>& assignments) {
  std::stringstream base;
  write_config(base, config);
  pt::ptree tree;
  pt::read_ini(base, tree);
  for (const std::string& a : assignments) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw InvalidConfig("override '" + a + "' is not of the form section.key=value");
    }
    const std::string section = a.substr(0, dot);
    const std::string key = a.substr(dot + 1, eq - dot - 1);
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    tree.put(pt::ptree::path_type(trim(section) + "/" + trim(key), '/'), trim(a.substr(eq + 1)));
  }
  std::stringstream merged;
  pt::write_ini(merged, tree);
  return load_config(merged);
}

ExperimentConfig full_config() { return ExperimentConfig{}; }

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.system.fl_devices = 10;
  c.system.subcarriers = 64;
  c.system.symbols = 400;
  c.learning.total_samples = 2000;
  c.learning.compressed_dim = 61;
  c.learning.epsilon = 2.5;
  return c;
}

std::string to_string(AllocationConfig::Scheme scheme) {
  switch (scheme) {
    case AllocationConfig::Scheme::Online:
      return "online";
    case AllocationConfig::Scheme::Offline:
      return "offline";
    case AllocationConfig::Scheme::Rsca:
      return "rsca";
    case AllocationConfig::Scheme::FixedTau:
      return "fixed_tau";
  }
  return "online";
}

AllocationConfig::Scheme parse_scheme(const std::string& name) {
  if (name == "online") return AllocationConfig::Scheme::Online;
  if (name == "offline") return AllocationConfig::Scheme::Offline;
  if (name == "rsca") return AllocationConfig::Scheme::Rsca;
  if (name == "fixed_tau") return AllocationConfig::Scheme::FixedTau;
  throw InvalidConfig("unknown allocation scheme '" + name + "' (expected online, offline, rsca or fixed_tau)");
}

}  // namespace cflit
