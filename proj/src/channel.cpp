#include "cflit/channel.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>

namespace cflit::channel {

namespace {

constexpr std::uint64_t kIidTag = 0x11D;
constexpr std::uint64_t kTapTag = 0x7A9;
constexpr std::array<char, 8> kMagic = {'C', 'F', 'L', 'I', 'T', 'C', 'H', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<unsigned char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  if (!in) throw InvalidInput("read_grid: truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void ChannelConfig::validate() const {
  if (devices < 1 || subcarriers < 1 || symbols < 1 || coherence_len < 1) {
    throw InvalidConfig("channel: devices, subcarriers, symbols and coherence_len must be >= 1");
  }
  if (profile == FadingProfile::TappedDelayLine && (taps < 1 || !(tap_decay >= 0.0))) {
    throw InvalidConfig("channel: tapped delay line needs taps >= 1 and tap_decay >= 0");
  }
}

FadingModel::FadingModel(const ChannelConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  if (config_.profile == FadingProfile::TappedDelayLine) {
    Eigen::ArrayXd power(config_.taps);
    for (Index l = 0; l < config_.taps; ++l) power(l) = std::exp(-config_.tap_decay * static_cast<double>(l));
    power /= power.sum();
    tap_stddev_ = power.sqrt().matrix();
  }
}

std::complex<double> FadingModel::coefficient(Index device, Index subcarrier, Index symbol) const {
  const auto block = static_cast<std::uint64_t>(symbol / config_.coherence_len);
  const auto k = static_cast<std::uint64_t>(device);
  if (config_.profile == FadingProfile::Iid) {
    CounterRng rng(stream_key(seed_, {kIidTag, k, static_cast<std::uint64_t>(subcarrier), block}));
    return rng.complex_normal();
  }
  // H[m] = sum_l a_l exp(-j 2 pi m l / M), a_l ~ CN(0, p_l), sum_l p_l = 1.
  std::complex<double> response{0.0, 0.0};
  const double step = -2.0 * std::numbers::pi * static_cast<double>(subcarrier) /
                      static_cast<double>(config_.subcarriers);
  for (Index l = 0; l < config_.taps; ++l) {
    CounterRng rng(stream_key(seed_, {kTapTag, k, static_cast<std::uint64_t>(l), block}));
    const std::complex<double> tap = tap_stddev_(l) * rng.complex_normal();
    response += tap * std::polar(1.0, step * static_cast<double>(l));
  }
  return response;
}

Eigen::VectorXd FadingModel::gains_at(Index subcarrier, Index symbol) const {
  Eigen::VectorXd out(config_.devices);
  for (Index k = 0; k < config_.devices; ++k) out(k) = gain(k, subcarrier, symbol);
  return out;
}

Eigen::MatrixXd FadingModel::symbol_gains(Index symbol) const {
  Eigen::MatrixXd out(config_.devices, config_.subcarriers);
  for (Index k = 0; k < config_.devices; ++k) {
    for (Index m = 0; m < config_.subcarriers; ++m) out(k, m) = gain(k, m, symbol);
  }
  return out;
}

ChannelGrid::ChannelGrid(const ChannelConfig& config, Eigen::VectorXcd coefficients)
    : config_(config), data_(std::move(coefficients)) {
  config_.validate();
  if (data_.size() != config_.devices * config_.subcarriers * config_.symbols) {
    throw InvalidInput("ChannelGrid: coefficient count does not match dimensions");
  }
}

bool ChannelGrid::operator==(const ChannelGrid& other) const {
  return config_.devices == other.config_.devices && config_.subcarriers == other.config_.subcarriers &&
         config_.symbols == other.config_.symbols && config_.coherence_len == other.config_.coherence_len &&
         std::memcmp(data_.data(), other.data_.data(), sizeof(std::complex<double>) * data_.size()) == 0;
}

ChannelGrid sample_block_fading(const ChannelConfig& config, std::uint64_t seed) {
  const FadingModel model(config, seed);
  Eigen::VectorXcd data(config.devices * config.subcarriers * config.symbols);
  Index i = 0;
  for (Index k = 0; k < config.devices; ++k) {
    for (Index m = 0; m < config.subcarriers; ++m) {
      std::complex<double> current{};
      for (Index s = 0; s < config.symbols; ++s) {
        if (s % config.coherence_len == 0) current = model.coefficient(k, m, s);
        data(i++) = current;
      }
    }
  }
  return ChannelGrid(config, std::move(data));
}

void write_grid(std::ostream& out, const ChannelGrid& grid) {
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, static_cast<std::uint64_t>(grid.devices()));
  put_u64(out, static_cast<std::uint64_t>(grid.subcarriers()));
  put_u64(out, static_cast<std::uint64_t>(grid.symbols()));
  put_u64(out, static_cast<std::uint64_t>(grid.coherence_len()));
  for (const auto& c : grid.data()) {
    put_f64(out, c.real());
    put_f64(out, c.imag());
  }
}

ChannelGrid read_grid(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidInput("read_grid: bad magic");
  ChannelConfig config;
  config.devices = static_cast<Index>(get_u64(in));
  config.subcarriers = static_cast<Index>(get_u64(in));
  config.symbols = static_cast<Index>(get_u64(in));
  config.coherence_len = static_cast<Index>(get_u64(in));
  config.validate();
  Eigen::VectorXcd data(config.devices * config.subcarriers * config.symbols);
  for (auto& c : data) {
    const double re = get_f64(in);
    const double im = get_f64(in);
    c = {re, im};
  }
  return ChannelGrid(config, std::move(data));
}

FadingProfile parse_profile(const std::string& name) {
  if (name == "iid") return FadingProfile::Iid;
  if (name == "tdl") return FadingProfile::TappedDelayLine;
  throw InvalidConfig("unknown channel profile '" + name + "' (expected iid or tdl)");
}

std::string to_string(FadingProfile profile) {
  return profile == FadingProfile::Iid ? "iid" : "tdl";
}

}  // namespace cflit::channel
