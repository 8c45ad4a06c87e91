#include "cflit/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cflit::allocation {

namespace {

constexpr std::uint64_t kRscaTag = 0x25CA;

void check_source(const GainSource& source, Index subcarriers) {
  if (source.devices() < 1) throw InvalidInput("allocation: need at least one IT device");
  if (source.subcarriers() != subcarriers) {
    throw InvalidInput("allocation: gain source has " + std::to_string(source.subcarriers()) +
                       " subcarriers, expected " + std::to_string(subcarriers));
  }
}

/// Shared scan for the online and random schemes; `wants_it` decides an RB
/// that is not under a budget correction.
template <typename Rule>
AllocationResult scan(GainStream& stream, Index subcarriers, Index symbols, Index fl_demand,
                      const DecisionObserver& observer, Rule wants_it) {
  const GainSource& source = stream.source();
  check_source(source, subcarriers);
  AllocationResult out;
  out.budget = AllocationBudget::make(subcarriers, symbols, source.devices(), fl_demand);
  out.grid = AllocationGrid(subcarriers, symbols, source.devices());
  std::fill(out.grid.fl.begin(), out.grid.fl.end(), std::uint8_t{1});

  Index it_total = 0;
  Index decided = 0;
  for (Index s = 0; s < symbols && it_total < out.budget.it_quota; ++s) {
    const Eigen::MatrixXd gains = stream.next_symbol();
    if (gains.rows() != source.devices() || gains.cols() != subcarriers) {
      throw InvalidInput("allocation: symbol gain matrix has the wrong shape");
    }
    for (Index m = 0; m < subcarriers && it_total < out.budget.it_quota; ++m) {
      const Index r = s * subcarriers + m;
      const channel::MaxGain best = channel::max_gain(gains.col(m));
      bool to_it = false;
      if (r + 1 - it_total > out.budget.fl_quota) {
        to_it = true;
        ++out.stats.forced_it;
        if (out.stats.first_forced < 0) out.stats.first_forced = r;
      } else {
        to_it = wants_it(best.value, out.budget);
        if (to_it) ++out.stats.chosen_it;
      }
      if (to_it) {
        out.grid.assign_it(r, best.argmax);
        ++it_total;
      }
      ++decided;
      if (observer) observer(m, s, to_it);
    }
  }
  out.stats.forced_fl = out.grid.rb_count() - decided;
  if (out.stats.forced_fl > 0 && out.stats.first_forced < 0) out.stats.first_forced = decided;
  out.grid.rebuild_order();
  return out;
}

}  // namespace

AllocationGrid::AllocationGrid(Index subcarriers_, Index symbols_, Index devices_)
    : subcarriers(subcarriers_), symbols(symbols_), devices(devices_) {
  if (subcarriers < 1 || symbols < 1 || devices < 1) {
    throw InvalidConfig("AllocationGrid: dimensions must be >= 1");
  }
  fl.assign(static_cast<std::size_t>(rb_count()), 0);
  it.assign(static_cast<std::size_t>(rb_count() * devices), 0);
}

Index AllocationGrid::it_device(Index subcarrier, Index symbol) const {
  for (Index n = 0; n < devices; ++n) {
    if (it_flag(n, subcarrier, symbol)) return n;
  }
  return -1;
}

Index AllocationGrid::fl_count() const { return static_cast<Index>(std::count(fl.begin(), fl.end(), 1)); }

Index AllocationGrid::it_count() const { return static_cast<Index>(std::count(it.begin(), it.end(), 1)); }

std::vector<Index> AllocationGrid::it_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(devices), 0);
  for (std::size_t i = 0; i < it.size(); ++i) {
    if (it[i] == 1) ++counts[i % static_cast<std::size_t>(devices)];
  }
  return counts;
}

void AllocationGrid::assign_fl(Index r) {
  fl[static_cast<std::size_t>(r)] = 1;
  std::fill_n(it.begin() + r * devices, devices, std::uint8_t{0});
}

void AllocationGrid::assign_it(Index r, Index device) {
  fl[static_cast<std::size_t>(r)] = 0;
  std::fill_n(it.begin() + r * devices, devices, std::uint8_t{0});
  it[static_cast<std::size_t>(r * devices + device)] = 1;
}

void AllocationGrid::rebuild_order() {
  fl_rb_order.clear();
  for (Index r = 0; r < rb_count(); ++r) {
    if (fl[static_cast<std::size_t>(r)] == 1) fl_rb_order.push_back(r);
  }
}

AllocationBudget AllocationBudget::make(Index subcarriers, Index symbols, Index devices, Index fl_demand) {
  if (subcarriers < 1 || symbols < 1 || devices < 1) throw InvalidConfig("allocation: dimensions must be >= 1");
  if (fl_demand < 0) throw InvalidInput("allocation: negative FL demand");
  const Index total = subcarriers * symbols;
  if (fl_demand > total) {
    const Index minimal = (fl_demand + subcarriers - 1) / subcarriers;
    throw Infeasible("FL demand of " + std::to_string(fl_demand) + " RBs exceeds the " + std::to_string(total) +
                         " available (deficit " + std::to_string(fl_demand - total) + ", needs S >= " +
                         std::to_string(minimal) + ")",
                     fl_demand, total, minimal);
  }
  AllocationBudget b;
  b.fl_quota = fl_demand;
  b.it_quota = total - fl_demand;
  b.p_it = static_cast<double>(b.it_quota) / static_cast<double>(total);
  b.q = b.it_quota == 0 ? std::numeric_limits<double>::infinity()
                        : channel::quantile_threshold(b.p_it, static_cast<int>(devices));
  return b;
}

MatrixGainSource::MatrixGainSource(std::vector<Eigen::MatrixXd> per_symbol) : data_(std::move(per_symbol)) {
  if (data_.empty()) throw InvalidInput("MatrixGainSource: no symbols");
  devices_ = data_.front().rows();
  subcarriers_ = data_.front().cols();
  for (const auto& g : data_) {
    if (g.rows() != devices_ || g.cols() != subcarriers_) throw InvalidInput("MatrixGainSource: ragged symbols");
    if ((g.array() < 0.0).any()) throw InvalidInput("MatrixGainSource: negative gain");
  }
}

Eigen::MatrixXd MatrixGainSource::symbol_gains(Index symbol) const {
  if (symbol < 0 || symbol >= symbols()) {
    throw TruncatedStream("gain source ends after " + std::to_string(symbols()) + " symbols");
  }
  return data_[static_cast<std::size_t>(symbol)];
}

double MatrixGainSource::gain(Index device, Index subcarrier, Index symbol) const {
  if (symbol < 0 || symbol >= symbols()) {
    throw TruncatedStream("gain source ends after " + std::to_string(symbols()) + " symbols");
  }
  return data_[static_cast<std::size_t>(symbol)](device, subcarrier);
}

Eigen::MatrixXd GainStream::next_symbol() {
  if (read_ >= source_->symbols()) {
    throw TruncatedStream("gain stream ended after " + std::to_string(read_) + " symbols");
  }
  return source_->symbol_gains(read_++);
}

AllocationResult online_allocate(GainStream& stream, Index subcarriers, Index symbols, Index fl_demand,
                                 const DecisionObserver& observer) {
  return scan(stream, subcarriers, symbols, fl_demand, observer,
              [](double best, const AllocationBudget& budget) { return best >= budget.q; });
}

AllocationResult offline_allocate(const GainSource& gains, Index subcarriers, Index symbols, Index fl_demand) {
  check_source(gains, subcarriers);
  AllocationResult out;
  out.budget = AllocationBudget::make(subcarriers, symbols, gains.devices(), fl_demand);
  out.grid = AllocationGrid(subcarriers, symbols, gains.devices());
  std::fill(out.grid.fl.begin(), out.grid.fl.end(), std::uint8_t{1});
  if (out.budget.it_quota > 0) {
    if (gains.symbols() < symbols) {
      throw TruncatedStream("offline allocation needs " + std::to_string(symbols) + " symbols, source has " +
                            std::to_string(gains.symbols()));
    }
    std::vector<double> best(static_cast<std::size_t>(out.grid.rb_count()));
    std::vector<Index> device(best.size());
    for (Index s = 0; s < symbols; ++s) {
      const Eigen::MatrixXd g = gains.symbol_gains(s);
      for (Index m = 0; m < subcarriers; ++m) {
        const channel::MaxGain mg = channel::max_gain(g.col(m));
        best[static_cast<std::size_t>(s * subcarriers + m)] = mg.value;
        device[static_cast<std::size_t>(s * subcarriers + m)] = mg.argmax;
      }
    }
    std::vector<Index> order(best.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
    const auto by_gain = [&best](Index a, Index b) {
      const double ga = best[static_cast<std::size_t>(a)];
      const double gb = best[static_cast<std::size_t>(b)];
      return ga > gb || (ga == gb && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + out.budget.it_quota, order.end(), by_gain);
    for (Index i = 0; i < out.budget.it_quota; ++i) {
      const Index r = order[static_cast<std::size_t>(i)];
      out.grid.assign_it(r, device[static_cast<std::size_t>(r)]);
    }
    out.stats.chosen_it = out.budget.it_quota;
  }
  out.grid.rebuild_order();
  return out;
}

AllocationResult rsca_allocate(GainStream& stream, Index subcarriers, Index symbols, Index fl_demand,
                               std::uint64_t seed) {
  CounterRng rng(stream_key(seed, {kRscaTag}));
  return scan(stream, subcarriers, symbols, fl_demand, {},
              [&rng](double, const AllocationBudget& budget) { return rng.uniform() < budget.p_it; });
}

ValidationReport validate_allocation(const AllocationGrid& grid, Index fl_demand) {
  ValidationReport report;
  auto add = [&report](Violation::Kind kind, Index n, Index m, Index s, std::string msg) {
    report.violations.push_back({kind, n, m, s, std::move(msg)});
  };
  if (grid.subcarriers < 1 || grid.symbols < 1 || grid.devices < 1 ||
      static_cast<Index>(grid.fl.size()) != grid.rb_count() ||
      static_cast<Index>(grid.it.size()) != grid.rb_count() * grid.devices) {
    add(Violation::Kind::Shape, -1, -1, -1, "flag arrays do not match the grid dimensions");
    return report;
  }
  Index fl_total = 0;
  for (Index r = 0; r < grid.rb_count(); ++r) {
    const Rb pos = grid.position(r);
    const int o = grid.fl[static_cast<std::size_t>(r)];
    if (o > 1) add(Violation::Kind::NonBinary, -1, pos.subcarrier, pos.symbol, "FL flag is not 0/1");
    int used = o;
    for (Index n = 0; n < grid.devices; ++n) {
      const int b = grid.it[static_cast<std::size_t>(r * grid.devices + n)];
      if (b > 1) add(Violation::Kind::NonBinary, n, pos.subcarrier, pos.symbol, "IT flag is not 0/1");
      used += b;
    }
    if (used > 1) {
      for (Index n = 0; n < grid.devices; ++n) {
        if (grid.it[static_cast<std::size_t>(r * grid.devices + n)] != 0) {
          add(Violation::Kind::Exclusivity, n, pos.subcarrier, pos.symbol, "RB assigned more than once");
        }
      }
    }
    if (o == 1) ++fl_total;
  }
  if (fl_total != fl_demand) {
    add(Violation::Kind::FlCount, -1, -1, -1,
        "FL RB count " + std::to_string(fl_total) + " differs from demand " + std::to_string(fl_demand));
  }
  AllocationGrid expected = grid;
  expected.rebuild_order();
  if (expected.fl_rb_order != grid.fl_rb_order) {
    add(Violation::Kind::Order, -1, -1, -1, "fl_rb_order is not the symbol-major list of FL RBs");
  }
  return report;
}

std::vector<std::vector<Rb>> partition_fl_rbs(const AllocationGrid& grid, Index d) {
  const auto count = static_cast<Index>(grid.fl_rb_order.size());
  if (d < 1) throw InvalidInput("partition_fl_rbs: d must be >= 1");
  if (count % d != 0) {
    throw InvalidInput("partition_fl_rbs: " + std::to_string(count) + " FL RBs not divisible by d = " +
                       std::to_string(d));
  }
  std::vector<std::vector<Rb>> rounds(static_cast<std::size_t>(count / d));
  for (Index i = 0; i < count; ++i) {
    rounds[static_cast<std::size_t>(i / d)].push_back(grid.position(grid.fl_rb_order[static_cast<std::size_t>(i)]));
  }
  return rounds;
}

void write_rle(std::ostream& out, const AllocationGrid& grid) {
  auto label = [&grid](Index r) -> Index {
    // -2 = FL, -1 = unassigned, n >= 0 = IT device n.
    Index owner = grid.fl[static_cast<std::size_t>(r)] ? -2 : -1;
    for (Index n = 0; n < grid.devices; ++n) {
      if (grid.it[static_cast<std::size_t>(r * grid.devices + n)]) {
        if (owner != -1) throw InvalidInput("write_rle: RB " + std::to_string(r) + " is assigned twice");
        owner = n;
      }
    }
    return owner;
  };
  out << "CFLIT-ALLOC v1 " << grid.subcarriers << ' ' << grid.symbols << ' ' << grid.devices << '\n';
  Index r = 0;
  bool first = true;
  while (r < grid.rb_count()) {
    const Index owner = label(r);
    Index run = 1;
    while (r + run < grid.rb_count() && label(r + run) == owner) ++run;
    if (!first) out << ' ';
    first = false;
    out << run;
    if (owner == -2) {
      out << 'F';
    } else if (owner == -1) {
      out << 'U';
    } else {
      out << 'I' << owner;
    }
    r += run;
  }
  out << '\n';
}

AllocationGrid read_rle(std::istream& in) {
  std::string magic, version;
  Index m = 0, s = 0, n = 0;
  if (!(in >> magic >> version >> m >> s >> n) || magic != "CFLIT-ALLOC" || version != "v1") {
    throw InvalidInput("read_rle: bad header");
  }
  AllocationGrid grid(m, s, n);
  Index r = 0;
  std::string token;
  while (in >> token) {
    std::size_t pos = 0;
    Index run = 0;
    try {
      run = std::stoll(token, &pos);
    } catch (const std::exception&) {
      throw InvalidInput("read_rle: bad run '" + token + "'");
    }
    if (run < 1 || pos >= token.size() || r + run > grid.rb_count()) {
      throw InvalidInput("read_rle: bad run '" + token + "'");
    }
    const char kind = token[pos];
    Index device = -1;
    if (kind == 'I') {
      device = std::stoll(token.substr(pos + 1));
      if (device < 0 || device >= n) throw InvalidInput("read_rle: device out of range in '" + token + "'");
    } else if (kind != 'F' && kind != 'U') {
      throw InvalidInput("read_rle: bad label in '" + token + "'");
    }
    for (Index i = 0; i < run; ++i, ++r) {
      if (kind == 'F') grid.assign_fl(r);
      if (kind == 'I') grid.assign_it(r, device);
    }
  }
  if (r != grid.rb_count()) throw InvalidInput("read_rle: runs cover " + std::to_string(r) + " RBs");
  grid.rebuild_order();
  return grid;
}

std::string summary_json(const AllocationResult& result) {
  nlohmann::json j;
  j["subcarriers"] = result.grid.subcarriers;
  j["symbols"] = result.grid.symbols;
  j["devices"] = result.grid.devices;
  j["fl_count"] = result.grid.fl_count();
  j["it_count"] = result.grid.it_count();
  j["it_per_device"] = result.grid.it_counts();
  j["p_it"] = result.budget.p_it;
  j["q"] = std::isfinite(result.budget.q) ? nlohmann::json(result.budget.q) : nlohmann::json(nullptr);
  j["chosen_it"] = result.stats.chosen_it;
  j["forced_it"] = result.stats.forced_it;
  j["forced_fl"] = result.stats.forced_fl;
  return j.dump(2);
}

}  // namespace cflit::allocation
