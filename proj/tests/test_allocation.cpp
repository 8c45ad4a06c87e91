#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cflit/allocation.hpp"
#include "cflit/rates.hpp"

using namespace cflit;
using namespace cflit::allocation;

namespace {

MatrixGainSource random_source(Index n, Index m, Index s, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Eigen::MatrixXd> per_symbol;
  for (Index i = 0; i < s; ++i) per_symbol.push_back(Eigen::MatrixXd::NullaryExpr(n, m, [&] { return rng.exponential(); }));
  return MatrixGainSource(per_symbol);
}

double total_rate(const AllocationGrid& grid, const GainSource& gains) {
  return rates::average_sum_rate(grid, gains, 2.5);
}

/// Records every symbol the allocator pulls.
class RecordingStream : public GainStream {
 public:
  using GainStream::GainStream;
  Eigen::MatrixXd next_symbol() override {
    ++pulled;
    return GainStream::next_symbol();
  }
  Index pulled = 0;
};

}  // namespace

TEST(Budget, QuotasAndThreshold) {
  const AllocationBudget b = AllocationBudget::make(4, 5, 3, 8);
  EXPECT_EQ(b.fl_quota, 8);
  EXPECT_EQ(b.it_quota, 12);
  EXPECT_DOUBLE_EQ(b.p_it, 0.6);
  EXPECT_NEAR(b.q, channel::quantile_threshold(0.6, 3), 1e-15);
  EXPECT_TRUE(std::isinf(AllocationBudget::make(4, 5, 3, 20).q));
}

TEST(Budget, InfeasibleReportsMinimalSymbols) {
  try {
    AllocationBudget::make(512, 100, 5, 610 * 1208);
    FAIL() << "expected Infeasible";
  } catch (const Infeasible& e) {
    EXPECT_EQ(e.demand(), 610 * 1208);
    EXPECT_EQ(e.available(), 51200);
    EXPECT_EQ(e.deficit(), 610 * 1208 - 51200);
    EXPECT_EQ(e.minimal_symbols(), 1440);  // ceil(736880 / 512)
  }
}

TEST(Online, HandTraceOnTwoByTwo) {
  // p_it = 1/2, q = ln 2. RB 0 (gain 1.0) passes the threshold; RBs 1 and 2
  // fall below it; RB 3 is forced to IT once the FL quota of 2 is met.
  MatrixGainSource src({(Eigen::MatrixXd(1, 2) << 1.0, 0.2).finished(), (Eigen::MatrixXd(1, 2) << 0.1, 3.0).finished()});
  GainStream stream(src);
  const AllocationResult r = online_allocate(stream, 2, 2, 2);
  EXPECT_EQ(r.grid.it_device(0, 0), 0);
  EXPECT_TRUE(r.grid.is_fl(1, 0));
  EXPECT_TRUE(r.grid.is_fl(0, 1));
  EXPECT_EQ(r.grid.it_device(1, 1), 0);
  EXPECT_EQ(r.stats.chosen_it, 1);
  EXPECT_EQ(r.stats.forced_it, 1);
  EXPECT_EQ(r.stats.forced_fl, 0);
  EXPECT_EQ(r.stats.first_forced, 3);
  EXPECT_TRUE(validate_allocation(r.grid, 2).ok());
}

TEST(Online, ItBudgetExhaustedLeavesRestToFl) {
  // Every gain clears the threshold, so IT fills first and the tail is FL.
  MatrixGainSource src({Eigen::MatrixXd::Constant(2, 3, 9.0), Eigen::MatrixXd::Constant(2, 3, 9.0)});
  GainStream stream(src);
  const AllocationResult r = online_allocate(stream, 3, 2, 4);
  EXPECT_EQ(r.grid.fl_count(), 4);
  EXPECT_EQ(r.stats.chosen_it, 2);
  EXPECT_EQ(r.stats.forced_fl, 4);
  EXPECT_EQ(r.grid.it_device(1, 0), 0);  // tie goes to the lowest device index
}

TEST(Online, ExactFlCountAndValidOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Index m = 3 + static_cast<Index>(seed % 5);
    const Index s = 4 + static_cast<Index>(seed % 7);
    const Index n = 1 + static_cast<Index>(seed % 4);
    const Index demand = static_cast<Index>((seed * 7) % static_cast<std::uint64_t>(m * s + 1));
    const MatrixGainSource src = random_source(n, m, s, seed);
    GainStream stream(src);
    const AllocationResult r = online_allocate(stream, m, s, demand);
    EXPECT_EQ(r.grid.fl_count(), demand);
    EXPECT_EQ(r.grid.it_count(), m * s - demand);
    EXPECT_TRUE(validate_allocation(r.grid, demand).ok());
    const AllocationResult off = offline_allocate(src, m, s, demand);
    EXPECT_TRUE(validate_allocation(off.grid, demand).ok());
    EXPECT_GE(total_rate(off.grid, src), total_rate(r.grid, src) - 1e-12);
  }
}

TEST(Online, DecisionsAreCausal) {
  const MatrixGainSource src = random_source(3, 4, 6, 77);
  RecordingStream stream(src);
  std::vector<std::pair<Index, Index>> seen;  // (symbol of decision, symbols pulled so far)
  const auto observer = [&](Index, Index symbol, bool) { seen.emplace_back(symbol, stream.pulled); };
  const AllocationResult r = online_allocate(stream, 4, 6, 10, observer);
  ASSERT_FALSE(seen.empty());
  for (const auto& [symbol, pulled] : seen) EXPECT_EQ(pulled, symbol + 1);
  EXPECT_EQ(stream.symbols_read(), stream.pulled);
  EXPECT_EQ(static_cast<Index>(seen.size()) + r.stats.forced_fl, 24);
}

TEST(Online, ShortStreamThrows) {
  const MatrixGainSource src = random_source(2, 3, 2, 1);
  GainStream stream(src);
  EXPECT_THROW(online_allocate(stream, 3, 4, 2), TruncatedStream);
}

TEST(Offline, MatchesBruteForceOnSmallGrids) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Index m = 2;
    const Index s = 2 + static_cast<Index>(seed % 2);
    const Index n = 1 + static_cast<Index>(seed % 3);
    const Index total = m * s;
    const Index demand = static_cast<Index>(seed % static_cast<std::uint64_t>(total + 1));
    const MatrixGainSource src = random_source(n, m, s, 100 + seed);
    double best = -1.0;
    for (unsigned mask = 0; mask < (1u << total); ++mask) {
      if (static_cast<Index>(__builtin_popcount(mask)) != demand) continue;
      AllocationGrid g(m, s, n);
      for (Index r = 0; r < total; ++r) {
        const Rb rb = g.position(r);
        if (mask & (1u << r)) {
          g.assign_fl(r);
        } else {
          g.assign_it(r, channel::max_gain(src.symbol_gains(rb.symbol).col(rb.subcarrier)).argmax);
        }
      }
      g.rebuild_order();
      best = std::max(best, total_rate(g, src));
    }
    const AllocationResult off = offline_allocate(src, m, s, demand);
    EXPECT_NEAR(total_rate(off.grid, src), best, 1e-12) << seed;
  }
}

TEST(Rsca, ExactCountsAndSeeded) {
  const MatrixGainSource src = random_source(4, 8, 10, 5);
  GainStream a(src), b(src), c(src);
  const AllocationResult ra = rsca_allocate(a, 8, 10, 33, 9);
  const AllocationResult rb = rsca_allocate(b, 8, 10, 33, 9);
  const AllocationResult rc = rsca_allocate(c, 8, 10, 33, 10);
  EXPECT_TRUE(ra.grid == rb.grid);
  EXPECT_FALSE(ra.grid == rc.grid);
  EXPECT_EQ(ra.grid.fl_count(), 33);
  EXPECT_TRUE(validate_allocation(ra.grid, 33).ok());
}

TEST(Validate, FlagsEachViolationKind) {
  AllocationGrid g(2, 1, 2);
  g.assign_fl(0);
  g.assign_it(1, 0);
  g.rebuild_order();
  EXPECT_TRUE(validate_allocation(g, 1).ok());

  const auto has = [](const ValidationReport& r, Violation::Kind k) {
    return std::any_of(r.violations.begin(), r.violations.end(), [k](const Violation& v) { return v.kind == k; });
  };
  EXPECT_TRUE(has(validate_allocation(g, 2), Violation::Kind::FlCount));
  AllocationGrid both = g;
  both.it[1] = 1;  // RB 0 is FL and IT at once
  EXPECT_TRUE(has(validate_allocation(both, 1), Violation::Kind::Exclusivity));
  AllocationGrid two = g;
  two.it[3] = 1;  // RB 1 held by both IT devices
  EXPECT_TRUE(has(validate_allocation(two, 1), Violation::Kind::Exclusivity));
  AllocationGrid nonbin = g;
  nonbin.fl[0] = 2;
  EXPECT_TRUE(has(validate_allocation(nonbin, 1), Violation::Kind::NonBinary));
  AllocationGrid order = g;
  order.fl_rb_order = {1};
  EXPECT_TRUE(has(validate_allocation(order, 1), Violation::Kind::Order));
  AllocationGrid shape = g;
  shape.fl.pop_back();
  EXPECT_TRUE(has(validate_allocation(shape, 1), Violation::Kind::Shape));
}

TEST(Partition, SplitsFlRbsInOrder) {
  const MatrixGainSource src = random_source(2, 4, 3, 8);
  GainStream stream(src);
  const AllocationResult r = online_allocate(stream, 4, 3, 6);
  const auto rounds = partition_fl_rbs(r.grid, 3);
  ASSERT_EQ(rounds.size(), 2u);
  std::vector<Index> flat;
  for (const auto& round : rounds)
    for (const Rb& rb : round) flat.push_back(r.grid.rb(rb.subcarrier, rb.symbol));
  EXPECT_EQ(flat, r.grid.fl_rb_order);
  EXPECT_TRUE(std::is_sorted(flat.begin(), flat.end()));
  EXPECT_THROW(partition_fl_rbs(r.grid, 4), Error);
}

TEST(Rle, RoundTripsAndRejectsGarbage) {
  const MatrixGainSource src = random_source(3, 5, 4, 12);
  GainStream stream(src);
  const AllocationResult r = online_allocate(stream, 5, 4, 7);
  std::stringstream buf;
  write_rle(buf, r.grid);
  EXPECT_EQ(buf.str().rfind("CFLIT-ALLOC v1 5 4 3", 0), 0u);
  EXPECT_TRUE(read_rle(buf) == r.grid);

  AllocationGrid partial(2, 1, 1);
  partial.assign_fl(0);
  partial.rebuild_order();
  std::stringstream p;
  write_rle(p, partial);
  EXPECT_NE(p.str().find("1F 1U"), std::string::npos);
  EXPECT_TRUE(read_rle(p) == partial);

  std::stringstream bad("CFLIT-ALLOC v1 2 1 1\n3F\n");
  EXPECT_THROW(read_rle(bad), Error);
  std::stringstream bad_device("CFLIT-ALLOC v1 2 1 1\n2I4\n");
  EXPECT_THROW(read_rle(bad_device), Error);
}

TEST(Summary, ReportsCounts) {
  const MatrixGainSource src = random_source(2, 4, 4, 3);
  GainStream stream(src);
  const nlohmann::json j = nlohmann::json::parse(summary_json(online_allocate(stream, 4, 4, 6)));
  EXPECT_EQ(j["fl_count"], 6);
  EXPECT_EQ(j["it_count"], 10);
}
