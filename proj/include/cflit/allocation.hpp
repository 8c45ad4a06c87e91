#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cflit/channel.hpp"
#include "cflit/error.hpp"

namespace cflit::allocation {

using Eigen::Index;

/// One resource block, zero-based.
struct Rb {
  Index subcarrier;
  Index symbol;

  bool operator==(const Rb&) const = default;
};

/// FL and IT indicators over an M x S grid of resource blocks with N IT
/// devices. Flat RB index r = s * M + m (symbol-major).
struct AllocationGrid {
  Index subcarriers = 0;
  Index symbols = 0;
  Index devices = 0;
  /// o_{m,s}, one byte per RB.
  std::vector<std::uint8_t> fl;
  /// b_{n,m,s} at (r * N + n).
  std::vector<std::uint8_t> it;
  /// Flat indices of FL RBs in symbol-major order.
  std::vector<Index> fl_rb_order;

  AllocationGrid() = default;
  AllocationGrid(Index subcarriers, Index symbols, Index devices);

  Index rb_count() const { return subcarriers * symbols; }
  Index rb(Index subcarrier, Index symbol) const { return symbol * subcarriers + subcarrier; }
  Rb position(Index r) const { return {r % subcarriers, r / subcarriers}; }

  bool is_fl(Index subcarrier, Index symbol) const { return fl[static_cast<std::size_t>(rb(subcarrier, symbol))] != 0; }
  bool it_flag(Index device, Index subcarrier, Index symbol) const {
    return it[static_cast<std::size_t>(rb(subcarrier, symbol) * devices + device)] != 0;
  }
  /// Device holding the RB for IT, or -1.
  Index it_device(Index subcarrier, Index symbol) const;

  Index fl_count() const;
  Index it_count() const;
  /// IT RBs per device.
  std::vector<Index> it_counts() const;

  void assign_fl(Index r);
  void assign_it(Index r, Index device);
  /// Rebuilds fl_rb_order from the flags.
  void rebuild_order();

  bool operator==(const AllocationGrid&) const = default;
};

/// p_it, q and the two integer quotas for a given FL demand.
struct AllocationBudget {
  Index fl_quota = 0;
  Index it_quota = 0;
  double p_it = 0.0;
  /// quantile_threshold(p_it, N); +inf when p_it = 0.
  double q = 0.0;

  /// Throws Infeasible when the demand exceeds M * S.
  static AllocationBudget make(Index subcarriers, Index symbols, Index devices, Index fl_demand);
};

/// Random-access view of IT channel gains |g_{n,m,s}|^2.
class GainSource {
 public:
  virtual ~GainSource() = default;
  virtual Index devices() const = 0;
  virtual Index subcarriers() const = 0;
  /// Number of symbols available.
  virtual Index symbols() const = 0;
  /// devices x subcarriers gains for one symbol.
  virtual Eigen::MatrixXd symbol_gains(Index symbol) const = 0;
  virtual double gain(Index device, Index subcarrier, Index symbol) const = 0;
};

/// Gains held in memory, one devices x subcarriers matrix per symbol.
class MatrixGainSource final : public GainSource {
 public:
  explicit MatrixGainSource(std::vector<Eigen::MatrixXd> per_symbol);

  Index devices() const override { return devices_; }
  Index subcarriers() const override { return subcarriers_; }
  Index symbols() const override { return static_cast<Index>(data_.size()); }
  Eigen::MatrixXd symbol_gains(Index symbol) const override;
  double gain(Index device, Index subcarrier, Index symbol) const override;

 private:
  std::vector<Eigen::MatrixXd> data_;
  Index devices_ = 0;
  Index subcarriers_ = 0;
};

/// Gains computed on demand from a fading model.
class FadingGainSource final : public GainSource {
 public:
  explicit FadingGainSource(channel::FadingModel model) : model_(std::move(model)) {}

  Index devices() const override { return model_.config().devices; }
  Index subcarriers() const override { return model_.config().subcarriers; }
  Index symbols() const override { return model_.config().symbols; }
  Eigen::MatrixXd symbol_gains(Index symbol) const override { return model_.symbol_gains(symbol); }
  double gain(Index device, Index subcarrier, Index symbol) const override {
    return model_.gain(device, subcarrier, symbol);
  }

 private:
  channel::FadingModel model_;
};

/// Causal symbol-by-symbol reader. Reading past the end of the source
/// throws TruncatedStream.
class GainStream {
 public:
  explicit GainStream(const GainSource& source) : source_(&source) {}
  virtual ~GainStream() = default;

  virtual Eigen::MatrixXd next_symbol();
  Index symbols_read() const { return read_; }
  const GainSource& source() const { return *source_; }

 private:
  const GainSource* source_;
  Index read_ = 0;
};

/// Called once per decided RB, in decision order.
using DecisionObserver = std::function<void(Index subcarrier, Index symbol, bool to_it)>;

struct AllocationStats {
  /// RBs sent to IT by the threshold (or the coin, for RSCA).
  Index chosen_it = 0;
  /// RBs sent to IT because the FL quota was already met.
  Index forced_it = 0;
  /// RBs left to FL after the IT budget was used up.
  Index forced_fl = 0;
  /// First flat RB index decided under a budget correction, or -1.
  Index first_forced = -1;
};

struct AllocationResult {
  AllocationGrid grid;
  AllocationBudget budget;
  AllocationStats stats;
};

/// Threshold-based online allocation: every RB starts as FL; RBs are scanned
/// symbol-major and, while the IT budget lasts, go to their best IT device
/// when the FL quota is already met or when the best gain reaches q.
AllocationResult online_allocate(GainStream& stream, Index subcarriers, Index symbols, Index fl_demand,
                                 const DecisionObserver& observer = {});

/// Non-causal benchmark: the M*S - demand RBs with the largest best gain go
/// to IT. Ties in best gain are broken by (symbol, subcarrier).
AllocationResult offline_allocate(const GainSource& gains, Index subcarriers, Index symbols, Index fl_demand);

/// Random allocation: each RB goes to IT with probability p_it, with the same
/// budget corrections as the online scheme.
AllocationResult rsca_allocate(GainStream& stream, Index subcarriers, Index symbols, Index fl_demand,
                               std::uint64_t seed);

struct Violation {
  enum class Kind { NonBinary, Exclusivity, FlCount, Order, Shape };
  Kind kind;
  /// -1 where not applicable.
  Index device = -1;
  Index subcarrier = -1;
  Index symbol = -1;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_allocation(const AllocationGrid& grid, Index fl_demand);

/// Splits the FL RBs into consecutive rounds of d, in fl_rb_order.
std::vector<std::vector<Rb>> partition_fl_rbs(const AllocationGrid& grid, Index d);

/// Run-length text: a header line "CFLIT-ALLOC v1 M S N", then one line of
/// runs over RBs in symbol-major order, e.g. "3F 1I0 2I4" (F = FL,
/// Ik = IT device k, U = unassigned).
void write_rle(std::ostream& out, const AllocationGrid& grid);
AllocationGrid read_rle(std::istream& in);

/// Counts per device, FL/IT totals, p_it and q as a JSON object.
std::string summary_json(const AllocationResult& result);

}  // namespace cflit::allocation
