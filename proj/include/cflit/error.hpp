#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cflit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad dimensions, nonpositive constants, unknown option values.
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// Arguments that violate an operation's preconditions.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain (E1 at z <= 0, threshold at p_it <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A zero channel coefficient where the optimal transceiver divides by |h|.
class DegenerateChannel : public Error {
 public:
  using Error::Error;
};

class TruncatedStream : public Error {
 public:
  using Error::Error;
};

/// Not enough resource blocks to host the federated-learning demand.
class Infeasible : public Error {
 public:
  Infeasible(const std::string& what, std::int64_t demand, std::int64_t available,
             std::int64_t minimal_symbols)
      : Error(what), demand_(demand), available_(available), minimal_symbols_(minimal_symbols) {}

  std::int64_t demand() const { return demand_; }
  std::int64_t available() const { return available_; }
  std::int64_t deficit() const { return demand_ - available_; }
  std::int64_t minimal_symbols() const { return minimal_symbols_; }

 private:
  std::int64_t demand_;
  std::int64_t available_;
  std::int64_t minimal_symbols_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::int64_t iterations, double grad_norm)
      : Error(what), iterations_(iterations), grad_norm_(grad_norm) {}

  std::int64_t iterations() const { return iterations_; }
  double grad_norm() const { return grad_norm_; }

 private:
  std::int64_t iterations_;
  double grad_norm_;
};

}  // namespace cflit
