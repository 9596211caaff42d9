#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace arq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PolicyError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch)
      : Error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Raised when no policy inside the bit range can meet the BitOPs budget.
class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, std::uint64_t min_cost)
      : Error(what), min_cost_(min_cost) {}
  std::uint64_t min_cost() const { return min_cost_; }

 private:
  std::uint64_t min_cost_;
};

class CacheMissError : public Error {
 public:
  CacheMissError(const std::string& what, std::size_t input_id)
      : Error(what), input_id_(input_id) {}
  std::size_t input_id() const { return input_id_; }

 private:
  std::size_t input_id_;
};

}  // namespace arq
