#pragma once

#include <stdexcept>
#include <string>

namespace exqr {

/// Broad error classes. Each maps onto one CLI exit status.
enum class ErrorCategory { usage, data, numerical, io };

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numerical: return 4;
    case ErrorCategory::io: return 5;
  }
  return 1;
}

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numerical: return "numerical";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

/// Base of every exception thrown by the library. `kind()` is a short
/// machine-readable tag such as "degenerate_scale".
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string kind, const std::string& what)
      : std::runtime_error(what), category_(category), kind_(std::move(kind)) {}

  ErrorCategory category() const noexcept { return category_; }
  const std::string& kind() const noexcept { return kind_; }

 private:
  ErrorCategory category_;
  std::string kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what, std::string kind = "usage")
      : Error(ErrorCategory::usage, std::move(kind), what) {}
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  explicit DomainError(const std::string& what)
      : Error(ErrorCategory::usage, "domain", what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what, std::string kind = "data")
      : Error(ErrorCategory::data, std::move(kind), what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what, std::string kind = "numerical")
      : Error(ErrorCategory::numerical, std::move(kind), what) {}
};

struct SolverError : NumericalError {
  explicit SolverError(const std::string& what) : NumericalError(what, "solver") {}
};

struct DegenerateTailError : NumericalError {
  explicit DegenerateTailError(const std::string& what)
      : NumericalError(what, "degenerate_tail") {}
};

struct DegenerateScaleError : NumericalError {
  explicit DegenerateScaleError(const std::string& what)
      : NumericalError(what, "degenerate_scale") {}
};

/// The truncated Poisson-process objective is unbounded below.
struct TruncationError : NumericalError {
  explicit TruncationError(const std::string& what)
      : NumericalError(what, "truncation") {}
};

struct SimulationError : NumericalError {
  explicit SimulationError(const std::string& what)
      : NumericalError(what, "simulation") {}
};

struct IoError : Error {
  explicit IoError(const std::string& what, std::string kind = "io")
      : Error(ErrorCategory::io, std::move(kind), what) {}
};

}  // namespace exqr
