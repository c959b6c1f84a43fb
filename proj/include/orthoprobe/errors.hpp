#pragma once

#include <stdexcept>
#include <string>

namespace orthoprobe {

// Error taxonomy. The CLI maps each family to an exit code:
// usage/config -> 2, data/format -> 3, numerical/contract -> 4.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- data / format family ---------------------------------------------------
class DataError : public Error {
 public:
  using Error::Error;
};
class FormatError : public DataError {
 public:
  using DataError::DataError;
};
class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};
class ValidationError : public DataError {
 public:
  using DataError::DataError;
};
class IoError : public DataError {
 public:
  using DataError::DataError;
};

// --- numerical / contract family --------------------------------------------
class NumericalError : public Error {
 public:
  using Error::Error;
};
class ContractError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class StatisticsError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class StratificationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class SelectionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class TrainingError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class MetricError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// --- usage family -----------------------------------------------------------
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class... Es>
[[noreturn]] void rethrow_typed(const Error& e, const std::string& msg) {
  ((dynamic_cast<const Es*>(&e) ? throw Es(msg) : void()), ...);
  throw Error(msg);
}

}  // namespace detail

// Same concrete type, message prefixed with `context`.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  detail::rethrow_typed<FormatError, CorruptionError, ValidationError, IoError, DataError, ContractError, StatisticsError,
                        StratificationError, SelectionError, TrainingError, MetricError, NumericalError, ConfigError>(
      e, context + ": " + e.what());
}

}  // namespace orthoprobe
