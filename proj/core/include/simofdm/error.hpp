#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace simofdm {

/// Inconsistent dimensions, unknown keys, invalid settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN/Inf encountered; the message names the first offending stage.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A batch sample produced an all-zero transmit signal.
class DegenerateInputError : public std::runtime_error {
 public:
  DegenerateInputError(std::size_t sample, const std::string& what)
      : std::runtime_error(what), sample_(sample) {}
  std::size_t sample() const noexcept { return sample_; }

 private:
  std::size_t sample_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace simofdm
