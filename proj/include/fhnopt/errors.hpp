#pragma once

#include <stdexcept>
#include <string>

namespace fhnopt {

// Caller broke a documented precondition (mismatched grids, wrong sizes).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid user-supplied configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A linear solve or regression failed.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite or runaway state during time integration.
class BlowUpError : public NumericalError {
 public:
  BlowUpError(const std::string& what, int step)
      : NumericalError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace fhnopt
