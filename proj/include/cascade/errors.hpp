#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cascade {

/// Caller passed a value outside an operation's precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An object is not in a state where the operation makes sense (empty vocabulary, empty pool).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Experiment or pipeline configuration is inconsistent (missing teacher, unscored domain).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage or engine could not make progress.
class PipelineFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise unusable numbers; `index` points at the first offending entry.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(const std::string& what, std::size_t index)
      : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace cascade
