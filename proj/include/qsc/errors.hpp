#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qsc {

// Caller broke a precondition (empty history, empty candidate set, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A threshold configuration that the requested layer cannot honor.
// Every violated inequality is listed individually.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : std::invalid_argument(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "infeasible configuration:";
    for (const auto& s : v) {
      out += " [";
      out += s;
      out += "]";
    }
    return out;
  }

  std::vector<std::string> violations_;
};

// The transport handed a node a message that pairwise-FIFO delivery can
// never produce (a step gap larger than one).
class TransportIntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A lower layer returned something its declared thresholds forbid, or a
// peer sent a message kind that does not belong to the current step.
class ProtocolViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the simulator when no node can make progress.
class DeadlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Store backend failure; the operation may be retried.
class StoreIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed bytes on a wire or in a stored value.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qsc
