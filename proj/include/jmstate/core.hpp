#pragma once

#include <compare>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace jmstate {

using State = std::size_t;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Raised when user-supplied structure (graph, cohort, params, config)
/// violates a contract. The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on numerical breakdown (non-finite values, failed factorizations,
/// runaway simulations).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Edge {
  State from = 0;
  State to = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
  friend bool operator==(const Edge&, const Edge&) = default;
};

inline std::string to_string(const Edge& e) {
  return std::to_string(e.from) + "->" + std::to_string(e.to);
}

/// One observed (time, state) pair of a trajectory.
struct Transition {
  double time = 0.0;
  State state = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Times strictly increase; the first pair is the observed initial pair.
using Trajectory = std::vector<Transition>;

}  // namespace jmstate
