#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "jmstate/core.hpp"

namespace jmstate {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct QuadratureRule {
  std::size_t n = 0;
  std::vector<double> nodes;
  std::vector<double> weights;

  /// Integral of `f` over [a, b] with the nodes mapped affinely.
  template <class F>
  double integrate(double a, double b, F&& f) const {
    double half = 0.5 * (b - a), mid = 0.5 * (a + b), acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += weights[k] * f(mid + half * nodes[k]);
    return half * acc;
  }
};

namespace detail {

// Newton iteration on P_n from the Chebyshev-like initial guess; the
// three-term recurrence gives P_n and P_n' together.
inline QuadratureRule compute_gauss_legendre(std::size_t n) {
  QuadratureRule rule;
  rule.n = n;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // recompute the derivative at the converged node
    double p0 = 1.0, p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
      p0 = p1;
      p1 = pk;
    }
    dp = n == 1 ? 1.0 : static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

class QuadratureCache {
 public:
  const QuadratureRule& get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto& slot = rules_[n];
    if (!slot) {
      slot = std::make_unique<const QuadratureRule>(compute_gauss_legendre(n));
      ++computations_;
    }
    return *slot;
  }

  std::size_t computations() {
    std::lock_guard lock(mutex_);
    return computations_;
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, std::unique_ptr<const QuadratureRule>> rules_;
  std::size_t computations_ = 0;
};

inline QuadratureCache& quadrature_cache() {
  static QuadratureCache cache;
  return cache;
}

}  // namespace detail

inline constexpr std::size_t kDefaultQuadratureNodes = 32;

/// Cached rule for `n` nodes. The returned reference stays valid for the
/// lifetime of the program; nodes are computed once per `n`.
inline const QuadratureRule& gauss_legendre(std::size_t n = kDefaultQuadratureNodes) {
  if (n == 0) throw ValidationError("quadrature: node count must be positive");
  return detail::quadrature_cache().get(n);
}

}  // namespace jmstate
