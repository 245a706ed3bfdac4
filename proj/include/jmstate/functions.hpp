#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/core.hpp"
#include "jmstate/quadrature.hpp"

// Function families of the joint model. Every family supplies analytic
// parameter derivatives; Jacobians are written row-major into caller-owned
// buffers (rows = outputs, columns = inputs) so the likelihood inner loops
// never allocate.

namespace jmstate {

using CSpan = std::span<const double>;
using MSpan = std::span<double>;

// ---------------------------------------------------------------------------
// Individual-effects maps psi = f(gamma, X, b)

class EffectsMap {
 public:
  virtual ~EffectsMap() = default;
  virtual std::string name() const = 0;
  virtual std::size_t gamma_dim() const = 0;
  virtual std::size_t b_dim() const = 0;
  virtual std::size_t psi_dim() const = 0;
  /// Required covariate dimension, or -1 when covariates are ignored.
  virtual long covariate_dim() const { return -1; }
  virtual void value(CSpan gamma, CSpan x, CSpan b, MSpan psi) const = 0;
  /// psi_dim x gamma_dim
  virtual void jacobian_gamma(CSpan gamma, CSpan x, CSpan b, MSpan out) const = 0;
};

enum class Transform { identity, exp, sigmoid };

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::identity: return "identity";
    case Transform::exp: return "exp";
    case Transform::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Transform transform_from_string(const std::string& s) {
  if (s == "identity" || s == "id") return Transform::identity;
  if (s == "exp") return Transform::exp;
  if (s == "sigmoid") return Transform::sigmoid;
  throw ValidationError("unknown transform '" + s + "' (expected identity, exp or sigmoid)");
}

/// psi_j = T_j(gamma_j + b_j). `gamma_plus_b` is the all-identity stack.
class TransformStack final : public EffectsMap {
 public:
  explicit TransformStack(std::vector<Transform> transforms) : transforms_(std::move(transforms)) {}

  static std::shared_ptr<TransformStack> gamma_plus_b(std::size_t dim) {
    return std::make_shared<TransformStack>(std::vector<Transform>(dim, Transform::identity));
  }

  std::string name() const override {
    bool all_id = std::all_of(transforms_.begin(), transforms_.end(),
                              [](Transform t) { return t == Transform::identity; });
    return all_id ? "gamma_plus_b" : "transform_stack";
  }
  std::size_t gamma_dim() const override { return transforms_.size(); }
  std::size_t b_dim() const override { return transforms_.size(); }
  std::size_t psi_dim() const override { return transforms_.size(); }
  const std::vector<Transform>& transforms() const { return transforms_; }

  void value(CSpan gamma, CSpan, CSpan b, MSpan psi) const override {
    for (std::size_t j = 0; j < transforms_.size(); ++j) psi[j] = apply(transforms_[j], gamma[j] + b[j]);
  }

  void jacobian_gamma(CSpan gamma, CSpan, CSpan b, MSpan out) const override {
    const std::size_t m = transforms_.size();
    std::fill(out.begin(), out.begin() + static_cast<long>(m * m), 0.0);
    for (std::size_t j = 0; j < m; ++j) out[j * m + j] = derivative(transforms_[j], gamma[j] + b[j]);
  }

 private:
  static double apply(Transform t, double z) {
    switch (t) {
      case Transform::identity: return z;
      case Transform::exp: return std::exp(z);
      case Transform::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    }
    return z;
  }
  static double derivative(Transform t, double z) {
    switch (t) {
      case Transform::identity: return 1.0;
      case Transform::exp: return std::exp(z);
      case Transform::sigmoid: {
        double s = 1.0 / (1.0 + std::exp(-z));
        return s * (1.0 - s);
      }
    }
    return 1.0;
  }

  std::vector<Transform> transforms_;
};

/// psi = Gamma X + b with Gamma a dim x k matrix stored row-major in gamma.
class GammaXPlusB final : public EffectsMap {
 public:
  GammaXPlusB(std::size_t dim, std::size_t covariates) : dim_(dim), k_(covariates) {}

  std::string name() const override { return "gamma_x_plus_b"; }
  std::size_t gamma_dim() const override { return dim_ * k_; }
  std::size_t b_dim() const override { return dim_; }
  std::size_t psi_dim() const override { return dim_; }
  long covariate_dim() const override { return static_cast<long>(k_); }

  void value(CSpan gamma, CSpan x, CSpan b, MSpan psi) const override {
    for (std::size_t j = 0; j < dim_; ++j) {
      double acc = b[j];
      for (std::size_t c = 0; c < k_; ++c) acc += gamma[j * k_ + c] * x[c];
      psi[j] = acc;
    }
  }

  void jacobian_gamma(CSpan, CSpan x, CSpan, MSpan out) const override {
    const std::size_t cols = dim_ * k_;
    std::fill(out.begin(), out.begin() + static_cast<long>(dim_ * cols), 0.0);
    for (std::size_t j = 0; j < dim_; ++j)
      for (std::size_t c = 0; c < k_; ++c) out[j * cols + j * k_ + c] = x[c];
  }

 private:
  std::size_t dim_, k_;
};

/// No latent structure: psi and b are empty.
class NoEffects final : public EffectsMap {
 public:
  std::string name() const override { return "none"; }
  std::size_t gamma_dim() const override { return 0; }
  std::size_t b_dim() const override { return 0; }
  std::size_t psi_dim() const override { return 0; }
  void value(CSpan, CSpan, CSpan, MSpan) const override {}
  void jacobian_gamma(CSpan, CSpan, CSpan, MSpan) const override {}
};

// ---------------------------------------------------------------------------
// Regression functions h(t, psi) in R^d

class Regression {
 public:
  virtual ~Regression() = default;
  virtual std::string name() const = 0;
  virtual std::size_t psi_dim() const = 0;
  virtual std::size_t out_dim() const = 0;
  virtual void value(double t, CSpan psi, MSpan out) const = 0;
  /// out_dim x psi_dim
  virtual void jacobian_psi(double t, CSpan psi, MSpan out) const = 0;
  virtual bool has_time_derivative() const { return false; }
  virtual void time_derivative(double, CSpan, MSpan) const {
    throw ValidationError("regression " + name() + " has no time derivative");
  }
  /// out_dim x psi_dim
  virtual void time_derivative_jacobian(double, CSpan, MSpan) const {
    throw ValidationError("regression " + name() + " has no time derivative");
  }
};

/// h = psi_1 + s_0 t + sum_k 1{t > tau_k} (s_k - s_{k-1}) (t - tau_k), with
/// psi = (psi_1, s_0, ..., s_K). Continuous, affine between fixed breakpoints;
/// the indicator is strict.
class PiecewiseAffine final : public Regression {
 public:
  explicit PiecewiseAffine(std::vector<double> breakpoints) : tau_(std::move(breakpoints)) {
    if (!std::is_sorted(tau_.begin(), tau_.end()) ||
        std::adjacent_find(tau_.begin(), tau_.end()) != tau_.end())
      throw ValidationError("piecewise_affine: breakpoints must be strictly increasing");
  }

  std::string name() const override { return "piecewise_affine"; }
  std::size_t psi_dim() const override { return tau_.size() + 2; }
  std::size_t out_dim() const override { return 1; }
  bool has_time_derivative() const override { return true; }
  const std::vector<double>& breakpoints() const { return tau_; }

  void value(double t, CSpan psi, MSpan out) const override {
    double h = psi[0] + psi[1] * t;
    for (std::size_t k = 0; k < tau_.size(); ++k)
      if (t > tau_[k]) h += (psi[k + 2] - psi[k + 1]) * (t - tau_[k]);
    out[0] = h;
  }

  void jacobian_psi(double t, CSpan, MSpan out) const override {
    const std::size_t K = tau_.size();
    out[0] = 1.0;
    for (std::size_t j = 0; j <= K; ++j) {
      double g = (j == 0) ? t : 0.0;
      if (j >= 1 && t > tau_[j - 1]) g += t - tau_[j - 1];
      if (j < K && t > tau_[j]) g -= t - tau_[j];
      out[j + 1] = g;
    }
  }

  void time_derivative(double t, CSpan psi, MSpan out) const override {
    out[0] = psi[segment(t) + 1];
  }

  void time_derivative_jacobian(double t, CSpan, MSpan out) const override {
    std::fill(out.begin(), out.begin() + static_cast<long>(psi_dim()), 0.0);
    out[segment(t) + 1] = 1.0;
  }

 private:
  std::size_t segment(double t) const {
    std::size_t j = 0;
    while (j < tau_.size() && t > tau_[j]) ++j;
    return j;
  }

  std::vector<double> tau_;
};

/// h = sum_j psi_j t^j
class Polynomial final : public Regression {
 public:
  explicit Polynomial(std::size_t degree) : degree_(degree) {}

  std::string name() const override { return "polynomial"; }
  std::size_t psi_dim() const override { return degree_ + 1; }
  std::size_t out_dim() const override { return 1; }
  bool has_time_derivative() const override { return true; }

  void value(double t, CSpan psi, MSpan out) const override {
    double acc = 0.0;
    for (std::size_t j = degree_ + 1; j-- > 0;) acc = acc * t + psi[j];
    out[0] = acc;
  }

  void jacobian_psi(double t, CSpan, MSpan out) const override {
    double p = 1.0;
    for (std::size_t j = 0; j <= degree_; ++j, p *= t) out[j] = p;
  }

  void time_derivative(double t, CSpan psi, MSpan out) const override {
    double acc = 0.0;
    for (std::size_t j = degree_ + 1; j-- > 1;) acc = acc * t + static_cast<double>(j) * psi[j];
    out[0] = acc;
  }

  void time_derivative_jacobian(double t, CSpan, MSpan out) const override {
    out[0] = 0.0;
    double p = 1.0;
    for (std::size_t j = 1; j <= degree_; ++j, p *= t) out[j] = static_cast<double>(j) * p;
  }

 private:
  std::size_t degree_;
};

/// h = psi_1 exp(-psi_2 t)
class ExponentialDecay final : public Regression {
 public:
  std::string name() const override { return "exp_decay"; }
  std::size_t psi_dim() const override { return 2; }
  std::size_t out_dim() const override { return 1; }
  bool has_time_derivative() const override { return true; }

  void value(double t, CSpan psi, MSpan out) const override { out[0] = psi[0] * std::exp(-psi[1] * t); }

  void jacobian_psi(double t, CSpan psi, MSpan out) const override {
    double e = std::exp(-psi[1] * t);
    out[0] = e;
    out[1] = -t * psi[0] * e;
  }

  void time_derivative(double t, CSpan psi, MSpan out) const override {
    out[0] = -psi[1] * psi[0] * std::exp(-psi[1] * t);
  }

  void time_derivative_jacobian(double t, CSpan psi, MSpan out) const override {
    double e = std::exp(-psi[1] * t);
    out[0] = -psi[1] * e;
    out[1] = psi[0] * e * (psi[1] * t - 1.0);
  }
};

/// h = psi_1 tanh((psi_3 - t) / psi_2) + (1 - psi_1): equals 1 as t -> -inf
/// and is non-increasing for psi_1, psi_2 > 0.
class ScaledTanh final : public Regression {
 public:
  std::string name() const override { return "tanh"; }
  std::size_t psi_dim() const override { return 3; }
  std::size_t out_dim() const override { return 1; }
  bool has_time_derivative() const override { return true; }

  void value(double t, CSpan psi, MSpan out) const override {
    out[0] = psi[0] * std::tanh((psi[2] - t) / psi[1]) + (1.0 - psi[0]);
  }

  void jacobian_psi(double t, CSpan psi, MSpan out) const override {
    double z = (psi[2] - t) / psi[1], th = std::tanh(z), s = 1.0 - th * th;
    out[0] = th - 1.0;
    out[1] = -psi[0] * s * z / psi[1];
    out[2] = psi[0] * s / psi[1];
  }

  void time_derivative(double t, CSpan psi, MSpan out) const override {
    double th = std::tanh((psi[2] - t) / psi[1]);
    out[0] = -psi[0] * (1.0 - th * th) / psi[1];
  }

  void time_derivative_jacobian(double t, CSpan psi, MSpan out) const override {
    double z = (psi[2] - t) / psi[1], th = std::tanh(z), s = 1.0 - th * th;
    double w2 = psi[1] * psi[1];
    out[0] = -s / psi[1];
    out[1] = -psi[0] * s / w2 * (2.0 * th * z - 1.0);
    out[2] = 2.0 * psi[0] * th * s / w2;
  }
};

/// d = 0: no longitudinal biomarker.
class NoRegression final : public Regression {
 public:
  explicit NoRegression(std::size_t psi_dim = 0) : psi_dim_(psi_dim) {}
  std::string name() const override { return "none"; }
  std::size_t psi_dim() const override { return psi_dim_; }
  std::size_t out_dim() const override { return 0; }
  bool has_time_derivative() const override { return true; }
  void value(double, CSpan, MSpan) const override {}
  void jacobian_psi(double, CSpan, MSpan) const override {}
  void time_derivative(double, CSpan, MSpan) const override {}
  void time_derivative_jacobian(double, CSpan, MSpan) const override {}

 private:
  std::size_t psi_dim_;
};

/// User-supplied regression. The time derivative callbacks are optional.
class CallbackRegression final : public Regression {
 public:
  using Fn = std::function<void(double, CSpan, MSpan)>;

  CallbackRegression(std::string name, std::size_t psi_dim, std::size_t out_dim, Fn value,
                     Fn jacobian, Fn time_derivative = {}, Fn time_derivative_jacobian = {})
      : name_(std::move(name)), psi_dim_(psi_dim), out_dim_(out_dim), value_(std::move(value)),
        jac_(std::move(jacobian)), dt_(std::move(time_derivative)),
        dt_jac_(std::move(time_derivative_jacobian)) {}

  std::string name() const override { return name_; }
  std::size_t psi_dim() const override { return psi_dim_; }
  std::size_t out_dim() const override { return out_dim_; }
  bool has_time_derivative() const override { return dt_ && dt_jac_; }
  void value(double t, CSpan psi, MSpan out) const override { value_(t, psi, out); }
  void jacobian_psi(double t, CSpan psi, MSpan out) const override { jac_(t, psi, out); }
  void time_derivative(double t, CSpan psi, MSpan out) const override {
    if (!dt_) Regression::time_derivative(t, psi, out);
    dt_(t, psi, out);
  }
  void time_derivative_jacobian(double t, CSpan psi, MSpan out) const override {
    if (!dt_jac_) Regression::time_derivative_jacobian(t, psi, out);
    dt_jac_(t, psi, out);
  }

 private:
  std::string name_;
  std::size_t psi_dim_, out_dim_;
  Fn value_, jac_, dt_, dt_jac_;
};

// ---------------------------------------------------------------------------
// Link functions g(t, X, psi) in R^a

class Link {
 public:
  virtual ~Link() = default;
  virtual std::string name() const = 0;
  virtual std::size_t out_dim() const = 0;
  virtual void value(double t, CSpan x, CSpan psi, MSpan out) const = 0;
  /// out_dim x psi_dim
  virtual void jacobian_psi(double t, CSpan x, CSpan psi, MSpan out) const = 0;
};

class NullLink final : public Link {
 public:
  std::string name() const override { return "none"; }
  std::size_t out_dim() const override { return 0; }
  void value(double, CSpan, CSpan, MSpan) const override {}
  void jacobian_psi(double, CSpan, CSpan, MSpan) const override {}
};

/// Current biomarker level g = h.
class ValueLink final : public Link {
 public:
  explicit ValueLink(std::shared_ptr<const Regression> h) : h_(std::move(h)) {}
  std::string name() const override { return "value"; }
  std::size_t out_dim() const override { return h_->out_dim(); }
  void value(double t, CSpan, CSpan psi, MSpan out) const override { h_->value(t, psi, out); }
  void jacobian_psi(double t, CSpan, CSpan psi, MSpan out) const override {
    h_->jacobian_psi(t, psi, out);
  }

 private:
  std::shared_ptr<const Regression> h_;
};

/// Biomarker slope g = dh/dt.
class SlopeLink final : public Link {
 public:
  explicit SlopeLink(std::shared_ptr<const Regression> h) : h_(std::move(h)) {
    if (!h_->has_time_derivative())
      throw ValidationError("slope link: regression " + h_->name() + " has no time derivative");
  }
  std::string name() const override { return "slope"; }
  std::size_t out_dim() const override { return h_->out_dim(); }
  void value(double t, CSpan, CSpan psi, MSpan out) const override { h_->time_derivative(t, psi, out); }
  void jacobian_psi(double t, CSpan, CSpan psi, MSpan out) const override {
    h_->time_derivative_jacobian(t, psi, out);
  }

 private:
  std::shared_ptr<const Regression> h_;
};

/// Cumulative exposure g = int_lower^t h(w) dw by Gauss-Legendre quadrature.
class CumulativeLink final : public Link {
 public:
  CumulativeLink(std::shared_ptr<const Regression> h, double lower = 0.0,
                 std::size_t nodes = kDefaultQuadratureNodes)
      : h_(std::move(h)), lower_(lower), rule_(&gauss_legendre(nodes)) {
    if (!std::isfinite(lower_)) throw ValidationError("cumulative link requires a finite lower bound");
  }
  std::string name() const override { return "cumulative"; }
  std::size_t out_dim() const override { return h_->out_dim(); }
  double lower() const { return lower_; }

  void value(double t, CSpan, CSpan psi, MSpan out) const override {
    const std::size_t d = h_->out_dim();
    std::fill(out.begin(), out.begin() + static_cast<long>(d), 0.0);
    std::vector<double> buf(d);
    double half = 0.5 * (t - lower_), mid = 0.5 * (t + lower_);
    for (std::size_t k = 0; k < rule_->n; ++k) {
      h_->value(mid + half * rule_->nodes[k], psi, buf);
      for (std::size_t i = 0; i < d; ++i) out[i] += half * rule_->weights[k] * buf[i];
    }
  }

  void jacobian_psi(double t, CSpan, CSpan psi, MSpan out) const override {
    const std::size_t n = h_->out_dim() * h_->psi_dim();
    std::fill(out.begin(), out.begin() + static_cast<long>(n), 0.0);
    std::vector<double> buf(n);
    double half = 0.5 * (t - lower_), mid = 0.5 * (t + lower_);
    for (std::size_t k = 0; k < rule_->n; ++k) {
      h_->jacobian_psi(mid + half * rule_->nodes[k], psi, buf);
      for (std::size_t i = 0; i < n; ++i) out[i] += half * rule_->weights[k] * buf[i];
    }
  }

 private:
  std::shared_ptr<const Regression> h_;
  double lower_;
  const QuadratureRule* rule_;
};

/// Concatenation of several links, e.g. (h, dh/dt).
class ConcatLink final : public Link {
 public:
  ConcatLink(std::vector<std::shared_ptr<const Link>> parts, std::size_t psi_dim, std::string name = "concat")
      : parts_(std::move(parts)), psi_dim_(psi_dim), name_(std::move(name)) {
    for (const auto& p : parts_) dim_ += p->out_dim();
  }

  static std::shared_ptr<ConcatLink> value_slope(const std::shared_ptr<const Regression>& h) {
    return std::make_shared<ConcatLink>(
        std::vector<std::shared_ptr<const Link>>{std::make_shared<ValueLink>(h), std::make_shared<SlopeLink>(h)},
        h->psi_dim(), "value_slope");
  }

  std::string name() const override { return name_; }
  std::size_t out_dim() const override { return dim_; }

  void value(double t, CSpan x, CSpan psi, MSpan out) const override {
    std::size_t off = 0;
    for (const auto& p : parts_) {
      p->value(t, x, psi, out.subspan(off, p->out_dim()));
      off += p->out_dim();
    }
  }

  void jacobian_psi(double t, CSpan x, CSpan psi, MSpan out) const override {
    std::size_t off = 0;
    for (const auto& p : parts_) {
      p->jacobian_psi(t, x, psi, out.subspan(off * psi_dim_, p->out_dim() * psi_dim_));
      off += p->out_dim();
    }
  }

 private:
  std::vector<std::shared_ptr<const Link>> parts_;
  std::size_t psi_dim_;
  std::string name_;
  std::size_t dim_ = 0;
};

class CallbackLink final : public Link {
 public:
  using Fn = std::function<void(double, CSpan, CSpan, MSpan)>;
  CallbackLink(std::string name, std::size_t out_dim, Fn value, Fn jacobian)
      : name_(std::move(name)), dim_(out_dim), value_(std::move(value)), jac_(std::move(jacobian)) {}
  std::string name() const override { return name_; }
  std::size_t out_dim() const override { return dim_; }
  void value(double t, CSpan x, CSpan psi, MSpan out) const override { value_(t, x, psi, out); }
  void jacobian_psi(double t, CSpan x, CSpan psi, MSpan out) const override { jac_(t, x, psi, out); }

 private:
  std::string name_;
  std::size_t dim_;
  Fn value_, jac_;
};

// ---------------------------------------------------------------------------
// Baseline hazards

enum class Clock { reset, forward };

inline std::string to_string(Clock c) { return c == Clock::reset ? "reset" : "forward"; }

inline Clock clock_from_string(const std::string& s) {
  if (s == "reset") return Clock::reset;
  if (s == "forward") return Clock::forward;
  throw ValidationError("unknown clock mode '" + s + "' (expected reset or forward)");
}

/// Parametric baseline hazard with parameters stored on the log scale.
/// When `trainable`, the live parameter values come from the model
/// parameters' hazard slot of the edge; otherwise `defaults()` are used.
class BaselineHazard {
 public:
  BaselineHazard(Eigen::VectorXd log_params, Clock clock, bool trainable)
      : defaults_(std::move(log_params)), clock_(clock), trainable_(trainable) {}
  virtual ~BaselineHazard() = default;

  virtual std::string name() const = 0;
  virtual double log_hazard(double u, CSpan params) const = 0;
  virtual void grad_log_hazard(double u, CSpan params, MSpan out) const = 0;

  std::size_t num_params() const { return static_cast<std::size_t>(defaults_.size()); }
  const Eigen::VectorXd& defaults() const { return defaults_; }
  Clock clock() const { return clock_; }
  bool trainable() const { return trainable_; }

  /// Argument of the baseline hazard at global time t after entry at t_entry.
  double clock_time(double t, double t_entry) const { return clock_ == Clock::reset ? t - t_entry : t; }

 private:
  Eigen::VectorXd defaults_;
  Clock clock_;
  bool trainable_;
};

/// lambda0(u) = rate; parameter log(rate).
class ExponentialHazard final : public BaselineHazard {
 public:
  ExponentialHazard(double rate, Clock clock = Clock::reset, bool trainable = false)
      : BaselineHazard(Eigen::VectorXd::Constant(1, std::log(check(rate))), clock, trainable) {}
  std::string name() const override { return "exponential"; }
  double log_hazard(double, CSpan p) const override { return p[0]; }
  void grad_log_hazard(double, CSpan, MSpan out) const override { out[0] = 1.0; }

 private:
  static double check(double rate) {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw ValidationError("exponential hazard: rate must be positive");
    return rate;
  }
};

/// lambda0(u) = (k / s) (u / s)^(k - 1); parameters (log k, log s).
/// Non-positive u is clamped to a tiny positive value so the hazard stays
/// positive and finite for k >= 1.
class WeibullHazard final : public BaselineHazard {
 public:
  WeibullHazard(double shape, double scale, Clock clock = Clock::reset, bool trainable = false)
      : BaselineHazard(make(shape, scale), clock, trainable) {}
  std::string name() const override { return "weibull"; }

  double log_hazard(double u, CSpan p) const override {
    double k = std::exp(p[0]);
    return p[0] - p[1] + (k - 1.0) * (std::log(clamp(u)) - p[1]);
  }

  void grad_log_hazard(double u, CSpan p, MSpan out) const override {
    double k = std::exp(p[0]);
    out[0] = 1.0 + k * (std::log(clamp(u)) - p[1]);
    out[1] = -k;
  }

 private:
  static double clamp(double u) { return std::max(u, 1e-12); }
  static Eigen::VectorXd make(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0)) throw ValidationError("weibull hazard: shape and scale must be positive");
    Eigen::VectorXd v(2);
    v << std::log(shape), std::log(scale);
    return v;
  }
};

/// Constant on [c_{j-1}, c_j); parameters are log levels (one more than cuts).
class PiecewiseConstantHazard final : public BaselineHazard {
 public:
  PiecewiseConstantHazard(std::vector<double> cuts, const std::vector<double>& levels,
                          Clock clock = Clock::reset, bool trainable = false)
      : BaselineHazard(make(cuts, levels), clock, trainable), cuts_(std::move(cuts)) {}
  std::string name() const override { return "piecewise_constant"; }
  const std::vector<double>& cuts() const { return cuts_; }

  double log_hazard(double u, CSpan p) const override { return p[segment(u)]; }

  void grad_log_hazard(double u, CSpan, MSpan out) const override {
    std::fill(out.begin(), out.begin() + static_cast<long>(cuts_.size() + 1), 0.0);
    out[segment(u)] = 1.0;
  }

 private:
  std::size_t segment(double u) const {
    return static_cast<std::size_t>(std::upper_bound(cuts_.begin(), cuts_.end(), u) - cuts_.begin());
  }
  static Eigen::VectorXd make(const std::vector<double>& cuts, const std::vector<double>& levels) {
    if (levels.size() != cuts.size() + 1)
      throw ValidationError("piecewise_constant hazard: need exactly one more level than cut points");
    if (!std::is_sorted(cuts.begin(), cuts.end()))
      throw ValidationError("piecewise_constant hazard: cut points must be increasing");
    Eigen::VectorXd v(static_cast<Eigen::Index>(levels.size()));
    for (std::size_t j = 0; j < levels.size(); ++j) {
      if (!(levels[j] > 0.0)) throw ValidationError("piecewise_constant hazard: levels must be positive");
      v[static_cast<Eigen::Index>(j)] = std::log(levels[j]);
    }
    return v;
  }
  std::vector<double> cuts_;
};

}  // namespace jmstate
