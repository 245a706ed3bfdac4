#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jmstate/core.hpp"
#include "jmstate/functions.hpp"
#include "jmstate/graph.hpp"
#include "jmstate/params.hpp"
#include "jmstate/quadrature.hpp"

namespace jmstate {

struct TransitionSpec {
  std::shared_ptr<const BaselineHazard> hazard;
  std::shared_ptr<const Link> link;
};

/// Model design: individual-effects map f, regression h, and one
/// (baseline hazard, link) pair per edge.
struct ModelDesign {
  std::shared_ptr<const EffectsMap> effects;
  std::shared_ptr<const Regression> regression;
  std::map<Edge, TransitionSpec> transitions;
  std::size_t quadrature_nodes = kDefaultQuadratureNodes;
};

/// A design bound to a transition graph. Per-edge specs are aligned with the
/// graph's edge indices.
class JointModel {
 public:
  JointModel(TransitionGraph graph, ModelDesign design)
      : graph_(std::move(graph)), design_(std::move(design)) {
    if (!design_.effects) throw ValidationError("design: missing individual-effects map");
    if (!design_.regression) throw ValidationError("design: missing regression function");
    if (design_.regression->psi_dim() != design_.effects->psi_dim())
      throw ValidationError("design: regression expects psi of dimension " +
                            std::to_string(design_.regression->psi_dim()) + " but effects produce " +
                            std::to_string(design_.effects->psi_dim()));
    if (design_.transitions.size() != graph_.num_edges())
      throw ValidationError("design: " + std::to_string(design_.transitions.size()) +
                            " transition specs for " + std::to_string(graph_.num_edges()) + " graph edges");
    for (const auto& e : graph_.edges()) {
      auto it = design_.transitions.find(e);
      if (it == design_.transitions.end())
        throw ValidationError("design: no transition spec for edge " + to_string(e));
      if (!it->second.hazard) throw ValidationError("design: edge " + to_string(e) + " has no baseline hazard");
      TransitionSpec spec = it->second;
      if (!spec.link) spec.link = std::make_shared<NullLink>();
      specs_.push_back(std::move(spec));
    }
    rule_ = &gauss_legendre(design_.quadrature_nodes);
  }

  const TransitionGraph& graph() const { return graph_; }
  const ModelDesign& design() const { return design_; }
  const EffectsMap& effects() const { return *design_.effects; }
  const Regression& regression() const { return *design_.regression; }
  const TransitionSpec& transition(std::size_t edge) const { return specs_.at(edge); }
  const QuadratureRule& quadrature() const { return *rule_; }

  std::size_t q_dim() const { return design_.effects->b_dim(); }
  std::size_t psi_dim() const { return design_.effects->psi_dim(); }
  std::size_t biomarker_dim() const { return design_.regression->out_dim(); }

  /// Zero gamma/alpha/beta, identity covariances, hazard defaults.
  ModelParams default_params(CovMethod q_method, CovMethod r_method, std::size_t covariate_dim) const {
    ModelParams p;
    p.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(effects().gamma_dim()));
    p.q_repr = PrecisionRepr::identity(q_dim(), q_method);
    p.r_repr = PrecisionRepr::identity(biomarker_dim(), r_method);
    for (const auto& s : specs_) {
      p.alpha.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.link->out_dim())));
      p.beta.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(covariate_dim)));
      p.hazard.push_back(s.hazard->trainable() ? s.hazard->defaults() : Eigen::VectorXd());
    }
    return p;
  }

  /// Throws ValidationError if `p` does not fit this design.
  void check_params(const ModelParams& p, std::size_t covariate_dim) const {
    auto fail = [](const std::string& m) { throw ValidationError("params: " + m); };
    if (static_cast<std::size_t>(p.gamma.size()) != effects().gamma_dim())
      fail("gamma has length " + std::to_string(p.gamma.size()) + ", expected " +
           std::to_string(effects().gamma_dim()));
    if (p.q_repr.dim() != q_dim()) fail("Q dimension " + std::to_string(p.q_repr.dim()) + " != " + std::to_string(q_dim()));
    if (p.r_repr.dim() != biomarker_dim())
      fail("R dimension " + std::to_string(p.r_repr.dim()) + " != " + std::to_string(biomarker_dim()));
    if (p.alpha.size() != specs_.size() || p.beta.size() != specs_.size() || p.hazard.size() != specs_.size())
      fail("per-edge parameters must cover all " + std::to_string(specs_.size()) + " edges");
    for (std::size_t e = 0; e < specs_.size(); ++e) {
      const auto name = to_string(graph_.edge(e));
      if (static_cast<std::size_t>(p.alpha[e].size()) != specs_[e].link->out_dim())
        fail("alpha[" + name + "] has length " + std::to_string(p.alpha[e].size()) + ", link output is " +
             std::to_string(specs_[e].link->out_dim()));
      if (static_cast<std::size_t>(p.beta[e].size()) != covariate_dim)
        fail("beta[" + name + "] has length " + std::to_string(p.beta[e].size()) + ", covariate dimension is " +
             std::to_string(covariate_dim));
      std::size_t nh = specs_[e].hazard->trainable() ? specs_[e].hazard->num_params() : 0;
      if (static_cast<std::size_t>(p.hazard[e].size()) != nh)
        fail("hazard[" + name + "] has " + std::to_string(p.hazard[e].size()) + " values, expected " +
             std::to_string(nh));
    }
    long k = effects().covariate_dim();
    if (k >= 0 && static_cast<std::size_t>(k) != covariate_dim)
      fail("effects map expects " + std::to_string(k) + " covariates, data has " + std::to_string(covariate_dim));
    p.validate();
  }

  /// Live hazard parameters of an edge.
  CSpan hazard_params(const ModelParams& p, std::size_t edge) const {
    const auto& h = *specs_[edge].hazard;
    return h.trainable() ? CSpan(p.hazard[edge].data(), static_cast<std::size_t>(p.hazard[edge].size()))
                         : CSpan(h.defaults().data(), h.num_params());
  }

  void compute_psi(const ModelParams& p, CSpan x, CSpan b, MSpan psi) const {
    effects().value(CSpan(p.gamma.data(), static_cast<std::size_t>(p.gamma.size())), x, b, psi);
  }

  std::vector<double> psi(const ModelParams& p, CSpan x, CSpan b) const {
    std::vector<double> out(psi_dim());
    compute_psi(p, x, b, out);
    return out;
  }

  /// log lambda^{edge}(t | t_entry) = log lambda0(clock) + alpha.g(t, X, psi) + beta.X
  double log_intensity(const ModelParams& p, std::size_t edge, double t, double t_entry, CSpan x,
                       CSpan psi) const {
    const auto& spec = specs_[edge];
    double out = spec.hazard->log_hazard(spec.hazard->clock_time(t, t_entry), hazard_params(p, edge));
    const auto a = spec.link->out_dim();
    if (a > 0) {
      double buf[32];
      std::vector<double> heap;
      MSpan g(buf, a);
      if (a > 32) {
        heap.resize(a);
        g = heap;
      }
      spec.link->value(t, x, psi, g);
      for (std::size_t j = 0; j < a; ++j) out += p.alpha[edge][static_cast<Eigen::Index>(j)] * g[j];
    }
    for (std::size_t c = 0; c < x.size(); ++c) out += p.beta[edge][static_cast<Eigen::Index>(c)] * x[c];
    return out;
  }

  /// int_{from}^{to} lambda^{edge}(w | t_entry) dw by Gauss-Legendre quadrature.
  double cumulative_intensity(const ModelParams& p, std::size_t edge, double t_entry, double from, double to,
                              CSpan x, CSpan psi) const {
    if (to < from) throw ValidationError("cumulative_intensity: upper bound below lower bound");
    if (to == from) return 0.0;
    return rule_->integrate(from, to, [&](double w) { return std::exp(log_intensity(p, edge, w, t_entry, x, psi)); });
  }

  double cumulative_intensity(const ModelParams& p, std::size_t edge, double t0, double t1, CSpan x,
                              CSpan psi) const {
    return cumulative_intensity(p, edge, t0, t0, t1, x, psi);
  }

 private:
  TransitionGraph graph_;
  ModelDesign design_;
  std::vector<TransitionSpec> specs_;
  const QuadratureRule* rule_ = nullptr;
};

// ---------------------------------------------------------------------------
// Finite-difference self-check of family derivatives.

struct DerivativeCheck {
  std::string family;
  double max_error = 0.0;  // max |analytic - fd| / max(1, |fd|)
  bool ok = true;
};

namespace detail {

template <class F>
double central_difference(F&& f, std::vector<double>& at, std::size_t j, double h) {
  double saved = at[j];
  at[j] = saved + h;
  double up = f(at);
  at[j] = saved - h;
  double down = f(at);
  at[j] = saved;
  return (up - down) / (2.0 * h);
}

inline double mixed_error(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
}

}  // namespace detail

/// Checks every family of `model` against central finite differences with
/// step `h`, at `trials` random inputs drawn around `params`.
inline std::vector<DerivativeCheck> check_derivatives(const JointModel& model, const ModelParams& params,
                                                      std::size_t covariate_dim, std::mt19937_64& rng,
                                                      std::size_t trials = 5, double h = 1e-5,
                                                      double tol = 1e-5) {
  std::normal_distribution<double> normal(0.0, 0.5);
  std::uniform_real_distribution<double> unif(0.0, 10.0);
  const auto& f = model.effects();
  const auto& reg = model.regression();
  const std::size_t q = f.b_dim(), m = f.psi_dim(), ng = f.gamma_dim(), d = reg.out_dim();

  DerivativeCheck effects{f.name()}, regression{reg.name()};
  std::map<std::string, DerivativeCheck> links, hazards;

  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::vector<double> x(covariate_dim), b(q), gamma(params.gamma.data(), params.gamma.data() + params.gamma.size());
    for (auto& v : x) v = normal(rng);
    for (auto& v : b) v = normal(rng);
    double t = unif(rng);

    std::vector<double> psi(m), jac(m * ng);
    f.value(gamma, x, b, psi);
    f.jacobian_gamma(gamma, x, b, jac);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < ng; ++j) {
        double fd = detail::central_difference(
            [&](const std::vector<double>& g) {
              std::vector<double> out(m);
              f.value(g, x, b, out);
              return out[i];
            },
            gamma, j, h);
        effects.max_error = std::max(effects.max_error, detail::mixed_error(jac[i * ng + j], fd));
      }

    std::vector<double> hjac(d * m);
    reg.jacobian_psi(t, psi, hjac);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double fd = detail::central_difference(
            [&](const std::vector<double>& ps) {
              std::vector<double> out(d);
              reg.value(t, ps, out);
              return out[i];
            },
            psi, j, h);
        regression.max_error = std::max(regression.max_error, detail::mixed_error(hjac[i * m + j], fd));
      }
    if (reg.has_time_derivative() && d > 0) {
      std::vector<double> dt(d), tt{t};
      reg.time_derivative(t, psi, dt);
      for (std::size_t i = 0; i < d; ++i) {
        double fd = detail::central_difference(
            [&](const std::vector<double>& tv) {
              std::vector<double> out(d);
              reg.value(tv[0], psi, out);
              return out[i];
            },
            tt, 0, h);
        regression.max_error = std::max(regression.max_error, detail::mixed_error(dt[i], fd));
      }
    }

    for (std::size_t e = 0; e < model.graph().num_edges(); ++e) {
      const auto& spec = model.transition(e);
      const std::size_t a = spec.link->out_dim();
      auto& lc = links.try_emplace(spec.link->name(), DerivativeCheck{spec.link->name()}).first->second;
      std::vector<double> ljac(a * m);
      spec.link->jacobian_psi(t, x, psi, ljac);
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double fd = detail::central_difference(
              [&](const std::vector<double>& ps) {
                std::vector<double> out(a);
                spec.link->value(t, x, ps, out);
                return out[i];
              },
              psi, j, h);
          lc.max_error = std::max(lc.max_error, detail::mixed_error(ljac[i * m + j], fd));
        }
      const auto& hz = *spec.hazard;
      auto& hc = hazards.try_emplace(hz.name(), DerivativeCheck{hz.name()}).first->second;
      std::vector<double> hp(hz.defaults().data(), hz.defaults().data() + hz.num_params()), hg(hz.num_params());
      double u = unif(rng) + 0.1;
      hz.grad_log_hazard(u, hp, hg);
      for (std::size_t j = 0; j < hp.size(); ++j) {
        double fd = detail::central_difference([&](const std::vector<double>& pv) { return hz.log_hazard(u, pv); },
                                               hp, j, h);
        hc.max_error = std::max(hc.max_error, detail::mixed_error(hg[j], fd));
      }
    }
  }

  std::vector<DerivativeCheck> out{effects, regression};
  for (auto& [k, v] : links) out.push_back(v);
  for (auto& [k, v] : hazards) out.push_back(v);
  for (auto& c : out) c.ok = std::isfinite(c.max_error) && c.max_error <= tol;
  return out;
}

}  // namespace jmstate
