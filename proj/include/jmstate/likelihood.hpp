#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jmstate/core.hpp"
#include "jmstate/dataset.hpp"
#include "jmstate/design.hpp"
#include "jmstate/params.hpp"

namespace jmstate {

/// Random effects of a cohort, one row per individual.
using RandomEffects = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LogLikTerms {
  double prior = 0.0;
  double longitudinal = 0.0;
  double semi_markov = 0.0;
  double total() const { return prior + longitudinal + semi_markov; }
};

namespace detail {

// Per-thread buffers so the hot path does not allocate.
struct LikScratch {
  std::vector<double> psi, grad_psi, h, hjac, resid, grad_resid, g, gjac, hz_grad;
  std::vector<double> acc_alpha, acc_psi, acc_hz;
  std::vector<double> fjac, gnodes;

  static LikScratch& get() {
    thread_local LikScratch s;
    return s;
  }
};

inline void ensure(std::vector<double>& v, std::size_t n) {
  if (v.size() < n) v.resize(n);
}

inline CSpan cspan(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace detail

/// Gaussian prior log-density of b under N(0, Q).
inline double prior_loglik(const ModelParams& p, CSpan b) { return p.q_repr.gaussian_log_density(b); }

/// Complete-data log-likelihood of one individual given its random effects.
/// When `grad` is non-null the parameter gradient is accumulated into it.
inline LogLikTerms individual_loglik(const JointModel& model, const ModelParams& p, const IndividualRecord& rec,
                                     CSpan b, ParamGradient* grad = nullptr) {
  auto& s = detail::LikScratch::get();
  const std::size_t m = model.psi_dim(), d = model.biomarker_dim();
  const CSpan x = detail::cspan(rec.covariates);
  const bool want = grad != nullptr;

  detail::ensure(s.psi, m);
  MSpan psi(s.psi.data(), m);
  model.compute_psi(p, x, b, psi);
  MSpan grad_psi;
  if (want) {
    detail::ensure(s.grad_psi, m);
    grad_psi = MSpan(s.grad_psi.data(), m);
    std::fill(grad_psi.begin(), grad_psi.end(), 0.0);
  }

  LogLikTerms out;

  // prior
  out.prior = p.q_repr.gaussian_log_density(b);
  if (want) p.q_repr.add_gaussian_gradient(b, {grad->q.data(), static_cast<std::size_t>(grad->q.size())});

  // longitudinal
  if (d > 0) {
    detail::ensure(s.h, d);
    detail::ensure(s.resid, d);
    detail::ensure(s.grad_resid, d);
    detail::ensure(s.hjac, d * m);
    MSpan h(s.h.data(), d), r(s.resid.data(), d), gr(s.grad_resid.data(), d), hjac(s.hjac.data(), d * m);
    const auto& reg = model.regression();
    for (std::size_t j = 0; j < rec.measurement_times.size(); ++j) {
      if (!rec.row_observed(j)) continue;
      const double t = rec.measurement_times[j];
      reg.value(t, psi, h);
      for (std::size_t c = 0; c < d; ++c)
        r[c] = rec.measurements(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) - h[c];
      out.longitudinal += p.r_repr.gaussian_log_density(r);
      if (want) {
        std::fill(gr.begin(), gr.end(), 0.0);
        p.r_repr.add_gaussian_gradient(r, {grad->r.data(), static_cast<std::size_t>(grad->r.size())}, gr);
        reg.jacobian_psi(t, psi, hjac);
        // dr/dpsi = -J_h
        for (std::size_t c = 0; c < d; ++c)
          for (std::size_t k = 0; k < m; ++k) grad_psi[k] -= gr[c] * hjac[c * m + k];
      }
    }
  }

  // semi-Markov
  const auto& graph = model.graph();
  const auto& traj = rec.trajectory;
  const auto& rule = model.quadrature();
  for (std::size_t l = 0; l < traj.size(); ++l) {
    const State from = traj[l].state;
    const bool last = l + 1 == traj.size();
    if (!last && !graph.has_edge(from, traj[l + 1].state))
      throw ValidationError("individual " + rec.id + ": transition " + to_string(Edge{from, traj[l + 1].state}) +
                            " is not a graph edge");
    if (graph.is_absorbing(from)) break;
    const double t0 = traj[l].time;
    const double t1 = last ? rec.censoring_time : traj[l + 1].time;
    if (last && !std::isfinite(t1)) {
      out.semi_markov = -kInf;
      break;
    }
    const Link* cached_link = nullptr;
    for (std::size_t e : graph.out_edges(from)) {
      const auto& spec = model.transition(e);
      const std::size_t a = spec.link->out_dim(), k = x.size();
      const std::size_t nh = spec.hazard->trainable() ? spec.hazard->num_params() : 0;
      const CSpan hp = model.hazard_params(p, e);
      detail::ensure(s.g, a);
      MSpan g(s.g.data(), a);

      // event term
      if (!last && graph.edge(e).to == traj[l + 1].state) {
        out.semi_markov += model.log_intensity(p, e, t1, t0, x, psi);
        if (want) {
          spec.link->value(t1, x, psi, g);
          for (std::size_t j = 0; j < a; ++j) grad->alpha[e][static_cast<Eigen::Index>(j)] += g[j];
          for (std::size_t c = 0; c < k; ++c) grad->beta[e][static_cast<Eigen::Index>(c)] += x[c];
          if (a > 0) {
            detail::ensure(s.gjac, a * m);
            MSpan gj(s.gjac.data(), a * m);
            spec.link->jacobian_psi(t1, x, psi, gj);
            for (std::size_t j = 0; j < a; ++j)
              for (std::size_t q = 0; q < m; ++q) grad_psi[q] += p.alpha[e][static_cast<Eigen::Index>(j)] * gj[j * m + q];
          }
          if (nh > 0) {
            detail::ensure(s.hz_grad, nh);
            MSpan hg(s.hz_grad.data(), nh);
            spec.hazard->grad_log_hazard(spec.hazard->clock_time(t1, t0), hp, hg);
            for (std::size_t j = 0; j < nh; ++j) grad->hazard[e][static_cast<Eigen::Index>(j)] += hg[j];
          }
        }
      }

      // cumulative term over the sojourn
      if (!(t1 > t0)) continue;
      const double half = 0.5 * (t1 - t0), mid = 0.5 * (t1 + t0);
      if (!want) {
        // link values at the nodes are shared by out-edges with the same link
        if (a > 0 && cached_link != spec.link.get()) {
          detail::ensure(s.gnodes, rule.n * a);
          for (std::size_t n = 0; n < rule.n; ++n)
            spec.link->value(mid + half * rule.nodes[n], x, psi, MSpan(s.gnodes.data() + n * a, a));
          cached_link = spec.link.get();
        }
        double bx = 0.0;
        for (std::size_t c = 0; c < k; ++c) bx += p.beta[e][static_cast<Eigen::Index>(c)] * x[c];
        const double* al = p.alpha[e].data();
        double lam = 0.0;
        for (std::size_t n = 0; n < rule.n; ++n) {
          const double w = mid + half * rule.nodes[n];
          double logl = bx + spec.hazard->log_hazard(spec.hazard->clock_time(w, t0), hp);
          const double* gn = s.gnodes.data() + n * a;
          for (std::size_t j = 0; j < a; ++j) logl += al[j] * gn[j];
          lam += rule.weights[n] * std::exp(logl);
        }
        out.semi_markov -= half * lam;
        continue;
      }
      detail::ensure(s.acc_alpha, a);
      detail::ensure(s.acc_psi, m);
      detail::ensure(s.acc_hz, nh);
      detail::ensure(s.gjac, a * m);
      detail::ensure(s.hz_grad, nh);
      std::fill_n(s.acc_alpha.begin(), a, 0.0);
      std::fill_n(s.acc_psi.begin(), m, 0.0);
      std::fill_n(s.acc_hz.begin(), nh, 0.0);
      MSpan gj(s.gjac.data(), a * m), hg(s.hz_grad.data(), nh);
      double lam = 0.0;
      for (std::size_t n = 0; n < rule.n; ++n) {
        const double w = mid + half * rule.nodes[n];
        const double u = spec.hazard->clock_time(w, t0);
        double logl = spec.hazard->log_hazard(u, hp);
        if (a > 0) {
          spec.link->value(w, x, psi, g);
          for (std::size_t j = 0; j < a; ++j) logl += p.alpha[e][static_cast<Eigen::Index>(j)] * g[j];
        }
        for (std::size_t c = 0; c < k; ++c) logl += p.beta[e][static_cast<Eigen::Index>(c)] * x[c];
        const double wl = rule.weights[n] * std::exp(logl);
        lam += wl;
        if (a > 0) {
          for (std::size_t j = 0; j < a; ++j) s.acc_alpha[j] += wl * g[j];
          spec.link->jacobian_psi(w, x, psi, gj);
          for (std::size_t j = 0; j < a; ++j) {
            const double aj = wl * p.alpha[e][static_cast<Eigen::Index>(j)];
            for (std::size_t q = 0; q < m; ++q) s.acc_psi[q] += aj * gj[j * m + q];
          }
        }
        if (nh > 0) {
          spec.hazard->grad_log_hazard(u, hp, hg);
          for (std::size_t j = 0; j < nh; ++j) s.acc_hz[j] += wl * hg[j];
        }
      }
      out.semi_markov -= half * lam;
      for (std::size_t j = 0; j < a; ++j) grad->alpha[e][static_cast<Eigen::Index>(j)] -= half * s.acc_alpha[j];
      for (std::size_t q = 0; q < m; ++q) grad_psi[q] -= half * s.acc_psi[q];
      for (std::size_t c = 0; c < k; ++c) grad->beta[e][static_cast<Eigen::Index>(c)] -= half * lam * x[c];
      for (std::size_t j = 0; j < nh; ++j) grad->hazard[e][static_cast<Eigen::Index>(j)] -= half * s.acc_hz[j];
    }
  }

  // chain rule through psi = f(gamma, x, b)
  if (want && m > 0) {
    const std::size_t ng = model.effects().gamma_dim();
    detail::ensure(s.fjac, m * ng);
    MSpan fj(s.fjac.data(), m * ng);
    model.effects().jacobian_gamma(detail::cspan(p.gamma), x, b, fj);
    for (std::size_t q = 0; q < m; ++q)
      for (std::size_t j = 0; j < ng; ++j) grad->gamma[static_cast<Eigen::Index>(j)] += grad_psi[q] * fj[q * ng + j];
  }
  return out;
}

inline double longitudinal_loglik(const JointModel& model, const ModelParams& p, const IndividualRecord& rec,
                                  CSpan b) {
  return individual_loglik(model, p, rec, b).longitudinal;
}

inline double semi_markov_loglik(const JointModel& model, const ModelParams& p, const IndividualRecord& rec,
                                 CSpan b) {
  return individual_loglik(model, p, rec, b).semi_markov;
}

inline CSpan row_span(const RandomEffects& b, std::size_t i) {
  return {b.data() + static_cast<Eigen::Index>(i) * b.cols(), static_cast<std::size_t>(b.cols())};
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

inline void check_effects_shape(const JointModel& model, const Cohort& cohort, const RandomEffects& b) {
  if (static_cast<std::size_t>(b.rows()) != cohort.size() || static_cast<std::size_t>(b.cols()) != model.q_dim())
    throw ValidationError("random effects must be " + std::to_string(cohort.size()) + " x " +
                          std::to_string(model.q_dim()));
}

/// Sum of complete-data log-likelihoods over every individual.
inline double complete_loglik(const JointModel& model, const ModelParams& p, const Cohort& cohort,
                              const RandomEffects& b) {
  check_effects_shape(model, cohort, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    acc += individual_loglik(model, p, cohort.individuals[i], row_span(b, i)).total();
  return acc;
}

/// Sum over the individuals in `subset`; an empty subset gives 0.
inline double complete_loglik(const JointModel& model, const ModelParams& p, const Cohort& cohort,
                              const RandomEffects& b, std::span<const std::size_t> subset) {
  check_effects_shape(model, cohort, b);
  double acc = 0.0;
  for (auto i : subset) acc += individual_loglik(model, p, cohort.individuals.at(i), row_span(b, i)).total();
  return acc;
}

/// First non-finite term over the cohort as "individual <id>: <term>", if any.
inline std::optional<std::string> find_nonfinite_term(const JointModel& model, const ModelParams& p,
                                                      const Cohort& cohort, const RandomEffects& b) {
  check_effects_shape(model, cohort, b);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& rec = cohort.individuals[i];
    auto t = individual_loglik(model, p, rec, row_span(b, i));
    const char* bad = !std::isfinite(t.prior)          ? "prior"
                      : !std::isfinite(t.longitudinal) ? "longitudinal"
                      : !std::isfinite(t.semi_markov)  ? "semi_markov"
                                                       : nullptr;
    if (bad) return "individual " + (rec.id.empty() ? std::to_string(i) : rec.id) + ": " + bad + " term is not finite";
  }
  return std::nullopt;
}

/// Structured gradient of complete_loglik over all individuals.
inline ParamGradient grad_complete_loglik_structured(const JointModel& model, const ModelParams& p,
                                                     const Cohort& cohort, const RandomEffects& b) {
  check_effects_shape(model, cohort, b);
  auto g = ParamGradient::zeros_like(p);
  for (std::size_t i = 0; i < cohort.size(); ++i) individual_loglik(model, p, cohort.individuals[i], row_span(b, i), &g);
  return g;
}

/// Minibatch version, scaled by n / |subset| so it is unbiased for the
/// full-cohort gradient. An empty subset gives zeros.
inline ParamGradient grad_complete_loglik_structured(const JointModel& model, const ModelParams& p,
                                                     const Cohort& cohort, const RandomEffects& b,
                                                     std::span<const std::size_t> subset) {
  check_effects_shape(model, cohort, b);
  auto g = ParamGradient::zeros_like(p);
  if (subset.empty()) return g;
  for (auto i : subset) individual_loglik(model, p, cohort.individuals.at(i), row_span(b, i), &g);
  g *= static_cast<double>(cohort.size()) / static_cast<double>(subset.size());
  return g;
}

/// Flattened gradient in ParamLayout order (tied slots summed).
inline Eigen::VectorXd grad_complete_loglik(const JointModel& model, const ModelParams& p, const Cohort& cohort,
                                            const RandomEffects& b) {
  return ParamLayout(p).flatten_gradient(grad_complete_loglik_structured(model, p, cohort, b));
}

inline Eigen::VectorXd grad_complete_loglik(const JointModel& model, const ModelParams& p, const Cohort& cohort,
                                            const RandomEffects& b, std::span<const std::size_t> subset) {
  return ParamLayout(p).flatten_gradient(grad_complete_loglik_structured(model, p, cohort, b, subset));
}

}  // namespace jmstate
