#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "jmstate/core.hpp"
#include "jmstate/dataset.hpp"
#include "jmstate/design.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/parallel.hpp"
#include "jmstate/params.hpp"
#include "jmstate/random.hpp"
#include "jmstate/sampler.hpp"

namespace jmstate {

using WarningSink = std::function<void(const std::string&)>;

inline void default_warning(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

// ---------------------------------------------------------------------------
// Stopping rule on consecutive parameter differences

struct StopRule {
  double beta1 = 0.9;
  double beta2 = 0.9;
  double atol = 1e-6;
  double rtol = 0.1;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("stop rule: decay rates must lie in [0, 1)");
    if (!(atol >= 0.0) || !(rtol >= 0.0)) throw ValidationError("stop rule: tolerances must be >= 0");
  }
};

/// Running EMA moments of parameter differences.
class StopState {
 public:
  explicit StopState(StopRule rule = {}) : rule_(rule) { rule_.validate(); }

  /// Feeds theta^(t) - theta^(t-1); true iff every coordinate satisfies
  /// |m1_hat| <= atol + rtol * sqrt(m2_hat).
  bool update(const Eigen::VectorXd& diff) {
    if (t_ == 0) {
      m1_ = Eigen::VectorXd::Zero(diff.size());
      m2_ = Eigen::VectorXd::Zero(diff.size());
    } else if (diff.size() != m1_.size()) {
      throw ValidationError("stop rule: parameter dimension changed");
    }
    ++t_;
    m1_ = rule_.beta1 * m1_ + (1.0 - rule_.beta1) * diff;
    m2_ = rule_.beta2 * m2_ + (1.0 - rule_.beta2) * diff.cwiseAbs2();
    const double c1 = 1.0 - std::pow(rule_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(rule_.beta2, static_cast<double>(t_));
    m1_hat_ = m1_ / c1;
    m2_hat_ = m2_ / c2;
    for (Eigen::Index j = 0; j < diff.size(); ++j)
      if (!(std::abs(m1_hat_[j]) <= rule_.atol + rule_.rtol * std::sqrt(m2_hat_[j]))) return false;
    return true;
  }

  std::size_t steps() const { return t_; }
  const Eigen::VectorXd& m1_hat() const { return m1_hat_; }
  const Eigen::VectorXd& m2_hat() const { return m2_hat_; }
  const StopRule& rule() const { return rule_; }

 private:
  StopRule rule_;
  std::size_t t_ = 0;
  Eigen::VectorXd m1_, m2_, m1_hat_, m2_hat_;
};

/// Stateless form: `state` carries the moments between calls.
inline bool stop_check(StopState& state, const Eigen::VectorXd& prev_theta, const Eigen::VectorXd& theta) {
  return state.update(theta - prev_theta);
}

// ---------------------------------------------------------------------------
// Optimizers (gradient ascent)

enum class OptimizerKind { adam, sgd };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ValidationError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

struct FitConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // sgd step eta0 / (n+1)^power; needs 0.5 < power <= 1
  double sgd_power = 0.75;
  // optional multiplicative decay of the step, lr * decay^n
  double decay = 1.0;
  // optional clip on the gradient's Euclidean norm (0: off)
  double clip = 0.0;
  std::size_t batch_size = 0;  // K posterior draws per iteration; 0: n_chains
  std::size_t minibatch = 0;   // individuals per iteration; 0: full cohort
  std::size_t max_iterations = 500;
  std::size_t sweeps_per_iteration = 10;  // MH sweeps between gradient draws
  bool warmup = true;              // run the sampler warmup before the first iteration
  bool adapt_during_fit = true;    // keep Robbins-Monro running while theta moves
  std::size_t max_nonfinite = 25;  // consecutive non-finite gradients before aborting

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("fit: lr must be finite and >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ValidationError("fit: adam decay rates must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ValidationError("fit: adam epsilon must be > 0");
    if (optimizer == OptimizerKind::sgd && !(sgd_power > 0.5 && sgd_power <= 1.0))
      throw ValidationError("fit: sgd power must lie in (0.5, 1] so that sum eta = inf and sum eta^2 < inf");
    if (!(decay > 0.0 && decay <= 1.0)) throw ValidationError("fit: decay must lie in (0, 1]");
    if (!(clip >= 0.0)) throw ValidationError("fit: clip must be >= 0");
    if (sweeps_per_iteration == 0) throw ValidationError("fit: sweeps_per_iteration must be >= 1");
    if (max_nonfinite == 0) throw ValidationError("fit: max_nonfinite must be >= 1");
  }
};

/// Ascent step generator. `step(g, scale)` returns the increment of theta.
class Optimizer {
 public:
  Optimizer(const FitConfig& cfg, std::size_t dim, std::size_t n_individuals)
      : cfg_(cfg), m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))), v_(m_), n_(n_individuals) {}

  Eigen::VectorXd step(const Eigen::VectorXd& g, double scale) {
    ++t_;
    const double base = cfg_.lr * std::pow(cfg_.decay, static_cast<double>(t_ - 1)) * scale;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      // mean per-individual gradient so eta0 does not depend on n
      const double eta = base / std::pow(static_cast<double>(t_), cfg_.sgd_power);
      return eta * g / static_cast<double>(std::max<std::size_t>(1, n_));
    }
    m_ = cfg_.adam_beta1 * m_ + (1.0 - cfg_.adam_beta1) * g;
    v_ = cfg_.adam_beta2 * v_ + (1.0 - cfg_.adam_beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    return base * (m_ / c1).cwiseQuotient(((v_ / c2).cwiseSqrt().array() + cfg_.adam_eps).matrix());
  }

  std::size_t steps() const { return t_; }

 private:
  FitConfig cfg_;
  Eigen::VectorXd m_, v_;
  std::size_t n_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Stochastic-gradient fit

enum class StopReason { converged, max_iterations, callback };

inline std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::callback: return "callback";
  }
  return "?";
}

struct IterationInfo {
  std::size_t iteration = 0;  // 1-based
  const Eigen::VectorXd* theta = nullptr;
  const Eigen::VectorXd* gradient = nullptr;
  double loglik = 0.0;
  double acceptance = 0.0;
};

struct FitReport {
  ModelParams params;
  std::size_t iterations = 0;
  std::vector<Eigen::VectorXd> theta_history;  // after each iteration
  std::vector<double> loglik_history;          // complete-data estimate at the draws of each iteration
  StopReason stop_reason = StopReason::max_iterations;
  std::vector<std::string> names;
  std::size_t nonfinite_steps = 0;
};

struct FitHooks {
  WarningSink warn = default_warning;
  // return false to stop after this iteration
  std::function<bool(const IterationInfo&)> on_iteration;
};

namespace detail {

struct DrawGradient {
  Eigen::VectorXd grad;
  double loglik = 0.0;
};

/// Flat gradient and complete log-likelihood for one set of random effects.
inline DrawGradient draw_gradient(const JointModel& model, const ModelParams& p, const ParamLayout& layout,
                                  const Cohort& cohort, const RandomEffects& b,
                                  const std::vector<std::size_t>* subset) {
  auto g = ParamGradient::zeros_like(p);
  double ll = 0.0;
  if (subset) {
    for (auto i : *subset) ll += individual_loglik(model, p, cohort.individuals[i], row_span(b, i), &g).total();
    if (!subset->empty()) {
      const double w = static_cast<double>(cohort.size()) / static_cast<double>(subset->size());
      g *= w;
      ll *= w;
    }
  } else {
    for (std::size_t i = 0; i < cohort.size(); ++i)
      ll += individual_loglik(model, p, cohort.individuals[i], row_span(b, i), &g).total();
  }
  return {layout.flatten_gradient(g), ll};
}

}  // namespace detail

/// Stochastic gradient ascent on the marginal log-likelihood through the
/// Fisher identity, with warm MCMC chains that persist across iterations.
inline FitReport fit(const JointModel& model, const Cohort& cohort, const ModelParams& init, const FitConfig& cfg,
                     const StopRule& stop, const SamplerConfig& scfg, const FitHooks& hooks = {}) {
  cfg.validate();
  stop.validate();
  model.check_params(init, cohort.covariate_dim);
  const ParamLayout layout(init);
  const WarningSink warn = hooks.warn ? hooks.warn : WarningSink(default_warning);

  FitReport report;
  report.params = init;
  report.names = layout.names(model.graph());
  if (cfg.max_iterations == 0) {
    report.stop_reason = StopReason::max_iterations;
    return report;
  }

  MetropolisSampler sampler(model, cohort, init, scfg);
  if (cfg.warmup) sampler.warmup();
  const std::size_t n_chains = sampler.n_chains();
  const std::size_t k_draws = cfg.batch_size == 0 ? n_chains : cfg.batch_size;
  const std::size_t threads = std::max<std::size_t>(1, scfg.threads);

  Optimizer opt(cfg, layout.size(), cohort.size());
  StopState stop_state(stop);
  Eigen::VectorXd theta = layout.flatten(init);
  ModelParams current = init;
  Rng batch_rng = make_rng(scfg.seed, 0xB47C4ULL);
  std::vector<std::size_t> order = all_indices(cohort.size());
  const bool use_minibatch = cfg.minibatch > 0 && cfg.minibatch < cohort.size();

  double scale = 1.0;
  std::size_t bad_streak = 0;

  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    std::vector<std::size_t> subset;
    if (use_minibatch) {
      std::shuffle(order.begin(), order.end(), batch_rng);
      subset.assign(order.begin(), order.begin() + static_cast<long>(cfg.minibatch));
      std::sort(subset.begin(), subset.end());
    }

    // posterior draws under the current theta
    std::vector<RandomEffects> draws;
    draws.reserve(k_draws);
    sampler.reset_acceptance();
    while (draws.size() < k_draws) {
      for (std::size_t s = 0; s < cfg.sweeps_per_iteration; ++s) sampler.sweep(cfg.adapt_during_fit);
      for (std::size_t c = 0; c < n_chains && draws.size() < k_draws; ++c) draws.push_back(sampler.chain(c));
    }

    std::vector<detail::DrawGradient> parts(draws.size());
    parallel_for(draws.size(), threads, [&](std::size_t k) {
      parts[k] = detail::draw_gradient(model, current, layout, cohort, draws[k], use_minibatch ? &subset : nullptr);
    });
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size()));
    double ll = 0.0;
    for (const auto& part : parts) {
      grad += part.grad;
      ll += part.loglik;
    }
    grad /= static_cast<double>(draws.size());
    ll /= static_cast<double>(draws.size());

    Eigen::VectorXd prev = theta;
    const bool skipped = !grad.allFinite();
    if (skipped) {
      ++bad_streak;
      ++report.nonfinite_steps;
      warn("iteration " + std::to_string(it) + ": non-finite gradient, step skipped and halved");
      if (bad_streak >= cfg.max_nonfinite)
        throw NumericalError("fit: " + std::to_string(bad_streak) + " consecutive non-finite gradients");
      scale *= 0.5;
    } else {
      bad_streak = 0;
      if (cfg.clip > 0.0) {
        const double norm = grad.norm();
        if (norm > cfg.clip) grad *= cfg.clip / norm;
      }
      Eigen::VectorXd delta = opt.step(grad, scale);
      scale = 1.0;
      if (delta.allFinite()) {
        theta += delta;
        current = layout.unflatten(theta, current);
        sampler.set_params(current);
      }
    }

    report.iterations = it;
    report.theta_history.push_back(theta);
    report.loglik_history.push_back(ll);

    bool keep_going = true;
    if (hooks.on_iteration) {
      IterationInfo info{it, &theta, &grad, ll, sampler.acceptance_rate()};
      keep_going = hooks.on_iteration(info);
    }
    // a skipped step is not evidence of convergence
    if (!skipped && stop_check(stop_state, prev, theta)) {
      report.stop_reason = StopReason::converged;
      break;
    }
    if (!keep_going) {
      report.stop_reason = StopReason::callback;
      break;
    }
  }
  report.params = current;
  return report;
}

// ---------------------------------------------------------------------------
// Fisher information and standard errors

enum class FimMethod {
  mean_score,     // sum_i (posterior-mean score_i)(...)^T
  outer_product,  // (1/M) sum_m sum_i score_i^(m) score_i^(m)^T
};

inline std::string to_string(FimMethod m) { return m == FimMethod::mean_score ? "mean_score" : "outer_product"; }

inline FimMethod fim_method_from_string(const std::string& s) {
  if (s == "mean_score") return FimMethod::mean_score;
  if (s == "outer_product") return FimMethod::outer_product;
  throw ValidationError("unknown FIM method '" + s + "' (expected mean_score or outer_product)");
}

struct FIMEstimate {
  Eigen::MatrixXd matrix;
  std::size_t samples = 0;
  FimMethod method = FimMethod::mean_score;
  double asymmetry = 0.0;  // max |I - I^T| / max |I| before symmetrizing
};

/// Per-individual flat scores at one set of random effects (n x P).
inline Eigen::MatrixXd individual_scores(const JointModel& model, const ModelParams& p, const ParamLayout& layout,
                                         const Cohort& cohort, const RandomEffects& b) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(cohort.size()), static_cast<Eigen::Index>(layout.size()));
  auto g = ParamGradient::zeros_like(p);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    g.set_zero();
    individual_loglik(model, p, cohort.individuals[i], row_span(b, i), &g);
    out.row(static_cast<Eigen::Index>(i)) = layout.flatten_gradient(g).transpose();
  }
  return out;
}

/// Builds the information estimate from draws of per-individual scores.
inline FIMEstimate fim_from_scores(const std::vector<Eigen::MatrixXd>& scores, FimMethod method) {
  if (scores.empty()) throw ValidationError("compute_fim: no score draws");
  const auto p = scores.front().cols();
  FIMEstimate est;
  est.samples = scores.size();
  est.method = method;
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  if (method == FimMethod::outer_product) {
    for (const auto& s : scores) info.noalias() += s.transpose() * s;
    info /= static_cast<double>(scores.size());
  } else {
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(scores.front().rows(), p);
    for (const auto& s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    info.noalias() = mean.transpose() * mean;
  }
  const double scale = info.cwiseAbs().maxCoeff();
  est.asymmetry = scale > 0.0 ? (info - info.transpose()).cwiseAbs().maxCoeff() / scale : 0.0;
  est.matrix = 0.5 * (info + info.transpose());
  return est;
}

/// Fisher information at `params` from posterior draws of the random effects.
inline FIMEstimate compute_fim(const JointModel& model, const Cohort& cohort, const ModelParams& params,
                               const SamplerConfig& scfg, std::size_t n_samples,
                               FimMethod method = FimMethod::mean_score, std::size_t thin = 1) {
  if (n_samples == 0) throw ValidationError("compute_fim: n_samples must be >= 1");
  if (thin == 0) throw ValidationError("compute_fim: thin must be >= 1");
  model.check_params(params, cohort.covariate_dim);
  const ParamLayout layout(params);
  MetropolisSampler sampler(model, cohort, params, scfg);
  sampler.warmup();
  std::vector<RandomEffects> draws;
  draws.reserve(n_samples);
  while (draws.size() < n_samples) {
    for (std::size_t s = 0; s < thin; ++s) sampler.mh_step();
    for (std::size_t c = 0; c < sampler.n_chains() && draws.size() < n_samples; ++c) draws.push_back(sampler.chain(c));
  }
  std::vector<Eigen::MatrixXd> scores(draws.size());
  parallel_for(draws.size(), std::max<std::size_t>(1, scfg.threads),
               [&](std::size_t k) { scores[k] = individual_scores(model, params, layout, cohort, draws[k]); });
  return fim_from_scores(scores, method);
}

/// sqrt(diag(I^{-1})). Coordinates touching the numerical null space of a
/// singular I get +inf, with a warning.
inline Eigen::VectorXd standard_errors(const Eigen::MatrixXd& fim, const WarningSink& warn = default_warning) {
  if (fim.rows() != fim.cols()) throw ValidationError("stderr: information matrix must be square");
  const auto p = fim.rows();
  if (p == 0) return Eigen::VectorXd(0);
  if (!fim.allFinite()) throw NumericalError("stderr: information matrix is not finite");
  Eigen::LLT<Eigen::MatrixXd> llt(fim);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fim);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  const double tol = top * 1e-12 * static_cast<double>(p);
  if (llt.info() == Eigen::Success && ev.minCoeff() > tol) {
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
    return inv.diagonal().cwiseMax(0.0).cwiseSqrt();
  }
  const double cond = ev.minCoeff() > 0.0 ? top / ev.minCoeff() : kInf;
  if (warn) warn("information matrix is singular or ill-conditioned (condition number " + std::to_string(cond) + ")");
  Eigen::VectorXd out(p);
  Eigen::VectorXd null_weight = Eigen::VectorXd::Zero(p), var = Eigen::VectorXd::Zero(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const Eigen::VectorXd v = eig.eigenvectors().col(k);
    if (ev[k] <= tol)
      null_weight += v.cwiseAbs2();
    else
      var += v.cwiseAbs2() / ev[k];
  }
  for (Eigen::Index j = 0; j < p; ++j) out[j] = null_weight[j] > 1e-8 ? kInf : std::sqrt(var[j]);
  return out;
}

}  // namespace jmstate
