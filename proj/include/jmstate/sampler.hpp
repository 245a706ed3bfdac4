#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "jmstate/core.hpp"
#include "jmstate/dataset.hpp"
#include "jmstate/design.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/parallel.hpp"
#include "jmstate/params.hpp"
#include "jmstate/random.hpp"

namespace jmstate {

struct SamplerConfig {
  std::size_t n_chains = 5;
  std::size_t warmup = 500;
  double init_step = 0.1;
  double target_accept = 0.234;
  // Robbins-Monro gain c0 / (t+1)^kappa
  double rm_c0 = 1.0;
  double rm_kappa = 2.0 / 3.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (n_chains == 0) throw ValidationError("sampler: n_chains must be >= 1");
    if (!(init_step > 0.0) || !std::isfinite(init_step)) throw ValidationError("sampler: init_step must be > 0");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw ValidationError("sampler: target_accept must lie in (0, 1)");
    if (!(rm_c0 > 0.0)) throw ValidationError("sampler: rm_c0 must be > 0");
    if (!(rm_kappa > 0.5 && rm_kappa <= 1.0)) throw ValidationError("sampler: rm_kappa must lie in (0.5, 1]");
  }
};

/// One retained state: the random effects of every chain.
using Snapshot = std::vector<RandomEffects>;

/// Adaptive random-walk Metropolis-Hastings over the random effects of a
/// cohort. Every individual is updated independently given theta; each
/// chain owns its RNG stream. The model and cohort must outlive the sampler.
class MetropolisSampler {
 public:
  MetropolisSampler(const JointModel& model, const Cohort& cohort, const ModelParams& params, SamplerConfig cfg)
      : model_(&model), cohort_(&cohort), params_(params), cfg_(cfg) {
    cfg_.validate();
    const auto n = static_cast<Eigen::Index>(cohort.size());
    const auto q = static_cast<Eigen::Index>(model.q_dim());
    log_scale_ = Eigen::VectorXd::Constant(n, std::log(cfg_.init_step));
    accept_ = Eigen::VectorXd::Zero(n);
    chains_.resize(cfg_.n_chains);
    for (std::size_t c = 0; c < cfg_.n_chains; ++c) {
      auto& ch = chains_[c];
      ch.b = RandomEffects::Zero(n, q);
      ch.logd.assign(cohort.size(), 0.0);
      ch.accepted.assign(cohort.size(), 0);
      ch.rng = make_rng(cfg_.seed, c);
    }
    refresh();
  }

  const SamplerConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }
  std::size_t n_chains() const { return chains_.size(); }
  std::size_t n_individuals() const { return cohort_->size(); }

  const RandomEffects& chain(std::size_t c) const { return chains_.at(c).b; }
  Snapshot snapshot() const {
    Snapshot s;
    s.reserve(chains_.size());
    for (const auto& ch : chains_) s.push_back(ch.b);
    return s;
  }

  /// Replaces the state of a chain (for example a warm start) and refreshes its cache.
  void set_chain(std::size_t c, const RandomEffects& b) {
    check_effects_shape(*model_, *cohort_, b);
    chains_.at(c).b = b;
    refresh_chain(chains_[c]);
  }

  double log_density(std::size_t c, std::size_t i) const { return chains_.at(c).logd.at(i); }
  double step_scale(std::size_t i) const { return std::exp(log_scale_[static_cast<Eigen::Index>(i)]); }
  Eigen::VectorXd step_scales() const { return log_scale_.array().exp(); }
  std::size_t adaptation_count() const { return adapt_t_; }

  /// New theta snapshot; cached densities are recomputed.
  void set_params(const ModelParams& p) {
    params_ = p;
    refresh();
  }

  /// One sweep over every chain and individual. Returns the per-individual
  /// fraction of chains that accepted.
  Eigen::VectorXd mh_step() {
    const std::size_t n = cohort_->size();
    parallel_for(chains_.size(), cfg_.threads, [&](std::size_t c) { sweep_chain(chains_[c]); });
    Eigen::VectorXd rate = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (const auto& ch : chains_)
      for (std::size_t i = 0; i < n; ++i) rate[static_cast<Eigen::Index>(i)] += ch.accepted[i];
    rate /= static_cast<double>(chains_.size());
    accept_ += rate;
    ++n_sweeps_;
    return rate;
  }

  /// log s_i += eta_t (rate_i - target), eta_t = c0 / (t+1)^kappa.
  void adapt_step(const Eigen::VectorXd& rate) {
    if (rate.size() != log_scale_.size()) throw ValidationError("adapt_step: rate has wrong length");
    const double eta = cfg_.rm_c0 / std::pow(static_cast<double>(adapt_t_) + 1.0, cfg_.rm_kappa);
    log_scale_.array() += eta * (rate.array() - cfg_.target_accept);
    // keeps exp() finite and positive
    log_scale_ = log_scale_.cwiseMax(-30.0).cwiseMin(30.0);
    ++adapt_t_;
  }

  void sweep(bool adapt) {
    auto rate = mh_step();
    if (adapt) adapt_step(rate);
  }

  void warmup() { warmup(cfg_.warmup); }
  void warmup(std::size_t sweeps) {
    for (std::size_t s = 0; s < sweeps; ++s) sweep(true);
  }

  /// Post-warmup sampling with frozen step sizes; every thin-th state is kept.
  std::vector<Snapshot> run(std::size_t n_steps, std::size_t thin) {
    if (thin == 0) throw ValidationError("run: thin must be >= 1");
    std::vector<Snapshot> out;
    out.reserve(n_steps / thin);
    for (std::size_t s = 1; s <= n_steps; ++s) {
      mh_step();
      if (s % thin == 0) out.push_back(snapshot());
    }
    return out;
  }

  /// Mean acceptance over individuals and chains since the last reset.
  double acceptance_rate() const { return n_sweeps_ == 0 ? 0.0 : accept_.mean() / static_cast<double>(n_sweeps_); }
  Eigen::VectorXd individual_acceptance() const {
    return n_sweeps_ == 0 ? Eigen::VectorXd(accept_) : Eigen::VectorXd(accept_ / static_cast<double>(n_sweeps_));
  }
  void reset_acceptance() {
    accept_.setZero();
    n_sweeps_ = 0;
  }

  /// Largest |cached - recomputed| log-density over chains and individuals.
  double max_cache_error() const {
    double worst = 0.0;
    for (const auto& ch : chains_)
      for (std::size_t i = 0; i < cohort_->size(); ++i) {
        double fresh = target(ch.b, i);
        double cached = ch.logd[i];
        if (fresh == cached) continue;
        worst = std::max(worst, std::abs(fresh - cached));
      }
    return worst;
  }

 private:
  struct Chain {
    RandomEffects b;
    std::vector<double> logd;
    std::vector<std::uint8_t> accepted;
    Rng rng;
    std::normal_distribution<double> normal{0.0, 1.0};
    std::uniform_real_distribution<double> unif{0.0, 1.0};
    std::vector<double> proposal;
  };

  double target(const RandomEffects& b, std::size_t i) const {
    return individual_loglik(*model_, params_, cohort_->individuals[i], row_span(b, i)).total();
  }

  void refresh_chain(Chain& ch) const {
    for (std::size_t i = 0; i < cohort_->size(); ++i) ch.logd[i] = target(ch.b, i);
  }

  void refresh() {
    parallel_for(chains_.size(), cfg_.threads, [&](std::size_t c) { refresh_chain(chains_[c]); });
  }

  void sweep_chain(Chain& ch) const {
    const std::size_t q = model_->q_dim();
    ch.proposal.resize(q);
    for (std::size_t i = 0; i < cohort_->size(); ++i) {
      const double s = std::exp(log_scale_[static_cast<Eigen::Index>(i)]);
      const double* cur = ch.b.data() + static_cast<Eigen::Index>(i * q);
      for (std::size_t j = 0; j < q; ++j) ch.proposal[j] = cur[j] + s * ch.normal(ch.rng);
      const double u = ch.unif(ch.rng);
      const double prop = individual_loglik(*model_, params_, cohort_->individuals[i], ch.proposal).total();
      const double delta = prop - ch.logd[i];
      // NaN deltas and non-finite proposals are rejected
      const bool ok = std::isfinite(prop) && delta == delta && (delta >= 0.0 || std::log(u) < delta);
      ch.accepted[i] = ok ? 1 : 0;
      if (ok) {
        std::copy(ch.proposal.begin(), ch.proposal.end(), ch.b.data() + static_cast<Eigen::Index>(i * q));
        ch.logd[i] = prop;
      }
    }
  }

  const JointModel* model_;
  const Cohort* cohort_;
  ModelParams params_;
  SamplerConfig cfg_;
  std::vector<Chain> chains_;
  Eigen::VectorXd log_scale_;
  Eigen::VectorXd accept_;
  std::size_t n_sweeps_ = 0;
  std::size_t adapt_t_ = 0;
};

}  // namespace jmstate
