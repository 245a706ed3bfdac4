#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jmstate/parallel.hpp"
#include "jmstate/sampler.hpp"
#include "jmstate/simulate.hpp"

namespace jmstate {

// ---------------------------------------------------------------------------
// Truncation

/// History observed up to t: measurements with t_ij <= t, pairs with
/// T_il <= t, censoring at min(C, t).
inline IndividualRecord truncate(const IndividualRecord& r, double t) {
  if (r.trajectory.empty()) throw ValidationError("truncate: individual " + r.id + " has no initial state");
  if (std::isnan(t) || t < r.trajectory.front().time)
    throw ValidationError("truncate: time " + std::to_string(t) + " is before the initial time of individual " +
                          r.id);
  IndividualRecord out;
  out.id = r.id;
  out.covariates = r.covariates;
  out.censoring_time = std::min(r.censoring_time, t);
  std::vector<Eigen::Index> rows;
  for (std::size_t j = 0; j < r.measurement_times.size(); ++j)
    if (r.measurement_times[j] <= t) {
      out.measurement_times.push_back(r.measurement_times[j]);
      rows.push_back(static_cast<Eigen::Index>(j));
    }
  out.measurements.resize(static_cast<Eigen::Index>(rows.size()), r.measurements.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.measurements.row(static_cast<Eigen::Index>(k)) = r.measurements.row(rows[k]);
  for (const auto& pr : r.trajectory)
    if (pr.time <= t) out.trajectory.push_back(pr);
  return out;
}

inline Cohort truncate(const Cohort& c, double t) {
  Cohort out;
  out.covariate_dim = c.covariate_dim;
  out.biomarker_dim = c.biomarker_dim;
  out.individuals.reserve(c.size());
  for (const auto& r : c.individuals) out.individuals.push_back(truncate(r, t));
  return out;
}

/// Posterior draws of b for every individual of an (already truncated)
/// cohort: n_draws x q per individual, gathered snapshot by snapshot across
/// chains after warmup.
inline std::vector<Eigen::MatrixXd> posterior_condition(const JointModel& model, const ModelParams& p,
                                                        const Cohort& cohort, const SamplerConfig& scfg,
                                                        std::size_t n_draws, std::size_t thin) {
  if (n_draws == 0) throw ValidationError("posterior_condition: n_draws must be > 0");
  if (thin == 0) throw ValidationError("posterior_condition: thin must be >= 1");
  const auto q = static_cast<Eigen::Index>(model.q_dim());
  std::vector<Eigen::MatrixXd> out(cohort.size(), Eigen::MatrixXd(static_cast<Eigen::Index>(n_draws), q));
  if (cohort.size() == 0) return out;
  MetropolisSampler sampler(model, cohort, p, scfg);
  sampler.warmup();
  const std::size_t per_step = sampler.n_chains();
  const std::size_t steps = (n_draws + per_step - 1) / per_step * thin;
  auto snaps = sampler.run(steps, thin);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    std::size_t k = 0;
    for (const auto& snap : snaps)
      for (const auto& chain : snap) {
        if (k == n_draws) break;
        out[i].row(static_cast<Eigen::Index>(k++)) = chain.row(static_cast<Eigen::Index>(i));
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stopping rules and functionals

using StopIndex = std::optional<std::size_t>;

/// tau: index at which the predicted event is realized; kappa: index from
/// which it is impossible. Both must be prefix-monotone.
struct StoppingSpec {
  std::function<StopIndex(const Trajectory&)> tau;
  std::function<StopIndex(const Trajectory&)> kappa;
};

struct Functional {
  std::string name;
  StoppingSpec stop;
  std::function<double(const Trajectory&, StopIndex tau, StopIndex kappa)> xi;

  /// min(tau, kappa), if either has fired on `traj`.
  StopIndex stop_index(const Trajectory& traj) const {
    StopIndex a = stop.tau ? stop.tau(traj) : std::nullopt;
    StopIndex b = stop.kappa ? stop.kappa(traj) : std::nullopt;
    if (a && b) return std::min(*a, *b);
    return a ? a : b;
  }

  double operator()(const Trajectory& traj) const {
    StopIndex a = stop.tau ? stop.tau(traj) : std::nullopt;
    StopIndex b = stop.kappa ? stop.kappa(traj) : std::nullopt;
    return xi(traj, a, b);
  }
};

/// State occupied at u: the state of the last pair with T <= u (S_0 if u
/// is before T_0).
inline State state_at(const Trajectory& traj, double u) {
  if (traj.empty()) throw ValidationError("state_at: empty trajectory");
  State s = traj.front().state;
  for (const auto& pr : traj) {
    if (pr.time > u) break;
    s = pr.state;
  }
  return s;
}

inline Functional state_at_time(const TransitionGraph& graph, double u) {
  Functional f;
  f.name = "state_at_time";
  f.stop.tau = [graph, u](const Trajectory& traj) -> StopIndex {
    for (std::size_t l = 0; l < traj.size(); ++l)
      if (traj[l].time >= u || graph.is_absorbing(traj[l].state)) return l;
    return std::nullopt;
  };
  f.xi = [u](const Trajectory& traj, StopIndex tau, StopIndex) {
    if (!tau) return static_cast<double>(state_at(traj, u));
    Trajectory prefix(traj.begin(), traj.begin() + static_cast<long>(*tau) + 1);
    return static_cast<double>(state_at(prefix, u));
  };
  return f;
}

inline Functional hitting_time(const TransitionGraph& graph, std::vector<State> target) {
  if (target.empty()) throw ValidationError("hitting_time: target set is empty");
  for (auto s : target)
    if (!graph.valid_state(s)) throw ValidationError("hitting_time: state " + std::to_string(s) + " out of range");
  std::vector<char> in(graph.num_states(), 0), can(graph.num_states(), 0);
  for (auto s : target) in[s] = 1;
  for (State k = 0; k < graph.num_states(); ++k) can[k] = graph.reaches(k, target) ? 1 : 0;
  Functional f;
  f.name = "hitting_time";
  f.stop.tau = [in](const Trajectory& traj) -> StopIndex {
    for (std::size_t l = 0; l < traj.size(); ++l)
      if (in[traj[l].state]) return l;
    return std::nullopt;
  };
  f.stop.kappa = [can](const Trajectory& traj) -> StopIndex {
    for (std::size_t l = 0; l < traj.size(); ++l)
      if (!can[traj[l].state]) return l;
    return std::nullopt;
  };
  f.xi = [](const Trajectory& traj, StopIndex tau, StopIndex kappa) {
    if (tau && (!kappa || *tau <= *kappa)) return traj[*tau].time;
    return kInf;
  };
  return f;
}

// ---------------------------------------------------------------------------
// Prediction

struct PredictConfig {
  SamplerConfig sampler;  // warmup 500 sweeps
  std::size_t n_draws = 100;
  std::size_t thin = 5;
  std::size_t max_transitions = 10000;
  std::uint64_t seed = 0;  // continuation streams; the sampler keeps its own seed
  std::size_t threads = 1;

  void validate() const {
    sampler.validate();
    if (n_draws == 0) throw ValidationError("predict: n_draws must be > 0");
    if (thin == 0) throw ValidationError("predict: thin must be >= 1");
    if (max_transitions == 0) throw ValidationError("predict: max_transitions must be > 0");
  }
};

/// Empirical law of xi for one individual. Draws stopped by the transition
/// guard before xi was determined are counted in `horizon_censored`, not in
/// `values`.
struct PredictionResult {
  std::string id;
  double truncation = 0.0;
  std::vector<double> values;
  std::size_t draws = 0;
  std::size_t horizon_censored = 0;

  /// (outcome, weight) sorted by outcome; weights sum to 1.
  std::vector<std::pair<double, double>> distribution() const {
    std::map<double, std::size_t> counts;
    for (double v : values) ++counts[v];
    std::vector<std::pair<double, double>> out;
    for (const auto& [v, c] : counts)
      out.emplace_back(v, static_cast<double>(c) / static_cast<double>(values.size()));
    return out;
  }

  /// Most frequent outcome; ties go to the smallest. NaN if nothing was
  /// determined.
  double mode() const {
    double best = std::nan(""), w = -1.0;
    for (const auto& [v, p] : distribution())
      if (p > w) {
        best = v;
        w = p;
      }
    return best;
  }
};

namespace detail {

/// Extends `traj` until every functional has a stop index, the process can
/// no longer move, or the guard trips. Returns false if the guard tripped.
inline bool continue_until_stopped(const JointModel& model, const ModelParams& p, CSpan x, CSpan psi,
                                   Trajectory& traj, double t_cond, const std::vector<Functional>& fs,
                                   std::size_t max_transitions, Rng& rng) {
  auto all_stopped = [&] {
    for (const auto& f : fs)
      if (!f.stop_index(traj)) return false;
    return true;
  };
  std::size_t simulated = 0;
  while (!all_stopped()) {
    const auto& cur = traj.back();
    if (model.graph().is_absorbing(cur.state)) return true;
    if (simulated == max_transitions) return false;
    double lower = simulated == 0 ? std::max(cur.time, t_cond) : cur.time;
    auto next = sample_next_transition(model, p, x, psi, cur, lower, kInf, rng);
    if (!std::isfinite(next.time)) return true;  // no further transition ever happens
    traj.push_back(next);
    ++simulated;
  }
  return true;
}

}  // namespace detail

/// Monte-Carlo law of each functional for one individual whose history is
/// known up to `t`. `record` must already be truncated at t; `b_draws` holds
/// posterior draws of b (one per row). The continuation starts at the last
/// observed transition and is conditioned on no transition before the
/// record's censoring time.
inline std::vector<PredictionResult> predict_individual(const JointModel& model, const ModelParams& p,
                                                        const IndividualRecord& record, double t,
                                                        const std::vector<Functional>& fs,
                                                        const Eigen::MatrixXd& b_draws,
                                                        std::size_t max_transitions, Rng& rng) {
  if (record.trajectory.empty()) throw ValidationError("predict: individual " + record.id + " has no initial state");
  if (static_cast<std::size_t>(b_draws.cols()) != model.q_dim())
    throw ValidationError("predict: posterior draws have the wrong dimension");
  std::vector<PredictionResult> out(fs.size());
  for (auto& r : out) {
    r.id = record.id;
    r.truncation = t;
    r.draws = static_cast<std::size_t>(b_draws.rows());
  }
  const auto& x = record.covariates;
  const CSpan xs(x.data(), static_cast<std::size_t>(x.size()));
  std::vector<double> psi(model.psi_dim());
  for (Eigen::Index k = 0; k < b_draws.rows(); ++k) {
    Eigen::VectorXd b = b_draws.row(k).transpose();
    model.compute_psi(p, xs, CSpan(b.data(), static_cast<std::size_t>(b.size())), psi);
    Trajectory traj = record.trajectory;
    bool complete = detail::continue_until_stopped(model, p, xs, psi, traj, record.censoring_time, fs,
                                                   max_transitions, rng);
    for (std::size_t j = 0; j < fs.size(); ++j) {
      if (!complete && !fs[j].stop_index(traj)) {
        ++out[j].horizon_censored;
        continue;
      }
      out[j].values.push_back(fs[j](traj));
    }
  }
  return out;
}

/// Predictions for every individual of `cohort` from data up to `t`.
/// `functionals(i)` gives the functionals for individual i. Result is
/// indexed [individual][functional].
inline std::vector<std::vector<PredictionResult>> predict_cohort(
    const JointModel& model, const ModelParams& p, const Cohort& cohort, double t,
    const std::function<std::vector<Functional>(std::size_t)>& functionals, const PredictConfig& cfg) {
  cfg.validate();
  model.check_params(p, cohort.covariate_dim);
  Cohort trunc = truncate(cohort, t);
  auto draws = posterior_condition(model, p, trunc, cfg.sampler, cfg.n_draws, cfg.thin);
  std::vector<std::vector<PredictionResult>> out(cohort.size());
  const std::uint64_t master = split_seed(cfg.seed, 0x9E3D1C7ULL);
  parallel_for(cohort.size(), std::max<std::size_t>(1, cfg.threads), [&](std::size_t i) {
    Rng rng = make_rng(master, i);
    out[i] = predict_individual(model, p, trunc.individuals[i], t, functionals(i), draws[i], cfg.max_transitions,
                                rng);
  });
  return out;
}

/// Single-functional convenience form.
inline PredictionResult predict_functional(const JointModel& model, const ModelParams& p,
                                           const IndividualRecord& record, double t, const Functional& f,
                                           const PredictConfig& cfg) {
  Cohort c;
  c.covariate_dim = static_cast<std::size_t>(record.covariates.size());
  c.biomarker_dim = static_cast<std::size_t>(record.measurements.cols());
  c.individuals = {record};
  return predict_cohort(model, p, c, t, [&](std::size_t) { return std::vector<Functional>{f}; }, cfg)[0][0];
}

// ---------------------------------------------------------------------------
// Accuracy

/// Fraction of individuals whose predicted state equals the observed one.
inline double accuracy(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(truth.size()) + " individuals");
  if (predicted.empty()) throw ValidationError("accuracy: no individuals");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

struct AccuracyCurve {
  double truncation = 0.0;
  std::vector<double> horizons;
  std::vector<double> accuracy;
  std::vector<std::vector<char>> correct;  // [horizon][individual]
};

/// accuracy(u) for each u in `horizons`, comparing the modal predicted state
/// at u ^ C_i with the observed state at that time.
inline AccuracyCurve accuracy_curve(const JointModel& model, const ModelParams& p, const Cohort& cohort, double t,
                                    const std::vector<double>& horizons, const PredictConfig& cfg) {
  if (horizons.empty()) throw ValidationError("accuracy_curve: no horizons");
  auto preds = predict_cohort(
      model, p, cohort, t,
      [&](std::size_t i) {
        std::vector<Functional> fs;
        for (double u : horizons)
          fs.push_back(state_at_time(model.graph(), std::min(u, cohort.individuals[i].censoring_time)));
        return fs;
      },
      cfg);
  AccuracyCurve out;
  out.truncation = t;
  out.horizons = horizons;
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    std::vector<double> pred(cohort.size()), truth(cohort.size());
    std::vector<char> ok(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto& r = cohort.individuals[i];
      pred[i] = preds[i][h].mode();
      truth[i] = static_cast<double>(state_at(r.trajectory, std::min(horizons[h], r.censoring_time)));
      ok[i] = pred[i] == truth[i];
    }
    out.accuracy.push_back(accuracy(pred, truth));
    out.correct.push_back(std::move(ok));
  }
  return out;
}

}  // namespace jmstate
