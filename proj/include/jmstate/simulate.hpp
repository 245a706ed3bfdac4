#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "jmstate/core.hpp"
#include "jmstate/dataset.hpp"
#include "jmstate/design.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/parallel.hpp"
#include "jmstate/params.hpp"
#include "jmstate/random.hpp"
#include "jmstate/stats.hpp"

namespace jmstate {

inline constexpr double kEventTolerance = 1e-9;
inline constexpr int kMaxBisection = 200;

/// Smallest t in [lower, cap] with Lambda(lower, t) = threshold, where
/// `inc(a, b)` is the intensity integral over [a, b]. Lambda is accumulated
/// over the bisection intervals so it is monotone by construction. Returns
/// +inf when Lambda(lower, cap) < threshold. An infinite cap is bracketed by
/// doubling from max(1, |lower|).
inline double invert_cumulative(const std::function<double(double, double)>& inc, double lower, double cap,
                                double threshold, double tol = kEventTolerance) {
  if (!(threshold >= 0.0)) throw NumericalError("invert_cumulative: threshold must be non-negative");
  if (cap <= lower) return kInf;
  auto step = [&](double a, double b) {
    double v = inc(a, b);
    if (!(v >= 0.0))
      throw NumericalError("internal: cumulative intensity decreases on [" + std::to_string(a) + ", " +
                           std::to_string(b) + "]");
    return v;
  };
  double lo = lower, hi, f_lo = 0.0;
  if (std::isfinite(cap)) {
    hi = cap;
    if (step(lo, hi) < threshold) return kInf;
  } else {
    double width = std::max(1.0, std::abs(lower));
    hi = lower + width;
    double f_hi = step(lo, hi);
    int it = 0;
    while (f_hi < threshold) {
      if (++it > kMaxBisection) return kInf;  // bounded total intensity: no event
      lo = hi;
      f_lo = f_hi;
      width *= 2.0;
      hi = lower + width;
      f_hi = f_lo + step(lo, hi);
    }
  }
  for (int it = 0; it < kMaxBisection && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = f_lo + step(lo, mid);
    if (f < threshold) {
      lo = mid;
      f_lo = f;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Draws E ~ Exp(1) and inverts the cumulative intensity at E.
inline double sample_event_time(const std::function<double(double, double)>& inc, double lower, double cap,
                                Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  return invert_cumulative(inc, lower, cap, expo(rng));
}

/// Next (time, state) after `current` under competing risks: one event time
/// per successor, the minimum wins, ties go to the lowest successor. The
/// time is +inf when nothing happens before `cap`.
inline Transition sample_next_transition(const JointModel& model, const ModelParams& p, CSpan x, CSpan psi,
                                         const Transition& current, double lower, double cap, Rng& rng) {
  Transition best{kInf, current.state};
  for (auto e : model.graph().out_edges(current.state)) {
    auto inc = [&](double a, double b) { return model.cumulative_intensity(p, e, current.time, a, b, x, psi); };
    double t = sample_event_time(inc, lower, cap, rng);
    if (t < best.time) best = {t, model.graph().edge(e).to};
  }
  return best;
}

/// P(next state = k' | a transition out of `state` at t), from log
/// intensities with log-sum-exp normalization. Indexed like out_edges.
inline std::vector<double> transition_probabilities(const JointModel& model, const ModelParams& p, State state,
                                                    double t, double t_entry, CSpan x, CSpan psi) {
  auto edges = model.graph().out_edges(state);
  std::vector<double> out(edges.size());
  if (edges.empty()) return out;
  double mx = -kInf;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    out[k] = model.log_intensity(p, edges[k], t, t_entry, x, psi);
    mx = std::max(mx, out[k]);
  }
  double z = 0.0;
  for (auto& v : out) z += (v = std::exp(v - mx));
  for (auto& v : out) v /= z;
  return out;
}

/// Semi-Markov trajectory from `initial`, censored at `censoring`. The first
/// simulated transition is conditioned on happening after `t_surv`.
inline Trajectory sample_trajectory(const JointModel& model, const ModelParams& p, CSpan x, CSpan psi,
                                    const Transition& initial, double censoring, double t_surv, Rng& rng,
                                    std::size_t max_transitions = 10000) {
  if (!model.graph().valid_state(initial.state))
    throw ValidationError("sample_trajectory: initial state " + std::to_string(initial.state) + " out of range");
  if (max_transitions == 0) throw ValidationError("sample_trajectory: max_transitions must be > 0");
  Trajectory traj{initial};
  while (!model.graph().is_absorbing(traj.back().state) && traj.back().time < censoring) {
    if (traj.size() > max_transitions)
      throw NumericalError("sample_trajectory: more than " + std::to_string(max_transitions) + " transitions");
    double lower = traj.back().time;
    if (traj.size() == 1) lower = std::max(lower, t_surv);
    auto next = sample_next_transition(model, p, x, psi, traj.back(), lower, censoring, rng);
    if (!std::isfinite(next.time)) break;
    traj.push_back(next);
  }
  // an event landing beyond C is never observed
  if (traj.size() > 1 && traj.back().time > censoring) traj.pop_back();
  return traj;
}

struct SimConfig {
  std::vector<double> censoring;  // empty: +inf for everyone
  std::vector<double> t_surv;     // empty: -inf for everyone
  std::uint64_t seed = 0;
  std::size_t max_transitions = 10000;
  std::size_t threads = 1;

  double censoring_of(std::size_t i) const { return censoring.empty() ? kInf : censoring.at(i); }
  double t_surv_of(std::size_t i) const { return t_surv.empty() ? -kInf : t_surv.at(i); }
};

/// One trajectory per row of `x` / `psi`, each on its own RNG stream.
inline std::vector<Trajectory> sample_trajectories(const JointModel& model, const ModelParams& p,
                                                   const Eigen::MatrixXd& x, const Eigen::MatrixXd& psi,
                                                   const std::vector<Transition>& initial, const SimConfig& cfg) {
  const std::size_t n = initial.size();
  if (static_cast<std::size_t>(x.rows()) != n || static_cast<std::size_t>(psi.rows()) != n)
    throw ValidationError("sample_trajectories: x, psi and initial pairs must have the same number of rows");
  if (!cfg.censoring.empty() && cfg.censoring.size() != n)
    throw ValidationError("sample_trajectories: censoring times must match individuals");
  if (!cfg.t_surv.empty() && cfg.t_surv.size() != n)
    throw ValidationError("sample_trajectories: survival conditions must match individuals");
  if (cfg.max_transitions == 0) throw ValidationError("sample_trajectories: max_transitions must be > 0");
  std::vector<Trajectory> out(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    Rng rng = make_rng(cfg.seed, i);
    Eigen::VectorXd xi = x.row(static_cast<Eigen::Index>(i)).transpose();
    Eigen::VectorXd pi = psi.row(static_cast<Eigen::Index>(i)).transpose();
    out[i] = sample_trajectory(model, p, detail::cspan(xi), detail::cspan(pi), initial[i], cfg.censoring_of(i),
                               cfg.t_surv_of(i), rng, cfg.max_transitions);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Measurement grids

enum class GridPolicy { random_far_apart, equispaced };

inline std::string to_string(GridPolicy g) { return g == GridPolicy::equispaced ? "equispaced" : "random_far_apart"; }

inline GridPolicy grid_policy_from_string(const std::string& s) {
  if (s == "random_far_apart") return GridPolicy::random_far_apart;
  if (s == "equispaced") return GridPolicy::equispaced;
  throw ValidationError("unknown grid policy '" + s + "' (expected random_far_apart or equispaced)");
}

/// m sorted times on [lo, hi] with consecutive gaps >= min_gap. Rejection
/// first; after `retries` failures the gaps are built directly: sorted
/// uniforms on [0, L - (m-1) min_gap] shifted by j * min_gap.
inline std::vector<double> random_far_apart(std::size_t m, double lo, double hi, double min_gap, Rng& rng,
                                            int retries = 1000) {
  const double len = hi - lo;
  if (!(len >= 0.0) || !(min_gap >= 0.0)) throw ValidationError("random_far_apart: invalid interval or gap");
  if (static_cast<double>(m) * min_gap > len)
    throw ValidationError("random_far_apart: " + std::to_string(m) + " points with gap " + std::to_string(min_gap) +
                          " do not fit in an interval of length " + std::to_string(len));
  std::vector<double> t(m);
  if (m == 0) return t;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < retries; ++r) {
    for (auto& v : t) v = lo + len * u(rng);
    std::sort(t.begin(), t.end());
    bool ok = true;
    for (std::size_t j = 1; j < m && ok; ++j) ok = t[j] - t[j - 1] >= min_gap;
    if (ok) return t;
  }
  const double slack = len - static_cast<double>(m - 1) * min_gap;
  for (auto& v : t) v = slack * u(rng);
  std::sort(t.begin(), t.end());
  for (std::size_t j = 0; j < m; ++j) t[j] += lo + static_cast<double>(j) * min_gap;
  return t;
}

inline std::vector<double> measurement_grid(GridPolicy policy, std::size_t m, double lo, double hi, double min_gap,
                                            Rng& rng) {
  if (policy == GridPolicy::random_far_apart) return random_far_apart(m, lo, hi, min_gap, rng);
  std::vector<double> t(m);
  for (std::size_t j = 0; j < m; ++j)
    t[j] = m == 1 ? lo : lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(m - 1);
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

struct CohortSpec {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t covariate_dim = 1;  // X ~ N(0, I_k)
  double horizon = 15.0;
  double min_gap = -1.0;  // negative: 0.7 * horizon / m
  GridPolicy grid = GridPolicy::random_far_apart;
  double censoring_lo = 10.0;  // C ~ U[lo, hi]; lo == hi is fixed; +inf allowed
  double censoring_hi = 15.0;
  State initial_state = 0;
  double initial_time = 0.0;
  std::uint64_t seed = 0;
  std::size_t max_transitions = 10000;
  std::size_t threads = 1;

  double gap() const { return min_gap >= 0.0 ? min_gap : (m == 0 ? 0.0 : 0.7 * horizon / static_cast<double>(m)); }
};

struct SimulatedCohort {
  Cohort cohort;
  RandomEffects b;      // latent truth
  Eigen::MatrixXd psi;  // n x psi_dim
};

/// Lower Cholesky factor of a covariance given by its precision repr.
inline Eigen::MatrixXd covariance_factor(const PrecisionRepr& r) {
  if (r.dim() == 0) return Eigen::MatrixXd(0, 0);
  Eigen::LLT<Eigen::MatrixXd> llt(r.covariance());
  if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
  return llt.matrixL();
}

inline SimulatedCohort generate_cohort(const JointModel& model, const ModelParams& p, const CohortSpec& spec) {
  model.check_params(p, spec.covariate_dim);
  if (!model.graph().valid_state(spec.initial_state))
    throw ValidationError("generate_cohort: initial state out of range");
  if (!(spec.censoring_lo <= spec.censoring_hi)) throw ValidationError("generate_cohort: censoring_lo > censoring_hi");
  if (spec.m > 0 && static_cast<double>(spec.m) * spec.gap() > spec.horizon)
    throw ValidationError("generate_cohort: grid of " + std::to_string(spec.m) + " points with gap " +
                          std::to_string(spec.gap()) + " is infeasible on horizon " + std::to_string(spec.horizon));
  const std::size_t q = model.q_dim(), m = model.psi_dim(), d = model.biomarker_dim(), k = spec.covariate_dim;
  const Eigen::MatrixXd lq = covariance_factor(p.q_repr);
  const Eigen::MatrixXd lr = covariance_factor(p.r_repr);

  SimulatedCohort out;
  out.cohort.covariate_dim = k;
  out.cohort.biomarker_dim = d;
  out.cohort.individuals.resize(spec.n);
  out.b = RandomEffects::Zero(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(q));
  out.psi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(m));

  parallel_for(spec.n, spec.threads, [&](std::size_t i) {
    Rng rng = make_rng(spec.seed, i);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto& rec = out.cohort.individuals[i];
    rec.id = std::to_string(i);
    rec.censoring_time = spec.censoring_lo == spec.censoring_hi
                             ? spec.censoring_lo
                             : spec.censoring_lo + (spec.censoring_hi - spec.censoring_lo) * u(rng);
    rec.covariates.resize(static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) rec.covariates[static_cast<Eigen::Index>(c)] = z(rng);
    Eigen::VectorXd eps(static_cast<Eigen::Index>(q));
    for (std::size_t j = 0; j < q; ++j) eps[static_cast<Eigen::Index>(j)] = z(rng);
    Eigen::VectorXd bi = q ? Eigen::VectorXd(lq * eps) : Eigen::VectorXd(0);
    out.b.row(static_cast<Eigen::Index>(i)) = bi.transpose();
    std::vector<double> psi(m);
    model.compute_psi(p, detail::cspan(rec.covariates), detail::cspan(bi), psi);
    for (std::size_t j = 0; j < m; ++j) out.psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = psi[j];

    rec.measurement_times = measurement_grid(spec.grid, spec.m, 0.0, spec.horizon, spec.gap(), rng);
    rec.measurements.resize(static_cast<Eigen::Index>(spec.m), static_cast<Eigen::Index>(d));
    std::vector<double> h(d);
    Eigen::VectorXd noise(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < spec.m; ++j) {
      const double t = rec.measurement_times[j];
      model.regression().value(t, psi, h);
      for (std::size_t c = 0; c < d; ++c) noise[static_cast<Eigen::Index>(c)] = z(rng);
      Eigen::VectorXd e = d ? Eigen::VectorXd(lr * noise) : Eigen::VectorXd(0);
      for (std::size_t c = 0; c < d; ++c)
        rec.measurements(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) =
            t > rec.censoring_time ? std::nan("") : h[c] + e[static_cast<Eigen::Index>(c)];
    }
    rec.trajectory = sample_trajectory(model, p, detail::cspan(rec.covariates), psi,
                                       {spec.initial_time, spec.initial_state}, rec.censoring_time, -kInf, rng,
                                       spec.max_transitions);
  });
  return out;
}

/// Transition counts per graph edge (edge index order).
inline std::vector<std::size_t> transition_counts(const TransitionGraph& graph, const Cohort& cohort) {
  std::vector<std::size_t> counts(graph.num_edges(), 0);
  for (const auto& r : cohort.individuals)
    for (std::size_t l = 1; l < r.trajectory.size(); ++l) {
      auto e = graph.edge_index(r.trajectory[l - 1].state, r.trajectory[l].state);
      if (!e) throw ValidationError("transition_counts: pair is not a graph edge");
      ++counts[*e];
    }
  return counts;
}

// ---------------------------------------------------------------------------
// Conditioning diagnostic

struct ConditioningDiagnostic {
  stats::TestResult time_test;   // two-sample KS on finite first-exit times
  stats::TestResult state_test;  // chi-square on first destination (or none)
  std::size_t draws = 0;
  std::size_t rejection_attempts = 0;
  bool passed(double alpha = 0.01) const { return time_test.p_value >= alpha && state_test.p_value >= alpha; }
};

/// Compares the first transition after `initial` drawn with the survival
/// condition t_surv against plain draws kept only when T1 >= t_surv.
inline ConditioningDiagnostic conditioned_equals_rejection(const JointModel& model, const ModelParams& p, CSpan x,
                                                           CSpan psi, const Transition& initial, double t_surv,
                                                           std::size_t n_draws, std::uint64_t seed,
                                                           double censoring = kInf) {
  if (n_draws == 0) throw ValidationError("conditioned_equals_rejection: n_draws must be > 0");
  const std::size_t p_states = model.graph().num_states();
  std::vector<double> t_cond, t_rej, s_cond(p_states + 1, 0.0), s_rej(p_states + 1, 0.0);
  Rng rc = make_rng(seed, 0), rr = make_rng(seed, 1);
  const double lower = std::max(initial.time, t_surv);
  auto record = [&](const Transition& tr, std::vector<double>& times, std::vector<double>& states) {
    if (std::isfinite(tr.time)) {
      times.push_back(tr.time);
      states[tr.state] += 1.0;
    } else {
      states[p_states] += 1.0;
    }
  };
  for (std::size_t k = 0; k < n_draws; ++k)
    record(sample_next_transition(model, p, x, psi, initial, lower, censoring, rc), t_cond, s_cond);
  ConditioningDiagnostic out;
  out.draws = n_draws;
  const std::size_t max_attempts = 10000 * n_draws;
  std::size_t kept = 0;
  while (kept < n_draws) {
    if (++out.rejection_attempts > max_attempts)
      throw NumericalError("conditioned_equals_rejection: survival condition is too unlikely for rejection");
    auto tr = sample_next_transition(model, p, x, psi, initial, initial.time, censoring, rr);
    if (tr.time < t_surv) continue;
    record(tr, t_rej, s_rej);
    ++kept;
  }
  out.time_test = t_cond.empty() || t_rej.empty() ? stats::TestResult{} : stats::ks_two_sample(t_cond, t_rej);
  out.state_test = stats::chi2_homogeneity(s_cond, s_rej);
  return out;
}

}  // namespace jmstate
