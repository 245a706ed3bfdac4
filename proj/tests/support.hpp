#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "jmstate/dataset.hpp"
#include "jmstate/design.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/params.hpp"

namespace jmtest {

using namespace jmstate;

// Healthy(0) -> Sick(1), Healthy(0) -> Dead(2), Sick(1) -> Dead(2).
inline TransitionGraph three_state_graph() {
  return TransitionGraph(3, {{0, 1}, {0, 2}, {1, 2}}, {"healthy", "sick", "dead"});
}

// Illness-death graph with recovery and an absorbing state 3.
inline TransitionGraph four_state_graph() {
  return TransitionGraph(4, {{0, 1}, {0, 3}, {1, 2}, {1, 3}, {2, 1}, {2, 3}});
}

inline JointModel three_state_model(double tau = 6.0, bool trainable_hazards = false) {
  auto h = std::make_shared<PiecewiseAffine>(std::vector<double>{tau});
  ModelDesign d;
  d.effects = TransformStack::gamma_plus_b(3);
  d.regression = h;
  auto link = ConcatLink::value_slope(h);
  d.transitions[{0, 1}] = {std::make_shared<ExponentialHazard>(0.1, Clock::reset, trainable_hazards), link};
  d.transitions[{0, 2}] = {std::make_shared<ExponentialHazard>(0.01, Clock::reset, trainable_hazards), link};
  d.transitions[{1, 2}] = {std::make_shared<ExponentialHazard>(0.2, Clock::reset, trainable_hazards), link};
  return JointModel(three_state_graph(), std::move(d));
}

inline ModelParams three_state_true_params(const JointModel& model) {
  ModelParams p = model.default_params(CovMethod::diag, CovMethod::ball, 1);
  p.gamma = Eigen::Vector3d(2.5, -1.3, 0.2);
  p.q_repr = repr_from_cov(Eigen::Vector3d(0.6, 0.2, 0.3).asDiagonal().toDenseMatrix(), CovMethod::diag);
  p.r_repr = repr_from_cov(Eigen::MatrixXd::Constant(1, 1, 1.7), CovMethod::ball);
  p.alpha[0] = Eigen::Vector2d(-0.5, -3.0);
  p.alpha[1] = Eigen::Vector2d(-1.0, -5.0);
  p.alpha[2] = Eigen::Vector2d(0.0, -1.2);
  p.beta[0] = Eigen::VectorXd::Constant(1, -1.3);
  p.beta[1] = Eigen::VectorXd::Constant(1, -0.9);
  p.beta[2] = Eigen::VectorXd::Constant(1, -0.7);
  return p;
}

// Random but valid record on the three-state graph; not drawn from the model.
inline IndividualRecord random_three_state_record(std::mt19937_64& rng, std::size_t id) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  IndividualRecord r;
  r.id = std::to_string(id);
  r.covariates = Eigen::VectorXd::Constant(1, z(rng));
  r.censoring_time = 10.0 + 5.0 * u(rng);
  r.trajectory.push_back({0.0, 0});
  double kind = u(rng);
  // early transitions, as the reference hazards are high near t = 0
  if (kind < 0.55) {
    r.trajectory.push_back({0.05 + 1.5 * u(rng), 1});
    if (u(rng) < 0.8) r.trajectory.push_back({r.trajectory.back().time + 0.05 + 1.5 * u(rng), 2});
  } else if (kind < 0.9) {
    r.trajectory.push_back({0.05 + 1.5 * u(rng), 2});
  } else {
    r.censoring_time = 0.5 + u(rng);
  }
  for (int j = 0; j < 8; ++j) r.measurement_times.push_back(j * 1.9);
  r.measurements.resize(8, 1);
  for (int j = 0; j < 8; ++j) {
    double t = r.measurement_times[static_cast<std::size_t>(j)];
    r.measurements(j, 0) = t > r.censoring_time ? std::nan("") : 2.0 - 0.5 * t + z(rng);
  }
  return r;
}

inline Cohort random_three_state_cohort(std::mt19937_64& rng, std::size_t n) {
  Cohort c;
  c.covariate_dim = 1;
  c.biomarker_dim = 1;
  for (std::size_t i = 0; i < n; ++i) c.individuals.push_back(random_three_state_record(rng, i));
  return c;
}

// One absorbing state and no biomarker: the posterior of b is its prior.
inline JointModel pure_prior_model(std::size_t q) {
  ModelDesign d;
  d.effects = TransformStack::gamma_plus_b(q);
  d.regression = std::make_shared<NoRegression>(q);
  return JointModel(TransitionGraph(1, {}), std::move(d));
}

inline Cohort pure_prior_cohort(std::size_t n) {
  Cohort c;
  for (std::size_t i = 0; i < n; ++i) {
    IndividualRecord r;
    r.id = std::to_string(i);
    r.trajectory = {{0.0, 0}};
    r.measurements.resize(0, 0);
    c.individuals.push_back(r);
  }
  return c;
}

// Straight-line biomarker psi1 + psi2 t with no survival part.
inline JointModel linear_gaussian_model() {
  ModelDesign d;
  d.effects = TransformStack::gamma_plus_b(2);
  d.regression = std::make_shared<Polynomial>(1);
  return JointModel(TransitionGraph(1, {}), std::move(d));
}

inline RandomEffects random_effects(std::mt19937_64& rng, std::size_t n, std::size_t q, double sd = 0.5) {
  std::normal_distribution<double> z(0.0, sd);
  RandomEffects b(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = z(rng);
  return b;
}

}  // namespace jmtest
