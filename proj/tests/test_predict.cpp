#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "jmstate/predict.hpp"
#include "support.hpp"

using namespace jmstate;

namespace {

JointModel single_edge_model(double rate) {
  ModelDesign d;
  d.effects = std::make_shared<NoEffects>();
  d.regression = std::make_shared<NoRegression>();
  d.transitions[{0, 1}] = {std::make_shared<ExponentialHazard>(rate), nullptr};
  return JointModel(TransitionGraph(2, {{0, 1}}), std::move(d));
}

// Straight-line biomarker whose current value drives a single 0 -> 1 hazard.
JointModel linked_line_model(double rate) {
  auto h = std::make_shared<Polynomial>(1);
  ModelDesign d;
  d.effects = TransformStack::gamma_plus_b(2);
  d.regression = h;
  d.transitions[{0, 1}] = {std::make_shared<ExponentialHazard>(rate), std::make_shared<ValueLink>(h)};
  return JointModel(TransitionGraph(2, {{0, 1}}), std::move(d));
}

IndividualRecord line_record(const std::vector<double>& times, const std::vector<double>& y, double censoring) {
  IndividualRecord r;
  r.id = "a";
  r.trajectory = {{0.0, 0}};
  r.censoring_time = censoring;
  r.measurement_times = times;
  r.measurements.resize(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t j = 0; j < y.size(); ++j) r.measurements(static_cast<Eigen::Index>(j), 0) = y[j];
  return r;
}

Cohort one(const IndividualRecord& r, std::size_t k, std::size_t d) {
  Cohort c;
  c.covariate_dim = k;
  c.biomarker_dim = d;
  c.individuals = {r};
  return c;
}

// mean and batch-means standard error of column j of posterior draws that
// were gathered chain-interleaved
std::pair<double, double> draw_mean(const Eigen::MatrixXd& draws, Eigen::Index j, int batches = 50) {
  const Eigen::Index n = draws.rows(), per = n / batches;
  double mean = draws.col(j).mean(), acc = 0.0;
  for (int b = 0; b < batches; ++b) {
    double m = draws.col(j).segment(b * per, per).mean();
    acc += (m - mean) * (m - mean);
  }
  return {mean, std::sqrt(acc / (batches - 1) / batches)};
}

Trajectory random_walk(const TransitionGraph& g, std::mt19937_64& rng, std::size_t max_len) {
  std::uniform_real_distribution<double> u(0.05, 2.0);
  std::uniform_int_distribution<State> pick(0, g.num_states() - 1);
  Trajectory t{{u(rng) - 1.0, pick(rng)}};
  while (t.size() < max_len && !g.is_absorbing(t.back().state)) {
    auto succ = g.successors(t.back().state);
    std::uniform_int_distribution<std::size_t> k(0, succ.size() - 1);
    t.push_back({t.back().time + u(rng), succ[k(rng)]});
  }
  return t;
}

}  // namespace

// ---- truncation and conditioning

TEST(Truncate, KeepsHistoryUpToT) {
  auto r = line_record({0.0, 1.0, 2.0, 3.0}, {1, 2, 3, 4}, 10.0);
  r.trajectory.push_back({2.5, 1});
  auto tr = truncate(r, 2.0);
  EXPECT_EQ(tr.measurement_times.size(), 3u);
  EXPECT_EQ(tr.measurements.rows(), 3);
  EXPECT_EQ(tr.measurements(2, 0), 3.0);
  EXPECT_EQ(tr.trajectory.size(), 1u);
  EXPECT_EQ(tr.censoring_time, 2.0);
  auto later = truncate(r, 12.0);
  EXPECT_EQ(later.censoring_time, 10.0);
  EXPECT_EQ(later.trajectory.size(), 2u);
  EXPECT_THROW(truncate(r, -0.5), ValidationError);
}

TEST(PosteriorCondition, NoDataBeforeTGivesPrior) {
  auto model = linked_line_model(0.05);
  auto p = model.default_params(CovMethod::full, CovMethod::full, 0);
  Eigen::Matrix2d q;
  q << 0.5, 0.1, 0.1, 0.3;
  p.q_repr = repr_from_cov(q, CovMethod::full);
  auto r = truncate(line_record({1.0, 2.0}, {5.0, 6.0}, 10.0), 0.0);
  ASSERT_EQ(r.measurement_times.size(), 0u);
  SamplerConfig sc;
  sc.seed = 5;
  auto draws = posterior_condition(model, p, one(r, 0, 1), sc, 100000, 1)[0];
  for (Eigen::Index j = 0; j < 2; ++j) {
    auto [m, se] = draw_mean(draws, j);
    EXPECT_LT(std::abs(m), 3.0 * se) << j;
  }
  Eigen::MatrixXd c = draws.rowwise() - draws.colwise().mean();
  Eigen::Matrix2d cov = c.transpose() * c / static_cast<double>(draws.rows() - 1);
  EXPECT_NEAR(cov(0, 0), 0.5, 0.03);
  EXPECT_NEAR(cov(1, 1), 0.3, 0.02);
  EXPECT_NEAR(cov(0, 1), 0.1, 0.02);
}

TEST(PosteriorCondition, LongitudinalOnlyMatchesConjugateOracle) {
  auto model = jmtest::linear_gaussian_model();
  auto p = model.default_params(CovMethod::full, CovMethod::full, 0);
  p.gamma = Eigen::Vector2d(1.0, -0.2);
  std::vector<double> t{0.0, 1.0, 2.0, 3.0, 6.0}, y{1.4, 0.6, 0.9, -0.1, 0.3};
  auto r = line_record(t, y, kInf);
  r.measurement_times.push_back(9.0);
  r.measurements.conservativeResize(6, 1);
  r.measurements(5, 0) = 3.0;  // dropped by truncation at 7
  auto tr = truncate(r, 7.0);
  // conjugate posterior of b with Q = I, sigma^2 = 1
  Eigen::MatrixXd z(5, 2);
  Eigen::VectorXd res(5);
  for (int j = 0; j < 5; ++j) {
    z(j, 0) = 1.0;
    z(j, 1) = t[static_cast<std::size_t>(j)];
    res[j] = y[static_cast<std::size_t>(j)] - (1.0 - 0.2 * t[static_cast<std::size_t>(j)]);
  }
  Eigen::Matrix2d sigma = (Eigen::Matrix2d::Identity() + z.transpose() * z).inverse();
  Eigen::Vector2d mu = sigma * z.transpose() * res;
  SamplerConfig sc;
  sc.seed = 6;
  auto draws = posterior_condition(model, p, one(tr, 0, 1), sc, 100000, 1)[0];
  for (Eigen::Index j = 0; j < 2; ++j) {
    auto [m, se] = draw_mean(draws, j);
    EXPECT_LT(std::abs(m - mu[j]), 3.0 * se) << j;
  }
}

TEST(PosteriorCondition, EventFreeSurvivalShiftsHazardLinkedEffectDown) {
  // hazard 0.05 exp(0.5 h); staying event-free to t = 10 is evidence for low h
  const double rate = 0.05, alpha = 0.5, horizon = 10.0;
  auto model = linked_line_model(rate);
  auto p = model.default_params(CovMethod::full, CovMethod::full, 0);
  p.gamma = Eigen::Vector2d(0.0, 0.1);
  p.alpha[0] = Eigen::VectorXd::Constant(1, alpha);
  std::vector<double> t{0.0, 1.0, 2.0, 3.0, 4.0}, y{0.2, -0.1, 0.5, 0.3, 0.6};
  auto r = line_record(t, y, horizon);

  Eigen::MatrixXd z(5, 2);
  Eigen::VectorXd res(5);
  for (int j = 0; j < 5; ++j) {
    z(j, 0) = 1.0;
    z(j, 1) = t[static_cast<std::size_t>(j)];
    res[j] = y[static_cast<std::size_t>(j)] - 0.1 * t[static_cast<std::size_t>(j)];
  }
  Eigen::Matrix2d sigma = (Eigen::Matrix2d::Identity() + z.transpose() * z).inverse();
  Eigen::Vector2d mu = sigma * z.transpose() * res;

  // importance sampling from the conjugate posterior with weight exp(-Lambda)
  Eigen::Matrix2d l = sigma.llt().matrixL();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nz(0.0, 1.0);
  const int n_is = 400000;
  double sw = 0.0, sw2 = 0.0;
  Eigen::Vector2d swb = Eigen::Vector2d::Zero(), swb2 = Eigen::Vector2d::Zero();
  for (int k = 0; k < n_is; ++k) {
    Eigen::Vector2d b = mu + l * Eigen::Vector2d(nz(rng), nz(rng));
    double a = alpha * b[0], s = alpha * (0.1 + b[1]);
    double lam = rate * std::exp(a) * (std::abs(s) < 1e-12 ? horizon : std::expm1(s * horizon) / s);
    double w = std::exp(-lam);
    sw += w;
    sw2 += w * w;
    swb += w * b;
    swb2 += w * b.cwiseAbs2();
  }
  const Eigen::Vector2d is_mean = swb / sw;
  const Eigen::Vector2d is_var = swb2 / sw - is_mean.cwiseAbs2();
  const double ess = sw * sw / sw2;
  // late-time hazard is driven by the slope effect
  ASSERT_LT(is_mean[1], mu[1] - 0.02);

  SamplerConfig sc;
  sc.seed = 7;
  auto draws = posterior_condition(model, p, one(r, 0, 1), sc, 100000, 1)[0];
  for (Eigen::Index j = 0; j < 2; ++j) {
    auto [m, se] = draw_mean(draws, j);
    EXPECT_LT(std::abs(m - is_mean[j]), 3.0 * std::hypot(se, std::sqrt(is_var[j] / ess))) << j;
    if (j == 1) EXPECT_LT(m, mu[1] - 10.0 * se);
  }
}

// ---- functionals

TEST(StateAtTime, Examples) {
  auto g = TransitionGraph(2, {{0, 1}});
  Trajectory tr{{0.0, 0}, {2.0, 1}};
  EXPECT_EQ(state_at_time(g, 1.0)(tr), 0.0);
  EXPECT_EQ(state_at_time(g, 10.0)(tr), 1.0);
  EXPECT_EQ(state_at_time(g, 2.0)(tr), 1.0);
  auto early = state_at_time(g, -3.0);
  EXPECT_EQ(early.stop_index(tr), std::optional<std::size_t>(0));
  EXPECT_EQ(early(tr), 0.0);
}

TEST(HittingTime, Examples) {
  auto g = jmtest::four_state_graph();
  auto f = hitting_time(g, {1});
  Trajectory to_death{{0.0, 0}, {3.0, 3}};
  EXPECT_EQ(f.stop.kappa(to_death), std::optional<std::size_t>(1));
  EXPECT_FALSE(f.stop.tau(to_death));
  EXPECT_TRUE(std::isinf(f(to_death)));
  Trajectory start_in{{0.5, 1}, {2.0, 2}};
  EXPECT_EQ(f(start_in), 0.5);
  std::vector<State> all{0, 1, 2, 3};
  EXPECT_EQ(hitting_time(g, all)(to_death), 0.0);
  Trajectory via{{0.0, 0}, {1.5, 1}, {2.0, 3}};
  EXPECT_EQ(f(via), 1.5);
  EXPECT_THROW(hitting_time(g, {}), ValidationError);
  EXPECT_THROW(hitting_time(g, {7}), ValidationError);
}

TEST(FunctionalProperty, PrefixMeasurability) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uu(-1.0, 12.0);
  for (const auto& g : {jmtest::three_state_graph(), jmtest::four_state_graph()}) {
    for (int rep = 0; rep < 1000; ++rep) {
      auto tr = random_walk(g, rng, 12);
      std::vector<Functional> fs{state_at_time(g, uu(rng))};
      std::uniform_int_distribution<State> pick(0, g.num_states() - 1);
      fs.push_back(hitting_time(g, {pick(rng)}));
      fs.push_back(hitting_time(g, {pick(rng), pick(rng)}));
      for (const auto& f : fs) {
        auto stop = f.stop_index(tr);
        if (!stop) continue;
        Trajectory prefix(tr.begin(), tr.begin() + static_cast<long>(*stop) + 1);
        double a = f(tr), b = f(prefix);
        EXPECT_TRUE(a == b || (std::isinf(a) && std::isinf(b))) << f.name;
        // once fired, extending the prefix never moves the index
        EXPECT_EQ(f.stop_index(prefix), stop);
      }
    }
  }
}

TEST(FunctionalProperty, AcyclicStopsWithinDepth) {
  auto g = jmtest::three_state_graph();  // depth 2
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> uu(0.0, 100.0);
  for (int rep = 0; rep < 1000; ++rep) {
    Trajectory tr{{0.0, 0}};
    tr = random_walk(g, rng, 10);
    for (State s = 0; s < 3; ++s) {
      auto h = hitting_time(g, {s});
      ASSERT_TRUE(h.stop_index(tr));
      EXPECT_LE(*h.stop_index(tr), 2u);
    }
    auto st = state_at_time(g, uu(rng));
    ASSERT_TRUE(st.stop_index(tr));
    EXPECT_LE(*st.stop_index(tr), 2u);
  }
}

// ---- prediction

TEST(Predict, SingleEdgeContinuationLaw) {
  const double rate = 0.3, t = 2.0, u = 5.0;
  auto model = single_edge_model(rate);
  auto p = model.default_params(CovMethod::full, CovMethod::full, 0);
  IndividualRecord r;
  r.id = "x";
  r.trajectory = {{0.0, 0}};
  r.censoring_time = 20.0;
  PredictConfig cfg;
  cfg.n_draws = 100000;
  cfg.thin = 1;
  cfg.sampler.warmup = 1;
  cfg.seed = 3;
  auto res = predict_functional(model, p, r, t, state_at_time(model.graph(), u), cfg);
  ASSERT_EQ(res.values.size(), 100000u);
  EXPECT_EQ(res.horizon_censored, 0u);
  double p1 = 0.0;
  for (double v : res.values) p1 += v == 1.0 ? 1.0 : 0.0;
  p1 /= 1e5;
  const double expect = 1.0 - std::exp(-rate * (u - t));
  EXPECT_LT(std::abs(p1 - expect), 3.0 * std::sqrt(expect * (1 - expect) / 1e5));
  double wsum = 0.0;
  for (auto& [v, w] : res.distribution()) wsum += w;
  EXPECT_NEAR(wsum, 1.0, 1e-12);
}

TEST(Predict, PointMassCases) {
  auto model = jmtest::three_state_model();
  auto p = jmtest::three_state_true_params(model);
  std::mt19937_64 rng(41);
  auto cohort = jmtest::random_three_state_cohort(rng, 6);
  PredictConfig cfg;
  cfg.n_draws = 20;
  cfg.sampler.warmup = 20;
  const double t = 3.0;
  auto preds = predict_cohort(
      model, p, cohort, t,
      [&](std::size_t) {
        return std::vector<Functional>{state_at_time(model.graph(), t), state_at_time(model.graph(), 40.0)};
      },
      cfg);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    auto tr = truncate(cohort.individuals[i], t);
    auto now = preds[i][0].distribution();
    ASSERT_EQ(now.size(), 1u);
    EXPECT_EQ(now[0].first, static_cast<double>(state_at(tr.trajectory, t)));
    if (model.graph().is_absorbing(tr.trajectory.back().state)) {
      auto later = preds[i][1].distribution();
      ASSERT_EQ(later.size(), 1u);
      EXPECT_EQ(later[0].first, static_cast<double>(tr.trajectory.back().state));
    }
  }
}

TEST(Predict, GuardedDrawsAreReportedAsHorizonCensored) {
  // 0 <-> 1 forever; hitting state 2 is impossible and kappa never fires
  ModelDesign d;
  d.effects = std::make_shared<NoEffects>();
  d.regression = std::make_shared<NoRegression>();
  d.transitions[{0, 1}] = {std::make_shared<ExponentialHazard>(5.0), nullptr};
  d.transitions[{1, 0}] = {std::make_shared<ExponentialHazard>(5.0), nullptr};
  d.transitions[{1, 2}] = {std::make_shared<ExponentialHazard>(1e-300), nullptr};
  JointModel model(TransitionGraph(3, {{0, 1}, {1, 0}, {1, 2}}), std::move(d));
  auto p = model.default_params(CovMethod::full, CovMethod::full, 0);
  IndividualRecord r;
  r.trajectory = {{0.0, 0}};
  PredictConfig cfg;
  cfg.n_draws = 10;
  cfg.sampler.warmup = 1;
  cfg.max_transitions = 50;
  auto res = predict_functional(model, p, r, 0.0, hitting_time(model.graph(), {2}), cfg);
  EXPECT_EQ(res.draws, 10u);
  EXPECT_EQ(res.horizon_censored + res.values.size(), 10u);
  EXPECT_GT(res.horizon_censored, 0u);
}

TEST(Predict, ModeBreaksTiesTowardLowerState) {
  PredictionResult r;
  r.values = {2.0, 1.0, 2.0, 1.0, 0.0};
  EXPECT_EQ(r.mode(), 1.0);
  r.values.clear();
  EXPECT_TRUE(std::isnan(r.mode()));
}

TEST(Predict, DeterministicAcrossThreadCounts) {
  auto model = jmtest::three_state_model();
  auto p = jmtest::three_state_true_params(model);
  std::mt19937_64 rng(42);
  auto cohort = jmtest::random_three_state_cohort(rng, 9);
  PredictConfig cfg;
  cfg.n_draws = 10;
  cfg.sampler.warmup = 10;
  auto fs = [&](std::size_t) { return std::vector<Functional>{hitting_time(model.graph(), {2})}; };
  auto a = predict_cohort(model, p, cohort, 1.0, fs, cfg);
  cfg.threads = 4;
  cfg.sampler.threads = 4;
  auto b = predict_cohort(model, p, cohort, 1.0, fs, cfg);
  for (std::size_t i = 0; i < cohort.size(); ++i) EXPECT_EQ(a[i][0].values, b[i][0].values);
}

// ---- accuracy

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy({0, 1, 2}, {0, 1, 2}), 1.0);
  EXPECT_EQ(accuracy({0, 1}, {0, 2}), 0.5);
  EXPECT_THROW(accuracy({0, 1}, {0}), ValidationError);
}

TEST(Accuracy, PerfectBeforeTruncation) {
  auto model = jmtest::three_state_model();
  auto p = jmtest::three_state_true_params(model);
  std::mt19937_64 rng(43);
  auto cohort = jmtest::random_three_state_cohort(rng, 25);
  PredictConfig cfg;
  cfg.n_draws = 10;
  cfg.sampler.warmup = 20;
  auto curve = accuracy_curve(model, p, cohort, 5.0, {0.0, 1.0, 3.0, 5.0, 8.0}, cfg);
  for (std::size_t h = 0; h < 4; ++h) EXPECT_EQ(curve.accuracy[h], 1.0) << h;
  EXPECT_GE(curve.accuracy[4], 0.0);
  EXPECT_LE(curve.accuracy[4], 1.0);
  EXPECT_THROW(accuracy_curve(model, p, cohort, 5.0, {}, cfg), ValidationError);
}
