#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmstate/design.hpp"
#include "jmstate/inference.hpp"
#include "jmstate/params.hpp"
#include "jmstate/predict.hpp"
#include "jmstate/simulate.hpp"

namespace jmstate::config {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Strict object reader: typed access with the field path in every error,
// and unknown keys rejected.

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ValidationError(path_ + ": expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_ + "." + key; }
  bool has(const std::string& key) const { return j_->contains(key) && !(*j_)[key].is_null(); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_->contains(key)) throw ValidationError(at(key) + ": missing");
    return (*j_)[key];
  }

  template <class T>
  T get(const std::string& key) {
    return convert<T>(raw(key), at(key));
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>((*j_)[key], at(key));
  }

  Reader child(const std::string& key) { return Reader(raw(key), at(key)); }

  /// Marks an optional key as known without reading it.
  void touch(const std::string& key) { used_.insert(key); }

  void finish() const {
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!used_.count(it.key())) throw ValidationError(at(it.key()) + ": unknown key");
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, double>) {
      if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf" || s == "+inf") return kInf;
        if (s == "-inf") return -kInf;
        throw ValidationError(where + ": expected a number");
      }
      if (!v.is_number()) throw ValidationError(where + ": expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ValidationError(where + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ValidationError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ValidationError(where + ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw ValidationError(where + ": expected an array of numbers");
      std::vector<double> out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<double>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Graph and design

inline Edge parse_edge(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned())
    throw ValidationError(where + ": expected an edge [from, to]");
  return {v[0].get<State>(), v[1].get<State>()};
}

inline TransitionGraph parse_graph(Reader r) {
  const json& states = r.raw("states");
  std::size_t n = 0;
  std::vector<std::string> labels;
  if (states.is_array()) {
    for (std::size_t i = 0; i < states.size(); ++i)
      labels.push_back(Reader::convert<std::string>(states[i], r.at("states") + "[" + std::to_string(i) + "]"));
    n = labels.size();
  } else {
    n = Reader::convert<std::size_t>(states, r.at("states"));
  }
  const json& edges = r.raw("edges");
  if (!edges.is_array()) throw ValidationError(r.at("edges") + ": expected an array");
  std::vector<Edge> es;
  for (std::size_t i = 0; i < edges.size(); ++i)
    es.push_back(parse_edge(edges[i], r.at("edges") + "[" + std::to_string(i) + "]"));
  r.finish();
  try {
    return TransitionGraph(n, es, labels);
  } catch (const ValidationError& e) {
    throw ValidationError(r.path() + ": " + e.what());
  }
}

inline std::shared_ptr<const EffectsMap> parse_effects(Reader r) {
  const auto family = r.get<std::string>("family");
  std::shared_ptr<const EffectsMap> out;
  if (family == "gamma_plus_b") {
    out = TransformStack::gamma_plus_b(r.get<std::size_t>("dim"));
  } else if (family == "transform_stack") {
    const json& ts = r.raw("transforms");
    if (!ts.is_array()) throw ValidationError(r.at("transforms") + ": expected an array");
    std::vector<Transform> v;
    for (std::size_t i = 0; i < ts.size(); ++i)
      v.push_back(transform_from_string(
          Reader::convert<std::string>(ts[i], r.at("transforms") + "[" + std::to_string(i) + "]")));
    out = std::make_shared<TransformStack>(v);
  } else if (family == "gamma_x_plus_b") {
    out = std::make_shared<GammaXPlusB>(r.get<std::size_t>("dim"), r.get<std::size_t>("covariates"));
  } else if (family == "none") {
    out = std::make_shared<NoEffects>();
  } else {
    throw ValidationError(r.at("family") + ": unknown effects family '" + family +
                          "' (expected gamma_plus_b, transform_stack, gamma_x_plus_b or none)");
  }
  r.finish();
  return out;
}

inline std::shared_ptr<const Regression> parse_regression(Reader r, std::size_t psi_dim) {
  const auto family = r.get<std::string>("family");
  std::shared_ptr<const Regression> out;
  if (family == "piecewise_affine") out = std::make_shared<PiecewiseAffine>(r.get<std::vector<double>>("breakpoints"));
  else if (family == "polynomial") out = std::make_shared<Polynomial>(r.get<std::size_t>("degree"));
  else if (family == "exp_decay") out = std::make_shared<ExponentialDecay>();
  else if (family == "tanh") out = std::make_shared<ScaledTanh>();
  else if (family == "none") out = std::make_shared<NoRegression>(psi_dim);
  else
    throw ValidationError(r.at("family") + ": unknown regression family '" + family +
                          "' (expected piecewise_affine, polynomial, exp_decay, tanh or none)");
  r.finish();
  return out;
}

inline std::shared_ptr<const Link> parse_link(Reader r, const std::shared_ptr<const Regression>& h) {
  const auto family = r.get<std::string>("family");
  std::shared_ptr<const Link> out;
  if (family == "none") out = std::make_shared<NullLink>();
  else if (family == "value") out = std::make_shared<ValueLink>(h);
  else if (family == "slope") out = std::make_shared<SlopeLink>(h);
  else if (family == "value_slope") out = ConcatLink::value_slope(h);
  else if (family == "cumulative")
    out = std::make_shared<CumulativeLink>(h, r.get<double>("lower", 0.0),
                                           r.get<std::size_t>("nodes", kDefaultQuadratureNodes));
  else
    throw ValidationError(r.at("family") + ": unknown link family '" + family +
                          "' (expected none, value, slope, value_slope or cumulative)");
  r.finish();
  return out;
}

inline std::shared_ptr<const BaselineHazard> parse_hazard(Reader r) {
  const auto family = r.get<std::string>("family");
  const Clock clock = clock_from_string(r.get<std::string>("clock", "reset"));
  const bool trainable = r.get<bool>("trainable", false);
  std::shared_ptr<const BaselineHazard> out;
  if (family == "exponential") {
    out = std::make_shared<ExponentialHazard>(r.get<double>("rate"), clock, trainable);
  } else if (family == "weibull") {
    out = std::make_shared<WeibullHazard>(r.get<double>("shape"), r.get<double>("scale"), clock, trainable);
  } else if (family == "piecewise_constant") {
    out = std::make_shared<PiecewiseConstantHazard>(r.get<std::vector<double>>("cuts"),
                                                    r.get<std::vector<double>>("levels"), clock, trainable);
  } else {
    throw ValidationError(r.at("family") + ": unknown hazard family '" + family +
                          "' (expected exponential, weibull or piecewise_constant)");
  }
  r.finish();
  return out;
}

inline JointModel parse_design(Reader r, const TransitionGraph& graph) {
  ModelDesign d;
  d.effects = parse_effects(r.child("effects"));
  d.regression = parse_regression(r.child("regression"), d.effects->psi_dim());
  d.quadrature_nodes = r.get<std::size_t>("quadrature_nodes", kDefaultQuadratureNodes);
  const json& ts = r.raw("transitions");
  if (!ts.is_array()) throw ValidationError(r.at("transitions") + ": expected an array");
  // one link object per family so edges can share cached link values
  std::map<std::string, std::shared_ptr<const Link>> links;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    Reader t(ts[i], r.at("transitions") + "[" + std::to_string(i) + "]");
    Edge e = parse_edge(t.raw("edge"), t.at("edge"));
    if (!graph.has_edge(e.from, e.to)) throw ValidationError(t.at("edge") + ": " + to_string(e) + " is not a graph edge");
    if (d.transitions.count(e)) throw ValidationError(t.at("edge") + ": duplicate transition " + to_string(e));
    TransitionSpec spec;
    spec.hazard = parse_hazard(t.child("hazard"));
    if (t.has("link")) {
      const std::string key = t.raw("link").dump();
      auto it = links.find(key);
      spec.link = it != links.end() ? it->second : (links[key] = parse_link(t.child("link"), d.regression));
    }
    t.finish();
    d.transitions[e] = spec;
  }
  r.finish();
  try {
    return JointModel(graph, std::move(d));
  } catch (const ValidationError& e) {
    throw ValidationError(r.path() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Parameters

inline Eigen::MatrixXd parse_matrix(const json& v, const std::string& where) {
  if (!v.is_array()) throw ValidationError(where + ": expected a matrix (array of rows)");
  const auto n = static_cast<Eigen::Index>(v.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = Reader::convert<std::vector<double>>(v[static_cast<std::size_t>(i)],
                                                    where + "[" + std::to_string(i) + "]");
    if (static_cast<Eigen::Index>(row.size()) != n) throw ValidationError(where + ": matrix must be square");
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

/// {"method": tag, "values": [...]} or {"method": tag, "covariance": [[...]]};
/// neither gives the identity. "values" wins when both are present.
inline PrecisionRepr parse_precision(Reader r, std::size_t dim, CovMethod fallback) {
  const CovMethod method = r.has("method") ? cov_method_from_string(r.get<std::string>("method")) : fallback;
  PrecisionRepr out = PrecisionRepr::identity(dim, method);
  if (r.has("values")) {
    try {
      out = PrecisionRepr(method, dim, to_vector(r.get<std::vector<double>>("values")));
    } catch (const ValidationError& e) {
      throw ValidationError(r.at("values") + ": " + e.what());
    }
    if (r.has("covariance")) r.raw("covariance");
  } else if (r.has("covariance")) {
    Eigen::MatrixXd c = parse_matrix(r.raw("covariance"), r.at("covariance"));
    if (static_cast<std::size_t>(c.rows()) != dim)
      throw ValidationError(r.at("covariance") + ": expected dimension " + std::to_string(dim));
    try {
      out = repr_from_cov(c, method);
    } catch (const std::exception& e) {
      throw ValidationError(r.at("covariance") + ": " + e.what());
    }
  }
  r.finish();
  return out;
}

inline ModelParams parse_params(const json& j, const std::string& path, const JointModel& model,
                                std::size_t covariate_dim) {
  Reader r(j, path);
  const auto& graph = model.graph();
  const CovMethod qm = r.has("Q") && r.raw("Q").is_object() && r.raw("Q").contains("method")
                           ? cov_method_from_string(Reader::convert<std::string>(r.raw("Q")["method"], r.at("Q.method")))
                           : CovMethod::full;
  const CovMethod rm = r.has("R") && r.raw("R").is_object() && r.raw("R").contains("method")
                           ? cov_method_from_string(Reader::convert<std::string>(r.raw("R")["method"], r.at("R.method")))
                           : CovMethod::full;
  ModelParams p = model.default_params(qm, rm, covariate_dim);
  if (r.has("gamma")) p.gamma = to_vector(r.get<std::vector<double>>("gamma"));
  if (r.has("Q")) p.q_repr = parse_precision(r.child("Q"), model.q_dim(), qm);
  if (r.has("R")) p.r_repr = parse_precision(r.child("R"), model.biomarker_dim(), rm);
  for (ParamGroup g : {ParamGroup::alpha, ParamGroup::beta, ParamGroup::hazard}) {
    const std::string key = to_string(g);
    if (!r.has(key)) {
      r.touch(key);
      continue;
    }
    Reader grp = r.child(key);
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
      const std::string name = to_string(graph.edge(e));
      if (grp.has(name)) p.group(g)[e] = to_vector(grp.get<std::vector<double>>(name));
    }
    grp.finish();
  }
  if (r.has("sharing")) {
    const json& sh = r.raw("sharing");
    if (!sh.is_array()) throw ValidationError(r.at("sharing") + ": expected an array of tie classes");
    for (std::size_t c = 0; c < sh.size(); ++c) {
      const std::string cw = r.at("sharing") + "[" + std::to_string(c) + "]";
      if (!sh[c].is_array()) throw ValidationError(cw + ": expected an array of slots");
      std::vector<Slot> cls;
      for (std::size_t s = 0; s < sh[c].size(); ++s) {
        Reader sr(sh[c][s], cw + "[" + std::to_string(s) + "]");
        Slot slot;
        slot.group = param_group_from_string(sr.get<std::string>("group"));
        Edge e = parse_edge(sr.raw("edge"), sr.at("edge"));
        auto idx = graph.edge_index(e.from, e.to);
        if (!idx) throw ValidationError(sr.at("edge") + ": " + to_string(e) + " is not a graph edge");
        slot.edge = *idx;
        sr.finish();
        cls.push_back(slot);
      }
      p.sharing.push_back(cls);
    }
  } else {
    r.touch("sharing");
  }
  r.touch("names");  // informational in written files
  r.touch("flat");
  r.finish();
  try {
    p.validate();
    model.check_params(p, covariate_dim);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return p;
}

inline json params_to_json(const JointModel& model, const ModelParams& p) {
  const auto& graph = model.graph();
  json j;
  j["gamma"] = to_std(p.gamma);
  auto prec = [](const PrecisionRepr& r) {
    json o;
    o["method"] = to_string(r.method());
    o["values"] = to_std(r.values());
    json cov = json::array();
    Eigen::MatrixXd c = r.covariance();
    for (Eigen::Index i = 0; i < c.rows(); ++i) cov.push_back(to_std(c.row(i).transpose()));
    o["covariance"] = cov;
    return o;
  };
  j["Q"] = prec(p.q_repr);
  j["R"] = prec(p.r_repr);
  for (ParamGroup g : {ParamGroup::alpha, ParamGroup::beta, ParamGroup::hazard}) {
    json o = json::object();
    for (std::size_t e = 0; e < graph.num_edges(); ++e)
      if (p.group(g)[e].size() > 0) o[to_string(graph.edge(e))] = to_std(p.group(g)[e]);
    j[to_string(g)] = o;
  }
  json sh = json::array();
  for (const auto& cls : p.sharing) {
    json c = json::array();
    for (const auto& s : cls)
      c.push_back({{"group", to_string(s.group)}, {"edge", {graph.edge(s.edge).from, graph.edge(s.edge).to}}});
    sh.push_back(c);
  }
  j["sharing"] = sh;
  ParamLayout layout(p);
  j["names"] = layout.names(graph);
  j["flat"] = to_std(layout.flatten(p));
  return j;
}

// ---------------------------------------------------------------------------
// Run configuration

struct FimSettings {
  std::size_t n_samples = 1000;
  std::size_t thin = 1;
  FimMethod method = FimMethod::mean_score;
};

struct PredictSettings {
  std::vector<double> truncation_times;
  std::vector<double> horizons;
  PredictConfig predict;
};

struct RunConfig {
  TransitionGraph graph;
  std::optional<JointModel> model;
  std::optional<json> params;  // true values for simulation
  std::optional<json> init;    // starting point of a fit
  CohortSpec simulation;
  FitConfig fit;
  StopRule stop;
  SamplerConfig sampler;
  FimSettings fim;
  PredictSettings predict;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  const JointModel& joint_model() const { return *model; }

  ModelParams true_params(std::size_t covariate_dim) const {
    if (!params) throw ValidationError("config.params: missing (true parameter values are required)");
    return parse_params(*params, "config.params", *model, covariate_dim);
  }

  ModelParams init_params(std::size_t covariate_dim) const {
    if (!init) return model->default_params(CovMethod::full, CovMethod::full, covariate_dim);
    return parse_params(*init, "config.init", *model, covariate_dim);
  }

  // independent streams for each consumer of the master seed
  std::uint64_t simulation_seed() const { return split_seed(seed, 1); }
  std::uint64_t sampler_seed() const { return split_seed(seed, 2); }
  std::uint64_t predict_seed() const { return split_seed(seed, 3); }
};

inline void parse_simulation(Reader r, CohortSpec& s) {
  s.n = r.get<std::size_t>("n", s.n);
  s.m = r.get<std::size_t>("m", s.m);
  s.covariate_dim = r.get<std::size_t>("covariate_dim", s.covariate_dim);
  s.horizon = r.get<double>("horizon", s.horizon);
  if (r.has("min_gap")) s.min_gap = r.get<double>("min_gap");
  else r.touch("min_gap");
  s.grid = grid_policy_from_string(r.get<std::string>("grid", to_string(s.grid)));
  if (r.has("censoring")) {
    auto c = r.get<std::vector<double>>("censoring");
    if (c.size() != 2) throw ValidationError(r.at("censoring") + ": expected [lo, hi]");
    s.censoring_lo = c[0];
    s.censoring_hi = c[1];
  }
  s.initial_state = r.get<std::size_t>("initial_state", s.initial_state);
  s.initial_time = r.get<double>("initial_time", s.initial_time);
  s.max_transitions = r.get<std::size_t>("max_transitions", s.max_transitions);
  r.finish();
}

inline void parse_fit(Reader r, FitConfig& f, StopRule& stop) {
  f.optimizer = optimizer_from_string(r.get<std::string>("optimizer", to_string(f.optimizer)));
  f.lr = r.get<double>("lr", f.lr);
  f.adam_beta1 = r.get<double>("adam_beta1", f.adam_beta1);
  f.adam_beta2 = r.get<double>("adam_beta2", f.adam_beta2);
  f.adam_eps = r.get<double>("adam_eps", f.adam_eps);
  f.sgd_power = r.get<double>("sgd_power", f.sgd_power);
  f.decay = r.get<double>("decay", f.decay);
  f.clip = r.get<double>("clip", f.clip);
  f.batch_size = r.get<std::size_t>("batch_size", f.batch_size);
  f.minibatch = r.get<std::size_t>("minibatch", f.minibatch);
  f.max_iterations = r.get<std::size_t>("max_iterations", f.max_iterations);
  f.sweeps_per_iteration = r.get<std::size_t>("sweeps_per_iteration", f.sweeps_per_iteration);
  f.warmup = r.get<bool>("warmup", f.warmup);
  f.adapt_during_fit = r.get<bool>("adapt_during_fit", f.adapt_during_fit);
  f.max_nonfinite = r.get<std::size_t>("max_nonfinite", f.max_nonfinite);
  if (r.has("stop")) {
    Reader s = r.child("stop");
    stop.beta1 = s.get<double>("beta1", stop.beta1);
    stop.beta2 = s.get<double>("beta2", stop.beta2);
    stop.atol = s.get<double>("atol", stop.atol);
    stop.rtol = s.get<double>("rtol", stop.rtol);
    s.finish();
  } else {
    r.touch("stop");
  }
  r.finish();
  try {
    f.validate();
    stop.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(r.path() + ": " + e.what());
  }
}

inline void parse_sampler(Reader r, SamplerConfig& s) {
  s.n_chains = r.get<std::size_t>("n_chains", s.n_chains);
  s.warmup = r.get<std::size_t>("warmup", s.warmup);
  s.init_step = r.get<double>("init_step", s.init_step);
  s.target_accept = r.get<double>("target_accept", s.target_accept);
  s.rm_c0 = r.get<double>("rm_c0", s.rm_c0);
  s.rm_kappa = r.get<double>("rm_kappa", s.rm_kappa);
  r.finish();
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(r.path() + ": " + e.what());
  }
}

inline void parse_fim(Reader r, FimSettings& f) {
  f.n_samples = r.get<std::size_t>("n_samples", f.n_samples);
  f.thin = r.get<std::size_t>("thin", f.thin);
  f.method = fim_method_from_string(r.get<std::string>("method", to_string(f.method)));
  r.finish();
  if (f.n_samples == 0) throw ValidationError(r.at("n_samples") + ": must be >= 1");
  if (f.thin == 0) throw ValidationError(r.at("thin") + ": must be >= 1");
}

inline void parse_predict(Reader r, PredictSettings& p) {
  p.truncation_times = r.get<std::vector<double>>("truncation_times", p.truncation_times);
  p.horizons = r.get<std::vector<double>>("horizons", p.horizons);
  p.predict.n_draws = r.get<std::size_t>("n_draws", p.predict.n_draws);
  p.predict.thin = r.get<std::size_t>("thin", p.predict.thin);
  p.predict.max_transitions = r.get<std::size_t>("max_transitions", p.predict.max_transitions);
  p.predict.sampler.warmup = r.get<std::size_t>("warmup", p.predict.sampler.warmup);
  r.finish();
}

inline RunConfig parse_run_config(const json& j) {
  Reader r(j, "config");
  RunConfig c;
  c.graph = parse_graph(r.child("graph"));
  c.model.emplace(parse_design(r.child("design"), c.graph));
  if (r.has("params")) c.params = r.raw("params");
  else r.touch("params");
  if (r.has("init")) c.init = r.raw("init");
  else r.touch("init");
  if (r.has("simulation")) parse_simulation(r.child("simulation"), c.simulation);
  else r.touch("simulation");
  if (r.has("fit")) parse_fit(r.child("fit"), c.fit, c.stop);
  else r.touch("fit");
  if (r.has("sampler")) parse_sampler(r.child("sampler"), c.sampler);
  else r.touch("sampler");
  if (r.has("fim")) parse_fim(r.child("fim"), c.fim);
  else r.touch("fim");
  if (r.has("predict")) parse_predict(r.child("predict"), c.predict);
  else r.touch("predict");
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.threads = r.get<std::size_t>("threads", c.threads);
  r.finish();
  // validate parameter blocks eagerly so typos surface before any work
  if (c.params) c.true_params(c.simulation.covariate_dim);
  if (c.init) c.init_params(c.simulation.covariate_dim);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& file) { return parse_run_config(read_json_file(file)); }

}  // namespace jmstate::config
