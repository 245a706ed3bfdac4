// Command-line front end: simulate | fit | fim | predict.
// Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "jmstate/config.hpp"
#include "jmstate/inference.hpp"
#include "jmstate/io.hpp"
#include "jmstate/predict.hpp"
#include "jmstate/simulate.hpp"

namespace fs = std::filesystem;
using namespace jmstate;
using config::json;
using io::fmt;

namespace {

struct Common {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string params_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::vector<double> truncation;
  std::vector<double> horizons;
  std::vector<std::string> ids;
};

config::RunConfig load(const Common& c) {
  auto cfg = config::load_run_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads == 0 ? resolve_threads(0) : *c.threads;
  return cfg;
}

SamplerConfig sampler_of(const config::RunConfig& cfg) {
  SamplerConfig s = cfg.sampler;
  s.seed = cfg.sampler_seed();
  s.threads = cfg.threads;
  return s;
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

// Every family must reproduce its finite-difference derivatives before use.
void self_check(const JointModel& model, const ModelParams& p, std::size_t k) {
  std::mt19937_64 rng(20240917);
  for (const auto& c : check_derivatives(model, p, k, rng))
    if (!c.ok)
      throw NumericalError("derivative self-check failed for family " + c.family +
                           " (max error " + fmt(c.max_error) + ")");
}

Cohort load_cohort(const Common& c, const JointModel& model) {
  if (c.data_dir.empty()) throw ValidationError("--data is required");
  Cohort cohort = io::read_cohort(c.data_dir, model.graph());
  if (!c.ids.empty()) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < cohort.size(); ++i) index[cohort.individuals[i].id] = i;
    Cohort sub;
    sub.covariate_dim = cohort.covariate_dim;
    sub.biomarker_dim = cohort.biomarker_dim;
    for (const auto& id : c.ids) {
      auto it = index.find(id);
      if (it == index.end()) throw ValidationError("unknown individual id '" + id + "'");
      sub.individuals.push_back(cohort.individuals[it->second]);
    }
    cohort = std::move(sub);
  }
  return cohort;
}

ModelParams load_params(const Common& c, const JointModel& model, std::size_t k) {
  if (c.params_path.empty()) throw ValidationError("--params is required");
  return config::parse_params(config::read_json_file(c.params_path), c.params_path, model, k);
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common& c) {
  auto cfg = load(c);
  const auto& model = cfg.joint_model();
  CohortSpec spec = cfg.simulation;
  spec.seed = cfg.simulation_seed();
  spec.threads = cfg.threads;
  ModelParams p = cfg.true_params(spec.covariate_dim);
  auto sim = generate_cohort(model, p, spec);
  fs::path out(c.out_dir);
  io::write_cohort(out, sim.cohort);
  io::write_latent(out / "latent.csv", sim.cohort, sim.b, sim.psi, model.q_dim(), model.psi_dim());
  auto counts = transition_counts(model.graph(), sim.cohort);
  std::printf("simulated %zu individuals\n", sim.cohort.size());
  for (std::size_t e = 0; e < counts.size(); ++e)
    std::printf("  %s: %zu transitions\n", to_string(model.graph().edge(e)).c_str(), counts[e]);
  return 0;
}

int cmd_fit(const Common& c) {
  auto cfg = load(c);
  const auto& model = cfg.joint_model();
  Cohort cohort = load_cohort(c, model);
  ModelParams init = cfg.init_params(cohort.covariate_dim);
  self_check(model, init, cohort.covariate_dim);

  FitHooks hooks;
  hooks.on_iteration = [](const IterationInfo& info) {
    if (info.iteration % 50 == 0)
      std::fprintf(stderr, "iteration %zu  loglik %.6g  acceptance %.3f\n", info.iteration, info.loglik,
                   info.acceptance);
    return true;
  };
  auto rep = fit(model, cohort, init, cfg.fit, cfg.stop, sampler_of(cfg), hooks);

  fs::path out(c.out_dir);
  fs::create_directories(out);
  write_json(out / "params.json", config::params_to_json(model, rep.params));
  {
    io::CsvWriter w(out / "history.csv");
    w.row({"iteration", "name", "value"});
    for (std::size_t it = 0; it < rep.theta_history.size(); ++it) {
      const std::string n = std::to_string(it + 1);
      w.row({n, "loglik", fmt(rep.loglik_history[it])});
      for (std::size_t j = 0; j < rep.names.size(); ++j)
        w.row({n, rep.names[j], fmt(rep.theta_history[it][static_cast<Eigen::Index>(j)])});
    }
  }
  json report;
  report["stop_reason"] = to_string(rep.stop_reason);
  report["iterations"] = rep.iterations;
  report["nonfinite_steps"] = rep.nonfinite_steps;
  report["individuals"] = cohort.size();
  report["seed"] = cfg.seed;
  write_json(out / "report.json", report);
  std::printf("fit: %zu iterations, stop reason %s\n", rep.iterations, to_string(rep.stop_reason).c_str());
  return 0;
}

int cmd_fim(const Common& c) {
  auto cfg = load(c);
  const auto& model = cfg.joint_model();
  Cohort cohort = load_cohort(c, model);
  ModelParams p = load_params(c, model, cohort.covariate_dim);
  self_check(model, p, cohort.covariate_dim);
  auto est = compute_fim(model, cohort, p, sampler_of(cfg), cfg.fim.n_samples, cfg.fim.method, cfg.fim.thin);
  std::size_t warnings = 0;
  auto se = standard_errors(est.matrix, [&](const std::string& m) {
    ++warnings;
    std::fprintf(stderr, "warning: %s\n", m.c_str());
  });
  ParamLayout layout(p);
  const auto names = layout.names(model.graph());
  const Eigen::VectorXd theta = layout.flatten(p);

  fs::path out(c.out_dir);
  fs::create_directories(out);
  {
    io::CsvWriter w(out / "fim.csv");
    std::vector<std::string> h{"parameter"};
    h.insert(h.end(), names.begin(), names.end());
    w.row(h);
    for (std::size_t i = 0; i < names.size(); ++i) {
      std::vector<std::string> row{names[i]};
      for (std::size_t j = 0; j < names.size(); ++j)
        row.push_back(fmt(est.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
      w.row(row);
    }
  }
  {
    io::CsvWriter w(out / "stderr.csv");
    w.row({"parameter", "estimate", "stderr", "flag"});
    for (std::size_t j = 0; j < names.size(); ++j) {
      const double s = se[static_cast<Eigen::Index>(j)];
      w.row({names[j], fmt(theta[static_cast<Eigen::Index>(j)]), fmt(s), std::isinf(s) ? "not_identified" : ""});
    }
  }
  std::printf("%-22s %14s %14s\n", "parameter", "estimate", "stderr");
  for (std::size_t j = 0; j < names.size(); ++j)
    std::printf("%-22s %14.6g %14.6g\n", names[j].c_str(), theta[static_cast<Eigen::Index>(j)],
                se[static_cast<Eigen::Index>(j)]);
  std::printf("method %s, %zu samples, asymmetry %.3g\n", to_string(est.method).c_str(), est.samples, est.asymmetry);
  return 0;
}

int cmd_predict(const Common& c) {
  auto cfg = load(c);
  const auto& model = cfg.joint_model();
  const auto truncation = c.truncation.empty() ? cfg.predict.truncation_times : c.truncation;
  const auto horizons = c.horizons.empty() ? cfg.predict.horizons : c.horizons;
  if (truncation.empty()) throw ValidationError("predict: the list of truncation times is empty");
  if (horizons.empty()) throw ValidationError("predict: the list of horizons is empty");
  Cohort cohort = load_cohort(c, model);
  ModelParams p = load_params(c, model, cohort.covariate_dim);

  PredictConfig pc = cfg.predict.predict;
  pc.sampler = sampler_of(cfg);
  pc.sampler.warmup = cfg.predict.predict.sampler.warmup;
  pc.seed = cfg.predict_seed();
  pc.threads = cfg.threads;
  const std::size_t nh = horizons.size();

  fs::path out(c.out_dir);
  fs::create_directories(out);
  io::CsvWriter pw(out / "predictions.csv");
  pw.row({"id", "truncation", "horizon", "outcome", "value"});
  io::CsvWriter aw(out / "accuracy.csv");
  aw.row({"truncation", "horizon", "accuracy", "n", "se"});

  for (double t : truncation) {
    // state at u for the report, state at u ^ C_i for the accuracy metric
    auto preds = predict_cohort(
        model, p, cohort, t,
        [&](std::size_t i) {
          std::vector<Functional> fs;
          for (double u : horizons) fs.push_back(state_at_time(model.graph(), u));
          for (double u : horizons)
            fs.push_back(state_at_time(model.graph(), std::min(u, cohort.individuals[i].censoring_time)));
          return fs;
        },
        pc);
    for (std::size_t i = 0; i < cohort.size(); ++i)
      for (std::size_t h = 0; h < nh; ++h) {
        const auto& r = preds[i][h];
        std::vector<double> prob(model.graph().num_states(), 0.0);
        for (const auto& [v, w] : r.distribution()) prob[static_cast<std::size_t>(v)] = w;
        const auto id = cohort.individuals[i].id;
        for (State s = 0; s < prob.size(); ++s)
          pw.row({id, fmt(t), fmt(horizons[h]), "p_" + std::to_string(s), fmt(prob[s])});
        pw.row({id, fmt(t), fmt(horizons[h]), "mode", fmt(r.mode())});
        pw.row({id, fmt(t), fmt(horizons[h]), "horizon_censored", std::to_string(r.horizon_censored)});
      }
    for (std::size_t h = 0; h < nh; ++h) {
      std::vector<double> pred(cohort.size()), truth(cohort.size());
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& rec = cohort.individuals[i];
        pred[i] = preds[i][nh + h].mode();
        truth[i] = static_cast<double>(state_at(rec.trajectory, std::min(horizons[h], rec.censoring_time)));
      }
      const double acc = accuracy(pred, truth);
      const double n = static_cast<double>(cohort.size());
      aw.row({fmt(t), fmt(horizons[h]), fmt(acc), std::to_string(cohort.size()),
              fmt(std::sqrt(acc * (1.0 - acc) / n))});
    }
  }
  std::printf("predicted %zu individuals at %zu truncation times\n", cohort.size(), truncation.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint longitudinal and multi-state models: simulate, fit, Fisher information, prediction"};
  app.require_subcommand(1);
  Common c;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  auto add_common = [&](CLI::App* sub, bool data, bool params) {
    sub->add_option("--config", c.config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", c.out_dir, "output directory")->required();
    if (data) sub->add_option("--data", c.data_dir, "directory with the cohort CSV files")->required();
    if (params) sub->add_option("--params", c.params_path, "parameter file (JSON)")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--threads", threads, "worker threads; 0 uses every core (overrides the config)");
  };
  auto* sim = app.add_subcommand("simulate", "simulate a cohort from the true parameters");
  add_common(sim, false, false);
  auto* fit = app.add_subcommand("fit", "fit the model by stochastic gradient ascent");
  add_common(fit, true, false);
  auto* fim = app.add_subcommand("fim", "Fisher information and standard errors");
  add_common(fim, true, true);
  auto* pred = app.add_subcommand("predict", "dynamic prediction and accuracy");
  add_common(pred, true, true);
  pred->add_option("--truncation", c.truncation, "truncation times (overrides the config)")->delimiter(',');
  pred->add_option("--horizons", c.horizons, "prediction times (overrides the config)")->delimiter(',');
  pred->add_option("--ids", c.ids, "restrict to these individual ids")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (auto* sub : {sim, fit, fim, pred}) {
    if (sub->count("--seed")) c.seed = seed;
    if (sub->count("--threads")) c.threads = threads;
  }

  try {
    if (*sim) return cmd_simulate(c);
    if (*fit) return cmd_fit(c);
    if (*fim) return cmd_fim(c);
    if (*pred) return cmd_predict(c);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
