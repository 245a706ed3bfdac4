#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "jmstate/core.hpp"
#include "jmstate/graph.hpp"

namespace jmstate {

/// Observed data for one individual.
///
/// A measurement row is either fully observed or fully missing; missing rows
/// hold NaN in every column.
struct IndividualRecord {
  std::string id;
  Eigen::VectorXd covariates;
  std::vector<double> measurement_times;
  Eigen::MatrixXd measurements;  // n_i x d
  Trajectory trajectory;
  double censoring_time = kInf;

  std::size_t num_measurements() const { return measurement_times.size(); }

  bool row_observed(std::size_t j) const {
    return measurements.row(static_cast<Eigen::Index>(j)).allFinite();
  }

  bool row_missing(std::size_t j) const {
    return measurements.row(static_cast<Eigen::Index>(j)).array().isNaN().all();
  }
};

struct Cohort {
  std::size_t covariate_dim = 0;  // k
  std::size_t biomarker_dim = 0;  // d
  std::vector<IndividualRecord> individuals;

  std::size_t size() const { return individuals.size(); }

  std::vector<Trajectory> trajectories() const {
    std::vector<Trajectory> out;
    out.reserve(individuals.size());
    for (const auto& r : individuals) out.push_back(r.trajectory);
    return out;
  }

  std::vector<double> censoring_times() const {
    std::vector<double> out;
    out.reserve(individuals.size());
    for (const auto& r : individuals) out.push_back(r.censoring_time);
    return out;
  }
};

/// Structural check of a cohort against a graph. Returns human-readable
/// violations; an empty result means the cohort is usable.
inline std::vector<std::string> validate_cohort(const Cohort& cohort, const TransitionGraph& graph) {
  std::vector<std::string> out;
  auto who = [&](std::size_t i) {
    const auto& id = cohort.individuals[i].id;
    return "individual " + (id.empty() ? std::to_string(i) : id) + ": ";
  };
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& r = cohort.individuals[i];
    if (static_cast<std::size_t>(r.covariates.size()) != cohort.covariate_dim)
      out.push_back(who(i) + "covariate dimension " + std::to_string(r.covariates.size()) +
                    " != " + std::to_string(cohort.covariate_dim));
    if (!r.covariates.allFinite()) out.push_back(who(i) + "non-finite covariate");
    if (static_cast<std::size_t>(r.measurements.rows()) != r.measurement_times.size() ||
        (r.measurements.rows() > 0 &&
         static_cast<std::size_t>(r.measurements.cols()) != cohort.biomarker_dim))
      out.push_back(who(i) + "measurement matrix shape does not match times / biomarker dimension");
    else {
      for (std::size_t j = 0; j < r.measurement_times.size(); ++j) {
        double t = r.measurement_times[j];
        if (!std::isfinite(t)) {
          out.push_back(who(i) + "non-finite measurement time");
          continue;
        }
        bool observed = r.row_observed(j), missing = r.row_missing(j);
        if (!observed && !missing)
          out.push_back(who(i) + "measurement row " + std::to_string(j) + " is partially missing");
        if (observed && t > r.censoring_time)
          out.push_back(who(i) + "measurement at time " + std::to_string(t) +
                        " after censoring must be marked missing");
      }
    }
    if (std::isnan(r.censoring_time)) out.push_back(who(i) + "censoring time is NaN");
    if (r.trajectory.empty()) {
      out.push_back(who(i) + "empty trajectory (initial state must be observed)");
      continue;
    }
    for (std::size_t l = 0; l < r.trajectory.size(); ++l) {
      const auto& p = r.trajectory[l];
      if (!graph.valid_state(p.state)) {
        out.push_back(who(i) + "state out of range (" + std::to_string(p.state) + ")");
        continue;
      }
      if (!std::isfinite(p.time)) out.push_back(who(i) + "non-finite transition time");
      if (l == 0) continue;
      const auto& prev = r.trajectory[l - 1];
      if (!(p.time > prev.time)) out.push_back(who(i) + "transition times not strictly increasing");
      if (graph.valid_state(prev.state) && !graph.has_edge(prev.state, p.state))
        out.push_back(who(i) + "transition " + to_string(Edge{prev.state, p.state}) +
                      " is not a graph edge");
    }
    if (r.trajectory.size() > 1 && r.trajectory.back().time > r.censoring_time)
      out.push_back(who(i) + "transition after censoring");
    else if (r.trajectory.front().time > r.censoring_time)
      out.push_back(who(i) + "initial time after censoring");
  }
  return out;
}

}  // namespace jmstate
