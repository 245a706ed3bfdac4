#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jmstate/core.hpp"

namespace jmstate {

/// Directed transition graph over dense state indices 0..p-1.
///
/// Edges are stored in lexicographic order; an edge's position in that order
/// is its edge index, which every per-edge container downstream is aligned
/// with. Cycles are allowed.
class TransitionGraph {
 public:
  TransitionGraph() = default;

  TransitionGraph(std::size_t num_states, std::vector<Edge> edges,
                  std::vector<std::string> labels = {})
      : num_states_(num_states), edges_(std::move(edges)), labels_(std::move(labels)) {
    if (num_states_ == 0) throw ValidationError("graph: num_states must be positive");
    if (!labels_.empty() && labels_.size() != num_states_)
      throw ValidationError("graph: expected " + std::to_string(num_states_) + " labels, got " +
                            std::to_string(labels_.size()));
    for (const auto& e : edges_) {
      if (e.from >= num_states_ || e.to >= num_states_)
        throw ValidationError("graph: edge " + to_string(e) + " references a state out of range");
      if (e.from == e.to) throw ValidationError("graph: self-loop edge " + to_string(e));
    }
    std::sort(edges_.begin(), edges_.end());
    if (auto dup = std::adjacent_find(edges_.begin(), edges_.end()); dup != edges_.end())
      throw ValidationError("graph: duplicate edge " + to_string(*dup));

    lookup_.assign(num_states_ * num_states_, -1);
    out_edges_.assign(num_states_, {});
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      lookup_[edges_[i].from * num_states_ + edges_[i].to] = static_cast<long>(i);
      out_edges_[edges_[i].from].push_back(i);
    }
  }

  std::size_t num_states() const { return num_states_; }
  std::size_t num_edges() const { return edges_.size(); }
  std::span<const Edge> edges() const { return edges_; }
  const Edge& edge(std::size_t index) const { return edges_.at(index); }

  std::string label(State k) const {
    return labels_.empty() ? std::to_string(k) : labels_.at(k);
  }
  const std::vector<std::string>& labels() const { return labels_; }

  bool valid_state(State k) const { return k < num_states_; }

  std::optional<std::size_t> edge_index(State from, State to) const {
    if (from >= num_states_ || to >= num_states_) return std::nullopt;
    long idx = lookup_[from * num_states_ + to];
    if (idx < 0) return std::nullopt;
    return static_cast<std::size_t>(idx);
  }

  bool has_edge(State from, State to) const { return edge_index(from, to).has_value(); }

  /// Indices of edges leaving `k`, ordered by target state.
  std::span<const std::size_t> out_edges(State k) const { return out_edges_.at(k); }

  std::vector<State> successors(State k) const {
    std::vector<State> out;
    for (auto idx : out_edges(k)) out.push_back(edges_[idx].to);
    return out;
  }

  bool is_absorbing(State k) const { return out_edges_.at(k).empty(); }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> a(num_states_, std::vector<int>(num_states_, 0));
    for (const auto& e : edges_) a[e.from][e.to] = 1;
    return a;
  }

  /// True iff a directed path of length >= 0 joins some state of `from` to
  /// some state of `to`.
  bool reaches(std::span<const State> from, std::span<const State> to) const {
    if (from.empty() || to.empty()) throw ValidationError("reaches: state sets must be non-empty");
    std::vector<char> target(num_states_, 0), seen(num_states_, 0);
    for (auto s : to) target.at(s) = 1;
    std::vector<State> stack;
    for (auto s : from) {
      if (!seen.at(s)) {
        seen[s] = 1;
        stack.push_back(s);
      }
    }
    while (!stack.empty()) {
      State k = stack.back();
      stack.pop_back();
      if (target[k]) return true;
      for (auto idx : out_edges_[k]) {
        State n = edges_[idx].to;
        if (!seen[n]) {
          seen[n] = 1;
          stack.push_back(n);
        }
      }
    }
    return false;
  }

  bool reaches(State from, std::span<const State> to) const {
    const State f[] = {from};
    return reaches(f, to);
  }

 private:
  std::size_t num_states_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::string> labels_;
  std::vector<long> lookup_;
  std::vector<std::vector<std::size_t>> out_edges_;
};

struct BucketEntry {
  std::size_t individual = 0;
  double entry = 0.0;
  double exit = 0.0;

  friend bool operator==(const BucketEntry&, const BucketEntry&) = default;
};

/// Last observed sojourn of an individual, censored at `censoring`.
struct TerminalRecord {
  std::size_t individual = 0;
  State state = 0;
  double time = 0.0;
  double censoring = 0.0;
};

struct TransitionBuckets {
  std::map<Edge, std::vector<BucketEntry>> buckets;
  std::vector<TerminalRecord> terminal;

  std::size_t count(const Edge& e) const {
    auto it = buckets.find(e);
    return it == buckets.end() ? 0 : it->second.size();
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [e, v] : buckets) n += v.size();
    return n;
  }
};

inline TransitionBuckets build_buckets(const TransitionGraph& graph,
                                       std::span<const Trajectory> trajectories,
                                       std::span<const double> censoring) {
  if (trajectories.size() != censoring.size())
    throw ValidationError("build_buckets: " + std::to_string(trajectories.size()) +
                          " trajectories but " + std::to_string(censoring.size()) +
                          " censoring times");
  TransitionBuckets out;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& traj = trajectories[i];
    if (traj.empty())
      throw ValidationError("build_buckets: individual " + std::to_string(i) +
                            " has an empty trajectory");
    for (std::size_t l = 0; l + 1 < traj.size(); ++l) {
      Edge e{traj[l].state, traj[l + 1].state};
      if (!graph.has_edge(e.from, e.to))
        throw ValidationError("build_buckets: individual " + std::to_string(i) +
                              " uses transition " + to_string(e) + " which is not a graph edge");
      if (!(traj[l + 1].time > traj[l].time))
        throw ValidationError("build_buckets: individual " + std::to_string(i) +
                              " has non-increasing transition times");
      out.buckets[e].push_back({i, traj[l].time, traj[l + 1].time});
    }
    out.terminal.push_back({i, traj.back().state, traj.back().time, censoring[i]});
  }
  return out;
}

}  // namespace jmstate
