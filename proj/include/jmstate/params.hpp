#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jmstate/core.hpp"
#include "jmstate/graph.hpp"

namespace jmstate {

enum class CovMethod { full, diag, ball };

inline std::string to_string(CovMethod m) {
  switch (m) {
    case CovMethod::full: return "full";
    case CovMethod::diag: return "diag";
    case CovMethod::ball: return "ball";
  }
  return "?";
}

inline CovMethod cov_method_from_string(const std::string& s) {
  if (s == "full") return CovMethod::full;
  if (s == "diag") return CovMethod::diag;
  if (s == "ball") return CovMethod::ball;
  throw ValidationError("unknown covariance method '" + s + "' (expected full, diag or ball)");
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Log-Cholesky representation of a precision matrix P = L L^T, where the
/// diagonal of L is stored on the log scale.
///
/// `full` stores the lower triangle of L~ row by row, `diag` its diagonal,
/// `ball` a single scalar shared by the whole diagonal.
class PrecisionRepr {
 public:
  PrecisionRepr() = default;

  PrecisionRepr(CovMethod method, std::size_t dim, Eigen::VectorXd values)
      : method_(method), dim_(dim) {
    set_values(std::move(values));
  }

  static PrecisionRepr identity(std::size_t dim, CovMethod method) {
    return PrecisionRepr(method, dim, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_free(method, dim))));
  }

  static std::size_t num_free(CovMethod method, std::size_t dim) {
    switch (method) {
      case CovMethod::full: return dim * (dim + 1) / 2;
      case CovMethod::diag: return dim;
      case CovMethod::ball: return dim == 0 ? 0 : 1;
    }
    return 0;
  }

  CovMethod method() const { return method_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_free() const { return num_free(method_, dim_); }
  const Eigen::VectorXd& values() const { return values_; }

  void set_values(Eigen::VectorXd values) {
    if (static_cast<std::size_t>(values.size()) != num_free())
      throw ValidationError("precision repr (" + to_string(method_) + ", dim " +
                            std::to_string(dim_) + "): expected " + std::to_string(num_free()) +
                            " values, got " + std::to_string(values.size()));
    values_ = std::move(values);
    rebuild();
  }

  /// Lower-triangular L~ with the raw (log-scale) diagonal.
  Eigen::MatrixXd log_factor() const {
    const auto q = static_cast<Eigen::Index>(dim_);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q, q);
    switch (method_) {
      case CovMethod::full: {
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < q; ++i)
          for (Eigen::Index j = 0; j <= i; ++j) out(i, j) = values_[k++];
        break;
      }
      case CovMethod::diag:
        for (Eigen::Index i = 0; i < q; ++i) out(i, i) = values_[i];
        break;
      case CovMethod::ball:
        for (Eigen::Index i = 0; i < q; ++i) out(i, i) = values_[0];
        break;
    }
    return out;
  }

  const Eigen::MatrixXd& cholesky_factor() const { return factor_; }
  Eigen::MatrixXd precision() const { return factor_ * factor_.transpose(); }

  Eigen::MatrixXd covariance() const {
    const auto q = static_cast<Eigen::Index>(dim_);
    Eigen::MatrixXd linv = factor_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(q, q));
    return linv.transpose() * linv;
  }

  /// log det P = 2 tr(L~).
  double log_det() const { return log_det_; }

  double quadratic_form(std::span<const double> r) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      double v = 0.0;
      for (std::size_t i = j; i < dim_; ++i) v += factor_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * r[i];
      acc += v * v;
    }
    return acc;
  }

  /// Log-density of N(0, P^{-1}) at `r`.
  double gaussian_log_density(std::span<const double> r) const {
    return -0.5 * static_cast<double>(dim_) * kLog2Pi + 0.5 * log_det_ - 0.5 * quadratic_form(r);
  }

  /// Adds d/d(values) of gaussian_log_density(r) into `grad_values` and, when
  /// non-empty, d/dr into `grad_r`.
  void add_gaussian_gradient(std::span<const double> r, std::span<double> grad_values,
                             std::span<double> grad_r = {}) const {
    const std::size_t q = dim_;
    double v_buf[16];
    std::vector<double> v_heap;
    double* v = v_buf;
    if (q > 16) {
      v_heap.resize(q);
      v = v_heap.data();
    }
    for (std::size_t j = 0; j < q; ++j) {
      double acc = 0.0;
      for (std::size_t i = j; i < q; ++i) acc += L(i, j) * r[i];
      v[j] = acc;
    }
    switch (method_) {
      case CovMethod::full: {
        std::size_t k = 0;
        for (std::size_t i = 0; i < q; ++i)
          for (std::size_t j = 0; j <= i; ++j, ++k) {
            double g = -v[j] * r[i];
            grad_values[k] += (i == j) ? g * L(i, i) + 1.0 : g;
          }
        break;
      }
      case CovMethod::diag:
        for (std::size_t i = 0; i < q; ++i) grad_values[i] += -v[i] * r[i] * L(i, i) + 1.0;
        break;
      case CovMethod::ball: {
        if (q == 0) break;
        double acc = 0.0;
        for (std::size_t i = 0; i < q; ++i) acc += v[i] * r[i] * L(i, i);
        grad_values[0] += -acc + static_cast<double>(q);
        break;
      }
    }
    if (!grad_r.empty()) {
      for (std::size_t i = 0; i < q; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += L(i, j) * v[j];
        grad_r[i] -= acc;
      }
    }
  }

  /// d(log det P)/d(values).
  Eigen::VectorXd log_det_gradient() const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(values_.size());
    switch (method_) {
      case CovMethod::full: {
        Eigen::Index k = 0;
        for (std::size_t i = 0; i < dim_; ++i)
          for (std::size_t j = 0; j <= i; ++j, ++k)
            if (i == j) g[k] = 2.0;
        break;
      }
      case CovMethod::diag: g.setConstant(2.0); break;
      case CovMethod::ball:
        if (dim_ > 0) g[0] = 2.0 * static_cast<double>(dim_);
        break;
    }
    return g;
  }

 private:
  double L(std::size_t i, std::size_t j) const {
    return factor_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  void rebuild() {
    factor_ = log_factor();
    log_det_ = 0.0;
    for (Eigen::Index i = 0; i < factor_.rows(); ++i) {
      log_det_ += 2.0 * factor_(i, i);
      factor_(i, i) = std::exp(factor_(i, i));
    }
  }

  CovMethod method_ = CovMethod::diag;
  std::size_t dim_ = 0;
  Eigen::VectorXd values_;
  Eigen::MatrixXd factor_;
  double log_det_ = 0.0;
};

/// Representation of the precision of an SPD covariance matrix.
inline PrecisionRepr repr_from_cov(const Eigen::MatrixXd& cov, CovMethod method) {
  if (cov.rows() != cov.cols()) throw ValidationError("repr_from_cov: covariance must be square");
  const auto q = cov.rows();
  const double scale = q > 0 ? cov.cwiseAbs().maxCoeff() : 1.0;
  const double tol = 1e-12 * std::max(scale, 1e-300);
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > tol && q > 0)
    throw ValidationError("repr_from_cov: covariance is not symmetric");
  if (method != CovMethod::full) {
    for (Eigen::Index i = 0; i < q; ++i)
      for (Eigen::Index j = 0; j < q; ++j)
        if (i != j && std::abs(cov(i, j)) > tol)
          throw ValidationError("repr_from_cov: method " + to_string(method) +
                                " requires a diagonal covariance");
  }
  if (method == CovMethod::ball) {
    for (Eigen::Index i = 1; i < q; ++i)
      if (std::abs(cov(i, i) - cov(0, 0)) > tol)
        throw ValidationError("repr_from_cov: method ball requires a multiple of the identity");
  }
  Eigen::LLT<Eigen::MatrixXd> llt_cov(cov);
  if (q > 0 && llt_cov.info() != Eigen::Success)
    throw NumericalError("repr_from_cov: covariance is not positive definite");
  Eigen::VectorXd values(static_cast<Eigen::Index>(PrecisionRepr::num_free(method, static_cast<std::size_t>(q))));
  switch (method) {
    case CovMethod::full: {
      Eigen::MatrixXd prec = llt_cov.solve(Eigen::MatrixXd::Identity(q, q));
      prec = 0.5 * (prec + prec.transpose());
      Eigen::LLT<Eigen::MatrixXd> llt(prec);
      if (llt.info() != Eigen::Success)
        throw NumericalError("repr_from_cov: precision factorization failed");
      Eigen::MatrixXd l = llt.matrixL();
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < q; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) values[k++] = (i == j) ? std::log(l(i, i)) : l(i, j);
      break;
    }
    case CovMethod::diag:
      for (Eigen::Index i = 0; i < q; ++i) values[i] = -0.5 * std::log(cov(i, i));
      break;
    case CovMethod::ball:
      if (q > 0) values[0] = -0.5 * std::log(cov(0, 0));
      break;
  }
  return PrecisionRepr(method, static_cast<std::size_t>(q), values);
}

inline Eigen::MatrixXd cov_from_repr(const PrecisionRepr& r) { return r.covariance(); }

inline double log_det_precision(const PrecisionRepr& r) { return r.log_det(); }

enum class ParamGroup { alpha, beta, hazard };

inline std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::alpha: return "alpha";
    case ParamGroup::beta: return "beta";
    case ParamGroup::hazard: return "hazard";
  }
  return "?";
}

inline ParamGroup param_group_from_string(const std::string& s) {
  if (s == "alpha") return ParamGroup::alpha;
  if (s == "beta") return ParamGroup::beta;
  if (s == "hazard" || s == "extra") return ParamGroup::hazard;
  throw ValidationError("unknown parameter group '" + s + "' (expected alpha, beta or hazard)");
}

/// A per-edge parameter vector: (group, edge index).
struct Slot {
  ParamGroup group = ParamGroup::alpha;
  std::size_t edge = 0;

  friend bool operator==(const Slot&, const Slot&) = default;
};

/// Per-edge arrays shared by parameters and their gradients.
struct EdgeArrays {
  std::vector<Eigen::VectorXd> alpha;
  std::vector<Eigen::VectorXd> beta;
  std::vector<Eigen::VectorXd> hazard;  // trainable baseline-hazard parameters; empty when fixed

  std::vector<Eigen::VectorXd>& group(ParamGroup g) {
    switch (g) {
      case ParamGroup::alpha: return alpha;
      case ParamGroup::beta: return beta;
      case ParamGroup::hazard: return hazard;
    }
    return alpha;
  }
  const std::vector<Eigen::VectorXd>& group(ParamGroup g) const {
    return const_cast<EdgeArrays*>(this)->group(g);
  }
};

/// Model parameters theta = (gamma, Q, R, alpha, beta) plus trainable
/// baseline-hazard parameters. Per-edge vectors are indexed by the graph's
/// edge index.
///
/// Tie classes in `sharing` are declared explicitly; tied slots always hold
/// identical values and flatten to one block.
struct ModelParams : EdgeArrays {
  Eigen::VectorXd gamma;
  PrecisionRepr q_repr;
  PrecisionRepr r_repr;
  std::vector<std::vector<Slot>> sharing;

  std::size_t num_edges() const { return alpha.size(); }

  /// Tie class containing `s`, if any.
  const std::vector<Slot>* tie_class(const Slot& s) const {
    for (const auto& cls : sharing)
      if (std::find(cls.begin(), cls.end(), s) != cls.end()) return &cls;
    return nullptr;
  }

  /// Writes `values` into `s` and every slot tied to it.
  void set_slot(const Slot& s, const Eigen::VectorXd& values) {
    if (const auto* cls = tie_class(s)) {
      for (const auto& t : *cls) group(t.group).at(t.edge) = values;
    } else {
      group(s.group).at(s.edge) = values;
    }
  }

  /// Flat concatenation of trainable hazard parameters in edge order.
  Eigen::VectorXd extra() const {
    Eigen::Index n = 0;
    for (const auto& h : hazard) n += h.size();
    Eigen::VectorXd out(n);
    Eigen::Index k = 0;
    for (const auto& h : hazard) {
      out.segment(k, h.size()) = h;
      k += h.size();
    }
    return out;
  }

  void validate() const {
    if (beta.size() != alpha.size() || hazard.size() != alpha.size())
      throw ValidationError("params: alpha/beta/hazard must cover the same edges");
    for (const auto& cls : sharing) {
      if (cls.size() < 2) throw ValidationError("params: a tie class needs at least two slots");
      for (const auto& s : cls) {
        if (s.edge >= alpha.size())
          throw ValidationError("params: tie class references edge index " + std::to_string(s.edge) +
                                " out of range");
        const auto& v0 = group(cls.front().group)[cls.front().edge];
        const auto& v = group(s.group)[s.edge];
        if (v.size() != v0.size())
          throw ValidationError("params: tied slots " + to_string(s.group) + " and " +
                                to_string(cls.front().group) + " differ in length");
        if (v != v0) throw ValidationError("params: tied slots must hold identical values");
      }
    }
    for (std::size_t a = 0; a < sharing.size(); ++a)
      for (std::size_t b = a + 1; b < sharing.size(); ++b)
        for (const auto& s : sharing[a])
          if (std::find(sharing[b].begin(), sharing[b].end(), s) != sharing[b].end())
            throw ValidationError("params: a slot belongs to two tie classes");
  }
};

/// Gradient with respect to every (untied) parameter array.
struct ParamGradient : EdgeArrays {
  Eigen::VectorXd gamma;
  Eigen::VectorXd q;
  Eigen::VectorXd r;

  static ParamGradient zeros_like(const ModelParams& p) {
    ParamGradient g;
    g.gamma = Eigen::VectorXd::Zero(p.gamma.size());
    g.q = Eigen::VectorXd::Zero(p.q_repr.values().size());
    g.r = Eigen::VectorXd::Zero(p.r_repr.values().size());
    auto zero = [](const std::vector<Eigen::VectorXd>& src) {
      std::vector<Eigen::VectorXd> out;
      out.reserve(src.size());
      for (const auto& v : src) out.push_back(Eigen::VectorXd::Zero(v.size()));
      return out;
    };
    g.alpha = zero(p.alpha);
    g.beta = zero(p.beta);
    g.hazard = zero(p.hazard);
    return g;
  }

  ParamGradient& operator+=(const ParamGradient& o) {
    gamma += o.gamma;
    q += o.q;
    r += o.r;
    for (std::size_t e = 0; e < alpha.size(); ++e) {
      alpha[e] += o.alpha[e];
      beta[e] += o.beta[e];
      hazard[e] += o.hazard[e];
    }
    return *this;
  }

  ParamGradient& operator*=(double c) {
    gamma *= c;
    q *= c;
    r *= c;
    for (std::size_t e = 0; e < alpha.size(); ++e) {
      alpha[e] *= c;
      beta[e] *= c;
      hazard[e] *= c;
    }
    return *this;
  }

  void set_zero() {
    gamma.setZero();
    q.setZero();
    r.setZero();
    for (std::size_t e = 0; e < alpha.size(); ++e) {
      alpha[e].setZero();
      beta[e].setZero();
      hazard[e].setZero();
    }
  }
};

/// Mapping between ModelParams and the flat vector of free scalars.
///
/// Order: gamma, Q~, R~, then alpha, beta and hazard slots by edge index.
/// A tie class contributes one block at the position of its first member.
class ParamLayout {
 public:
  struct Block {
    enum class Kind { gamma, q, r, slot } kind = Kind::gamma;
    std::vector<Slot> slots;  // for Kind::slot: every slot the block feeds
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  explicit ParamLayout(const ModelParams& p) {
    p.validate();
    add(Block::Kind::gamma, {}, static_cast<std::size_t>(p.gamma.size()));
    add(Block::Kind::q, {}, static_cast<std::size_t>(p.q_repr.values().size()));
    add(Block::Kind::r, {}, static_cast<std::size_t>(p.r_repr.values().size()));
    for (ParamGroup g : {ParamGroup::alpha, ParamGroup::beta, ParamGroup::hazard}) {
      const auto& arr = p.group(g);
      for (std::size_t e = 0; e < arr.size(); ++e) {
        Slot s{g, e};
        if (arr[e].size() == 0) continue;
        if (const auto* cls = p.tie_class(s)) {
          bool emitted = std::any_of(blocks_.begin(), blocks_.end(), [&](const Block& b) {
            return b.kind == Block::Kind::slot && b.slots == *cls;
          });
          if (!emitted) add(Block::Kind::slot, *cls, static_cast<std::size_t>(arr[e].size()));
        } else {
          add(Block::Kind::slot, {s}, static_cast<std::size_t>(arr[e].size()));
        }
      }
    }
  }

  std::size_t size() const { return size_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  Eigen::VectorXd flatten(const ModelParams& p) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(size_));
    for (const auto& b : blocks_) out.segment(off(b), len(b)) = source(p, b);
    return out;
  }

  ModelParams unflatten(const Eigen::VectorXd& v, const ModelParams& templ) const {
    if (static_cast<std::size_t>(v.size()) != size_)
      throw ValidationError("unflatten: expected " + std::to_string(size_) + " values, got " +
                            std::to_string(v.size()));
    ModelParams p = templ;
    for (const auto& b : blocks_) {
      Eigen::VectorXd seg = v.segment(off(b), len(b));
      switch (b.kind) {
        case Block::Kind::gamma: p.gamma = seg; break;
        case Block::Kind::q: p.q_repr.set_values(seg); break;
        case Block::Kind::r: p.r_repr.set_values(seg); break;
        case Block::Kind::slot:
          for (const auto& s : b.slots) p.group(s.group)[s.edge] = seg;
          break;
      }
    }
    return p;
  }

  /// Flat gradient; tied slots accumulate.
  Eigen::VectorXd flatten_gradient(const ParamGradient& g) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size_));
    for (const auto& b : blocks_) {
      switch (b.kind) {
        case Block::Kind::gamma: out.segment(off(b), len(b)) = g.gamma; break;
        case Block::Kind::q: out.segment(off(b), len(b)) = g.q; break;
        case Block::Kind::r: out.segment(off(b), len(b)) = g.r; break;
        case Block::Kind::slot:
          for (const auto& s : b.slots) out.segment(off(b), len(b)) += g.group(s.group)[s.edge];
          break;
      }
    }
    return out;
  }

  /// One readable name per flat coordinate, 1-based within each block.
  std::vector<std::string> names(const TransitionGraph& graph) const {
    std::vector<std::string> out;
    for (const auto& b : blocks_) {
      std::string base;
      switch (b.kind) {
        case Block::Kind::gamma: base = "gamma"; break;
        case Block::Kind::q: base = "Q"; break;
        case Block::Kind::r: base = "R"; break;
        case Block::Kind::slot: {
          base = to_string(b.slots.front().group) + "[";
          for (std::size_t i = 0; i < b.slots.size(); ++i) {
            if (i) base += ",";
            base += to_string(graph.edge(b.slots[i].edge));
          }
          base += "]";
          break;
        }
      }
      for (std::size_t j = 0; j < b.length; ++j) out.push_back(base + "_" + std::to_string(j + 1));
    }
    return out;
  }

 private:
  static Eigen::Index off(const Block& b) { return static_cast<Eigen::Index>(b.offset); }
  static Eigen::Index len(const Block& b) { return static_cast<Eigen::Index>(b.length); }

  static Eigen::VectorXd source(const ModelParams& p, const Block& b) {
    switch (b.kind) {
      case Block::Kind::gamma: return p.gamma;
      case Block::Kind::q: return p.q_repr.values();
      case Block::Kind::r: return p.r_repr.values();
      case Block::Kind::slot: return p.group(b.slots.front().group)[b.slots.front().edge];
    }
    return {};
  }

  void add(Block::Kind kind, std::vector<Slot> slots, std::size_t length) {
    if (length == 0 && kind == Block::Kind::slot) return;
    blocks_.push_back({kind, std::move(slots), size_, length});
    size_ += length;
  }

  std::vector<Block> blocks_;
  std::size_t size_ = 0;
};

inline Eigen::VectorXd flatten(const ModelParams& p) { return ParamLayout(p).flatten(p); }

inline ModelParams unflatten(const Eigen::VectorXd& v, const ModelParams& templ) {
  return ParamLayout(templ).unflatten(v, templ);
}

}  // namespace jmstate
