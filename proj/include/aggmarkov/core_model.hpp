#pragma once

// Domain types shared by every stage of the estimator: marginal snapshots,
// transport plans, row-stochastic transition matrices, and the handful of
// closed-form operations on them (KL divergence, row normalization, product
// couplings).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "aggmarkov/error.hpp"

namespace aggmarkov {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Mass moved from state i to state j between two snapshots.
using TransportPlan = Matrix;
/// Entrywise sum of the transport plans of all observed pairs.
using AggregatePlan = Matrix;

inline constexpr double kInfinite = std::numeric_limits<double>::infinity();
inline constexpr double kMassTolerance = 1e-9;
inline constexpr double kRowSumTolerance = 1e-12;

namespace detail {

inline std::string index_str(Eigen::Index i) { return std::to_string(static_cast<long long>(i)); }

template <typename Derived>
void require_nonnegative(const Eigen::DenseBase<Derived>& x, const char* what) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, j);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFinite, std::string(what) + " has a non-finite entry");
      }
      if (v < 0.0) {
        throw Error(ErrorCode::NonnegativityViolation,
                    std::string(what) + " has a negative entry at (" + index_str(i) + "," +
                        index_str(j) + ")");
      }
    }
  }
}

inline bool masses_agree(double a, double b) {
  return std::abs(a - b) <= kMassTolerance * std::max(a, 1.0);
}

}  // namespace detail

/// Nonnegative weights over the n states, in mass units (not necessarily
/// normalized).
class Distribution {
 public:
  Distribution() = default;

  explicit Distribution(Vector weights) : weights_(std::move(weights)) {
    detail::require_nonnegative(weights_, "distribution");
    mass_ = weights_.sum();
  }

  Distribution(std::initializer_list<double> values)
      : Distribution(Eigen::Map<const Vector>(values.begin(), static_cast<Eigen::Index>(values.size()))) {}

  Eigen::Index size() const { return weights_.size(); }
  const Vector& weights() const { return weights_; }
  double mass() const { return mass_; }
  double operator[](Eigen::Index i) const { return weights_[i]; }

  Distribution normalized() const {
    if (mass_ <= 0.0) throw Error(ErrorCode::EmptyInput, "cannot normalize a zero-mass distribution");
    return Distribution(weights_ / mass_);
  }

  friend bool operator==(const Distribution& a, const Distribution& b) {
    return a.weights_.size() == b.weights_.size() && a.weights_ == b.weights_;
  }

 private:
  Vector weights_;
  double mass_ = 0.0;
};

/// One observed snapshot pair (mu, nu) sharing a common mass.
class MarginalPair {
 public:
  MarginalPair(Distribution mu, Distribution nu) : mu_(std::move(mu)), nu_(std::move(nu)) {
    if (mu_.size() != nu_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "mu has " + detail::index_str(mu_.size()) +
                                                " entries, nu has " + detail::index_str(nu_.size()));
    }
    if (!detail::masses_agree(mu_.mass(), nu_.mass())) {
      throw Error(ErrorCode::MassMismatch, "mu mass " + std::to_string(mu_.mass()) +
                                               " differs from nu mass " + std::to_string(nu_.mass()));
    }
  }

  const Distribution& mu() const { return mu_; }
  const Distribution& nu() const { return nu_; }
  double mass() const { return mu_.mass(); }
  Eigen::Index size() const { return mu_.size(); }

 private:
  Distribution mu_;
  Distribution nu_;
};

/// All observed pairs plus the mask of (i, j) cells that some pair can move
/// mass through. Cells outside the mask are pinned to zero everywhere.
struct ObservationSet {
  Eigen::Index n = 0;
  std::vector<MarginalPair> pairs;
  BoolMatrix support_mask;

  std::size_t size() const { return pairs.size(); }
};

/// Row-stochastic matrix of transition probabilities.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  /// Validates nonnegativity and unit row sums within `tol`.
  explicit TransitionMatrix(Matrix entries, double tol = kRowSumTolerance)
      : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols() || entries_.rows() == 0) {
      throw Error(ErrorCode::InvalidTransition, "transition matrix must be square and non-empty");
    }
    for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
      for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
        const double v = entries_(i, j);
        if (!std::isfinite(v) || v < 0.0) {
          throw Error(ErrorCode::InvalidTransition, "entry (" + detail::index_str(i) + "," +
                                                        detail::index_str(j) + ") is not a probability");
        }
      }
      const double row = entries_.row(i).sum();
      if (std::abs(row - 1.0) > tol) {
        throw Error(ErrorCode::InvalidTransition,
                    "row " + detail::index_str(i) + " sums to " + std::to_string(row));
      }
    }
  }

  /// Accepts rows within `tol` of one and rescales them to sum to one.
  static TransitionMatrix normalized_from(Matrix entries, double tol) {
    TransitionMatrix checked(entries, tol);
    for (Eigen::Index i = 0; i < entries.rows(); ++i) entries.row(i) /= entries.row(i).sum();
    return TransitionMatrix(std::move(entries));
  }

  Eigen::Index size() const { return entries_.rows(); }
  const Matrix& entries() const { return entries_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

 private:
  Matrix entries_;
};

/// D(p|q) = sum p log(p/q) with 0 log 0 = 0. Returns kInfinite when p puts
/// mass where q has none. May be negative when the masses of p and q differ.
template <typename DerivedP, typename DerivedQ>
double kl_divergence(const Eigen::DenseBase<DerivedP>& p, const Eigen::DenseBase<DerivedQ>& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "kl_divergence operands differ in shape");
  }
  double sum = 0.0;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double pi = p(i, j);
      const double qi = q(i, j);
      if (pi < 0.0 || qi < 0.0) {
        throw Error(ErrorCode::NonnegativityViolation, "kl_divergence operands must be nonnegative");
      }
      if (pi == 0.0) continue;
      if (qi == 0.0) return kInfinite;
      sum += pi * std::log(pi / qi);
    }
  }
  return sum;
}

enum class ZeroRowPolicy { Error, UniformRow };

struct RecoveredTransition {
  TransitionMatrix transition;
  /// True for rows of the aggregate that carried no mass.
  std::vector<bool> zero_rows;

  bool any_zero_row() const {
    for (bool z : zero_rows) if (z) return true;
    return false;
  }
};

/// Row-normalizes an aggregate plan. Rows without mass either raise ZeroRow
/// or become uniform and are flagged.
inline RecoveredTransition recover_transition(const AggregatePlan& xbar,
                                              ZeroRowPolicy on_zero_row = ZeroRowPolicy::UniformRow) {
  if (xbar.rows() != xbar.cols() || xbar.rows() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "aggregate plan must be square and non-empty");
  }
  detail::require_nonnegative(xbar, "aggregate plan");
  const Eigen::Index n = xbar.rows();
  Matrix a(n, n);
  std::vector<bool> flags(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double row = xbar.row(i).sum();
    if (row > 0.0) {
      a.row(i) = xbar.row(i) / row;
      // Rounding can leave the row a few ulps off one.
      a.row(i) /= a.row(i).sum();
    } else {
      if (on_zero_row == ZeroRowPolicy::Error) {
        throw Error(ErrorCode::ZeroRow, "row " + detail::index_str(i) + " of the aggregate is zero");
      }
      a.row(i).setConstant(1.0 / static_cast<double>(n));
      flags[static_cast<std::size_t>(i)] = true;
    }
  }
  return {TransitionMatrix(std::move(a)), std::move(flags)};
}

/// The product coupling mu nu^T / s, feasible for the pair by construction.
inline TransportPlan independent_coupling(const MarginalPair& pair) {
  const double s = pair.mass();
  if (s <= 0.0) throw Error(ErrorCode::EmptyInput, "pair carries no mass");
  return pair.mu().weights() * pair.nu().weights().transpose() / s;
}

/// Overload for raw vectors; checks mass consistency first.
inline TransportPlan independent_coupling(const Vector& mu, const Vector& nu) {
  return independent_coupling(MarginalPair(Distribution(mu), Distribution(nu)));
}

/// Cells (i, j) that at least one pair can route mass through.
inline BoolMatrix support_mask(const std::vector<MarginalPair>& pairs, Eigen::Index n) {
  BoolMatrix mask = BoolMatrix::Constant(n, n, false);
  for (const auto& pair : pairs) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (pair.mu()[i] <= 0.0) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (pair.nu()[j] > 0.0) mask(i, j) = true;
      }
    }
  }
  return mask;
}

/// Validates raw snapshot pairs and computes the support mask. With
/// `normalize`, each pair is scaled to unit mass before the mass check.
inline ObservationSet build_observation_set(const std::vector<std::pair<Vector, Vector>>& raw,
                                            bool normalize) {
  if (raw.empty()) throw Error(ErrorCode::EmptyInput, "no observation pairs");
  ObservationSet obs;
  obs.n = raw.front().first.size();
  if (obs.n == 0) throw Error(ErrorCode::EmptyInput, "observation vectors are empty");
  obs.pairs.reserve(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    const auto& [mu_raw, nu_raw] = raw[t];
    if (mu_raw.size() != obs.n || nu_raw.size() != obs.n) {
      throw Error(ErrorCode::ShapeMismatch, "pair " + std::to_string(t) + " has the wrong dimension");
    }
    Distribution mu(mu_raw);
    Distribution nu(nu_raw);
    if (mu.mass() <= 0.0 || nu.mass() <= 0.0) {
      throw Error(ErrorCode::EmptyInput, "pair " + std::to_string(t) + " carries no mass");
    }
    if (normalize) {
      mu = mu.normalized();
      nu = nu.normalized();
    }
    try {
      obs.pairs.emplace_back(std::move(mu), std::move(nu));
    } catch (const Error& e) {
      throw Error(e.code(), "pair " + std::to_string(t) + ": " + e.what());
    }
  }
  obs.support_mask = support_mask(obs.pairs, obs.n);
  return obs;
}

inline ObservationSet build_observation_set(std::vector<MarginalPair> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no observation pairs");
  ObservationSet obs;
  obs.n = pairs.front().size();
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    if (pairs[t].size() != obs.n) {
      throw Error(ErrorCode::ShapeMismatch, "pair " + std::to_string(t) + " has the wrong dimension");
    }
    if (pairs[t].mass() <= 0.0) {
      throw Error(ErrorCode::EmptyInput, "pair " + std::to_string(t) + " carries no mass");
    }
  }
  obs.pairs = std::move(pairs);
  obs.support_mask = support_mask(obs.pairs, obs.n);
  return obs;
}

inline double frobenius_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "frobenius_error operands differ in shape");
  }
  return (a - b).norm();
}

}  // namespace aggmarkov
