#pragma once

// KL projection of a nonnegative prior onto the set of plans with prescribed
// row and column sums, by alternating diagonal scaling.
//
// The plan is always represented as diag(a) * X * diag(b). Scalings of states
// with zero marginal mass are fixed at 0, so the plan vanishes on those rows
// and columns and wherever the prior vanishes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "aggmarkov/core_model.hpp"

namespace aggmarkov {

struct ScalingPair {
  Vector row;  // a
  Vector col;  // b

  static ScalingPair ones(Eigen::Index n) { return {Vector::Ones(n), Vector::Ones(n)}; }
};

enum class SinkhornStatus { Converged, MaxIterations, InfeasibleSupport };

constexpr std::string_view to_string(SinkhornStatus s) {
  switch (s) {
    case SinkhornStatus::Converged: return "Converged";
    case SinkhornStatus::MaxIterations: return "MaxIterations";
    case SinkhornStatus::InfeasibleSupport: return "InfeasibleSupport";
  }
  return "Unknown";
}

struct SinkhornReport {
  std::size_t iterations = 0;
  /// max of the relative L1 residuals of the row and column marginals
  double final_marginal_residual = kInfinite;
  SinkhornStatus status = SinkhornStatus::MaxIterations;
  bool log_domain = false;
};

struct SinkhornOptions {
  double tol = 1e-9;
  std::size_t max_iter = 100000;
  /// Sweeps to run before testing the residual at all; 0 means test every sweep.
  std::size_t min_iter = 0;
  std::size_t renormalize_every = 20;
  /// Positive prior entries below this switch the solver to log-domain updates.
  double log_domain_threshold = 1e-100;
  std::size_t stagnation_window = 100;
  double stagnation_improvement = 1e-16;
};

struct Projection {
  TransportPlan plan;
  ScalingPair scalings;
  SinkhornReport report;
};

namespace detail {

inline void require_square_prior(const Matrix& prior, Eigen::Index n) {
  if (prior.rows() != n || prior.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "prior is " + index_str(prior.rows()) + "x" +
                                              index_str(prior.cols()) + ", marginals have " +
                                              index_str(n) + " states");
  }
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Max flow from the mu-supply through the prior's support pattern to the
/// nu-demand. The marginals are reachable on that pattern iff the flow
/// saturates the total mass.
inline double support_max_flow(const Matrix& prior, const Vector& mu, const Vector& nu) {
  const Eigen::Index n = mu.size();
  const Eigen::Index nodes = 2 * n + 2;
  const Eigen::Index source = 2 * n;
  const Eigen::Index sink = 2 * n + 1;
  Matrix cap = Matrix::Zero(nodes, nodes);
  const double big = mu.sum() + nu.sum() + 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cap(source, i) = mu[i];
    cap(n + i, sink) = nu[i];
    for (Eigen::Index j = 0; j < n; ++j) {
      if (prior(i, j) > 0.0 && mu[i] > 0.0 && nu[j] > 0.0) cap(i, n + j) = big;
    }
  }
  const double eps = 1e-15 * big;
  double flow = 0.0;
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(nodes));
  while (true) {
    std::fill(parent.begin(), parent.end(), -1);
    parent[static_cast<std::size_t>(source)] = source;
    std::queue<Eigen::Index> frontier;
    frontier.push(source);
    while (!frontier.empty() && parent[static_cast<std::size_t>(sink)] < 0) {
      const Eigen::Index u = frontier.front();
      frontier.pop();
      for (Eigen::Index v = 0; v < nodes; ++v) {
        if (parent[static_cast<std::size_t>(v)] < 0 && cap(u, v) > eps) {
          parent[static_cast<std::size_t>(v)] = u;
          frontier.push(v);
        }
      }
    }
    if (parent[static_cast<std::size_t>(sink)] < 0) break;
    double push = kInfinite;
    for (Eigen::Index v = sink; v != source; v = parent[static_cast<std::size_t>(v)]) {
      push = std::min(push, cap(parent[static_cast<std::size_t>(v)], v));
    }
    for (Eigen::Index v = sink; v != source; v = parent[static_cast<std::size_t>(v)]) {
      const Eigen::Index u = parent[static_cast<std::size_t>(v)];
      cap(u, v) -= push;
      cap(v, u) += push;
    }
    flow += push;
  }
  return flow;
}

inline double log_sum_exp(const double* terms, Eigen::Index count) {
  double hi = -kInfinite;
  for (Eigen::Index k = 0; k < count; ++k) hi = std::max(hi, terms[k]);
  if (hi == -kInfinite) return -kInfinite;
  double acc = 0.0;
  for (Eigen::Index k = 0; k < count; ++k) acc += std::exp(terms[k] - hi);
  return hi + std::log(acc);
}

}  // namespace detail

/// Exact reachability test: can a plan supported on the nonzeros of `prior`
/// carry `pair`'s marginals?
inline bool support_feasible(const Matrix& prior, const MarginalPair& pair) {
  detail::require_square_prior(prior, pair.size());
  const double s = pair.mass();
  if (s <= 0.0) return true;
  const double flow = detail::support_max_flow(prior, pair.mu().weights(), pair.nu().weights());
  return flow >= s * (1.0 - 1e-9);
}

/// max(|M1 - mu|_1, |M^T 1 - nu|_1) / s
inline double marginal_residual(const TransportPlan& plan, const MarginalPair& pair) {
  const double s = pair.mass() > 0.0 ? pair.mass() : 1.0;
  const double rows = (plan.rowwise().sum() - pair.mu().weights()).lpNorm<1>();
  const double cols = (plan.colwise().sum().transpose() - pair.nu().weights()).lpNorm<1>();
  return std::max(rows, cols) / s;
}

inline TransportPlan plan_from_scalings(const Matrix& prior, const ScalingPair& s) {
  if (s.row.size() != prior.rows() || s.col.size() != prior.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "scalings do not match the prior");
  }
  TransportPlan plan(prior.rows(), prior.cols());
  for (Eigen::Index j = 0; j < prior.cols(); ++j) {
    for (Eigen::Index i = 0; i < prior.rows(); ++i) {
      const double x = prior(i, j);
      // 0 * anything = 0, including infinite scalings.
      plan(i, j) = (x == 0.0 || s.row[i] == 0.0 || s.col[j] == 0.0) ? 0.0 : s.row[i] * x * s.col[j];
    }
  }
  return plan;
}

/// One full scaling update: a <- mu / (X b), then b <- nu / (X^T a).
/// Zero marginal entries force the matching scaling to zero.
inline ScalingPair sinkhorn_sweep(const ScalingPair& state, const Matrix& prior, const MarginalPair& pair) {
  const Eigen::Index n = pair.size();
  detail::require_square_prior(prior, n);
  if (state.row.size() != n || state.col.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "scalings do not match the marginals");
  }
  const Vector& mu = pair.mu().weights();
  const Vector& nu = pair.nu().weights();
  ScalingPair next{Vector(n), Vector(n)};
  const Vector xb = prior * state.col;
  for (Eigen::Index i = 0; i < n; ++i) next.row[i] = mu[i] > 0.0 ? mu[i] / xb[i] : 0.0;
  const Vector xta = prior.transpose() * next.row;
  for (Eigen::Index j = 0; j < n; ++j) next.col[j] = nu[j] > 0.0 ? nu[j] / xta[j] : 0.0;
  if (!detail::all_finite(next.row) || !detail::all_finite(next.col)) {
    throw Error(ErrorCode::NonFinite, "scaling update overflowed or divided by zero");
  }
  return next;
}

namespace detail {

struct StagnationGuard {
  std::size_t window;
  double min_improvement;
  std::deque<double> history;

  /// True when the residual improved by less than `min_improvement` over the
  /// last `window` sweeps.
  bool stalled(double residual) {
    history.push_back(residual);
    if (history.size() <= window) return false;
    const double old = history.front();
    history.pop_front();
    return old - residual < min_improvement;
  }
};

inline void finish_stall(SinkhornReport& report) {
  // Residual stuck at rounding level: nothing more to gain.
  if (report.final_marginal_residual <= 1e-10) {
    report.status = SinkhornStatus::MaxIterations;
    return;
  }
  throw Error(ErrorCode::InfeasibleSupport,
              "marginal residual stagnated at " + std::to_string(report.final_marginal_residual));
}

inline bool needs_log_domain(const Matrix& prior, double threshold) {
  for (Eigen::Index j = 0; j < prior.cols(); ++j) {
    for (Eigen::Index i = 0; i < prior.rows(); ++i) {
      const double x = prior(i, j);
      if (x > 0.0 && x < threshold) return true;
    }
  }
  return false;
}

inline Projection project_scaling_domain(const Matrix& prior, const MarginalPair& pair,
                                         const SinkhornOptions& opt, ScalingPair scalings) {
  Projection out;
  StagnationGuard guard{opt.stagnation_window, opt.stagnation_improvement, {}};
  for (std::size_t k = 1; k <= opt.max_iter; ++k) {
    scalings = sinkhorn_sweep(scalings, prior, pair);
    if (opt.renormalize_every > 0 && k % opt.renormalize_every == 0) {
      const double c = scalings.row.maxCoeff();
      if (c > 0.0 && std::isfinite(c)) {
        scalings.row /= c;
        scalings.col *= c;
      }
    }
    out.report.iterations = k;
    if (k < opt.min_iter) continue;
    out.plan = plan_from_scalings(prior, scalings);
    out.report.final_marginal_residual = marginal_residual(out.plan, pair);
    if (out.report.final_marginal_residual <= opt.tol) {
      out.report.status = SinkhornStatus::Converged;
      break;
    }
    if (guard.stalled(out.report.final_marginal_residual)) {
      finish_stall(out.report);
      break;
    }
  }
  if (out.plan.size() == 0) out.plan = plan_from_scalings(prior, scalings);
  out.scalings = std::move(scalings);
  return out;
}

inline Projection project_log_domain(const Matrix& prior, const MarginalPair& pair,
                                     const SinkhornOptions& opt, const ScalingPair& start) {
  const Eigen::Index n = pair.size();
  const Vector& mu = pair.mu().weights();
  const Vector& nu = pair.nu().weights();
  const double neg_inf = -kInfinite;
  Matrix log_prior(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      log_prior(i, j) = prior(i, j) > 0.0 ? std::log(prior(i, j)) : neg_inf;

  auto log_of = [&](double x) { return x > 0.0 && std::isfinite(x) ? std::log(x) : (x > 0.0 ? 0.0 : neg_inf); };
  Vector alpha(n), beta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    alpha[i] = mu[i] > 0.0 ? log_of(start.row[i]) : neg_inf;
    beta[i] = nu[i] > 0.0 ? log_of(start.col[i]) : neg_inf;
    if (mu[i] > 0.0 && alpha[i] == neg_inf) alpha[i] = 0.0;
    if (nu[i] > 0.0 && beta[i] == neg_inf) beta[i] = 0.0;
  }

  auto assemble = [&]() {
    TransportPlan plan(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = alpha[i] + log_prior(i, j) + beta[j];
        plan(i, j) = e == neg_inf || std::isnan(e) ? 0.0 : std::exp(e);
      }
    return plan;
  };

  Projection out;
  out.report.log_domain = true;
  StagnationGuard guard{opt.stagnation_window, opt.stagnation_improvement, {}};
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (std::size_t k = 1; k <= opt.max_iter; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (mu[i] <= 0.0) continue;
      for (Eigen::Index j = 0; j < n; ++j) terms[static_cast<std::size_t>(j)] = log_prior(i, j) + beta[j];
      alpha[i] = std::log(mu[i]) - log_sum_exp(terms.data(), n);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (nu[j] <= 0.0) continue;
      for (Eigen::Index i = 0; i < n; ++i) terms[static_cast<std::size_t>(i)] = log_prior(i, j) + alpha[i];
      beta[j] = std::log(nu[j]) - log_sum_exp(terms.data(), n);
    }
    if (!alpha.array().isNaN().any() && !beta.array().isNaN().any()) {
      // keep max alpha at 0; the plan is unchanged
      double shift = neg_inf;
      for (Eigen::Index i = 0; i < n; ++i) shift = std::max(shift, alpha[i]);
      if (std::isfinite(shift)) {
        for (Eigen::Index i = 0; i < n; ++i) alpha[i] -= shift;
        for (Eigen::Index j = 0; j < n; ++j) beta[j] += shift;
      }
    } else {
      throw Error(ErrorCode::NonFinite, "log-domain scaling produced NaN");
    }
    out.report.iterations = k;
    if (k < opt.min_iter) continue;
    out.plan = assemble();
    out.report.final_marginal_residual = marginal_residual(out.plan, pair);
    if (out.report.final_marginal_residual <= opt.tol) {
      out.report.status = SinkhornStatus::Converged;
      break;
    }
    if (guard.stalled(out.report.final_marginal_residual)) {
      finish_stall(out.report);
      break;
    }
  }
  if (out.plan.size() == 0) out.plan = assemble();
  out.scalings.row = alpha.array().exp();
  out.scalings.col = beta.array().exp();
  return out;
}

}  // namespace detail

/// Minimizes D(M | prior) subject to M 1 = mu, M^T 1 = nu.
///
/// Throws InfeasibleSupport when the prior's zero pattern cannot carry the
/// marginals (exact pre-check, plus a stagnation guard at run time) and
/// NonFinite when even log-domain updates break down. `start` warm-starts the
/// scalings; by default a = b = 1.
inline Projection kl_project(const Matrix& prior, const MarginalPair& pair, const SinkhornOptions& opt = {},
                             const ScalingPair* start = nullptr) {
  const Eigen::Index n = pair.size();
  detail::require_square_prior(prior, n);
  detail::require_nonnegative(prior, "prior");
  if (!(opt.tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be positive");
  if (!support_feasible(prior, pair)) {
    throw Error(ErrorCode::InfeasibleSupport, "the prior's zero pattern cannot carry the marginals");
  }
  ScalingPair init = start != nullptr ? *start : ScalingPair::ones(n);
  if (init.row.size() != n || init.col.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "initial scalings do not match the marginals");
  }
  // A warm start with zeros where the marginals are now positive would be stuck.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(init.row[i] > 0.0) || !std::isfinite(init.row[i])) init.row[i] = 1.0;
    if (!(init.col[i] > 0.0) || !std::isfinite(init.col[i])) init.col[i] = 1.0;
  }
  if (detail::needs_log_domain(prior, opt.log_domain_threshold)) {
    return detail::project_log_domain(prior, pair, opt, init);
  }
  try {
    return detail::project_scaling_domain(prior, pair, opt, init);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFinite) throw;
    return detail::project_log_domain(prior, pair, opt, ScalingPair::ones(n));
  }
}

}  // namespace aggmarkov
