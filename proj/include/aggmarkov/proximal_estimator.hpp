#pragma once

// Entropic proximal scheme for the joint transport/transition program.
//
// Each outer iteration KL-projects the current aggregate X onto every pair's
// transportation polytope and rebuilds X as the sum of the projected plans.
// The transition estimate is the row normalization of the final aggregate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "aggmarkov/core_model.hpp"
#include "aggmarkov/sinkhorn.hpp"

namespace aggmarkov {

enum class InnerMode { FullConvergence, Sweeps };

enum class EstimateStatus { Converged, MaxIterations };

constexpr std::string_view to_string(EstimateStatus s) {
  return s == EstimateStatus::Converged ? "Converged" : "MaxIterations";
}

enum class StopReason { AggregateChange, ObjectivePlateau, MaxIterations };

constexpr std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::AggregateChange: return "AggregateChange";
    case StopReason::ObjectivePlateau: return "ObjectivePlateau";
    case StopReason::MaxIterations: return "MaxIterations";
  }
  return "Unknown";
}

struct EstimatorConfig {
  /// Stop when max|X_k - X_{k-1}| / max|X_k| falls to this level.
  double outer_tol = 1e-8;
  std::size_t max_outer = 1000;
  InnerMode inner_mode = InnerMode::FullConvergence;
  /// Minimum Sinkhorn sweeps per projection in Sweeps mode.
  std::size_t sweeps = 1;
  /// Marginal tolerance of each projection in FullConvergence mode. Marginal
  /// errors move the objective by about the same amount, so this also bounds
  /// how far the recorded history can stray from monotone descent.
  double inner_tol = 1e-12;
  std::size_t inner_max_iter = 100000;
  /// Inexact schedule eta_k = eta0 * decay^k, used in Sweeps mode.
  double inner_tol_eta0 = 1e-2;
  double inner_tol_decay = 0.9;
  double inner_tol_floor = 1e-12;
  /// Proximal weight. The scheme is only defined for 1.
  double epsilon = 1.0;
  /// Optional early stop: objective changes at or below `plateau_tol` for
  /// `plateau_count` consecutive iterations end the run (0 disables it). An
  /// objective plateau arrives while X still moves by ~1e-7, so it is off by
  /// default.
  double plateau_tol = 1e-12;
  std::size_t plateau_count = 0;
  /// Reuse each pair's scalings from the previous outer iteration.
  bool warm_start = true;
  unsigned threads = 1;

  void validate() const {
    if (!(outer_tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "outer_tol must be positive");
    if (max_outer == 0) throw Error(ErrorCode::InvalidArgument, "max_outer must be at least 1");
    if (epsilon != 1.0) throw Error(ErrorCode::InvalidArgument, "epsilon must be 1");
    if (!(inner_tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "inner_tol must be positive");
    if (!(inner_tol_decay > 0.0 && inner_tol_decay < 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "inner_tol_decay must lie in (0, 1)");
    }
    if (inner_mode == InnerMode::Sweeps && sweeps == 0) {
      throw Error(ErrorCode::InvalidArgument, "sweeps must be at least 1");
    }
  }

  /// Projection tolerance at outer iteration k (1-based).
  double inner_tolerance(std::size_t k) const {
    if (inner_mode == InnerMode::FullConvergence) return inner_tol;
    return std::max(inner_tol_floor, inner_tol_eta0 * std::pow(inner_tol_decay, static_cast<double>(k)));
  }
};

struct EstimateResult {
  std::vector<TransportPlan> plans;
  AggregatePlan aggregate;
  TransitionMatrix transition;
  std::vector<bool> zero_row_flags;
  /// Objective after initialization (cold starts only) and after every outer
  /// iteration.
  std::vector<double> objective_history;
  std::size_t outer_iterations = 0;
  EstimateStatus status = EstimateStatus::MaxIterations;
  StopReason stop_reason = StopReason::MaxIterations;
  /// Relative max-norm change of the aggregate in the last iteration.
  double last_change = kInfinite;
  /// The same change for every outer iteration.
  std::vector<double> change_history;
  /// Largest marginal residual among the final projections.
  double max_marginal_residual = 0.0;
  std::size_t inner_sweeps = 0;
};

/// sum_t D(M_t | xbar); kInfinite when a plan leaves the aggregate's support.
inline double objective_value(const std::vector<TransportPlan>& plans, const AggregatePlan& xbar) {
  double total = 0.0;
  for (const auto& plan : plans) {
    const double d = kl_divergence(plan, xbar);
    if (d == kInfinite) return kInfinite;
    total += d;
  }
  return total;
}

/// sum_t D(M_t | diag(mu_t) A), the objective before A is eliminated.
inline double objective_original(const std::vector<TransportPlan>& plans, const ObservationSet& obs,
                                 const TransitionMatrix& a) {
  if (plans.size() != obs.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one plan per observation pair is required");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < plans.size(); ++t) {
    const Matrix prior = obs.pairs[t].mu().weights().asDiagonal() * a.entries();
    const double d = kl_divergence(plans[t], prior);
    if (d == kInfinite) return kInfinite;
    total += d;
  }
  return total;
}

namespace detail {

inline AggregatePlan sum_plans(const std::vector<TransportPlan>& plans, Eigen::Index n) {
  AggregatePlan x = AggregatePlan::Zero(n, n);
  for (const auto& plan : plans) x += plan;
  return x;
}

inline void apply_mask(Matrix& m, const BoolMatrix& mask) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!mask(i, j)) m(i, j) = 0.0;
}

inline double relative_change(const Matrix& next, const Matrix& prev) {
  const double scale = next.cwiseAbs().maxCoeff();
  const double diff = (next - prev).cwiseAbs().maxCoeff();
  return scale > 0.0 ? diff / scale : diff;
}

template <typename Fn>
void for_each_index(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t t = 0; t < count; ++t) fn(t);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, count);
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t t = w; t < count; t += workers) fn(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Runs the proximal scheme on `obs`. With `initial_aggregate`, the first
/// projection starts from that aggregate instead of the product couplings.
///
/// Throws Infeasible when a projection cannot meet its marginals on the
/// current support. Running out of iterations is reported through `status`.
inline EstimateResult estimate(const ObservationSet& obs, const EstimatorConfig& cfg = {},
                               const AggregatePlan* initial_aggregate = nullptr) {
  cfg.validate();
  if (obs.pairs.empty()) throw Error(ErrorCode::EmptyInput, "no observation pairs");
  const Eigen::Index n = obs.n;
  const std::size_t count = obs.size();

  EstimateResult result;
  result.plans.resize(count);
  AggregatePlan x;
  if (initial_aggregate != nullptr) {
    if (initial_aggregate->rows() != n || initial_aggregate->cols() != n) {
      throw Error(ErrorCode::ShapeMismatch, "initial aggregate does not match the observations");
    }
    detail::require_nonnegative(*initial_aggregate, "initial aggregate");
    x = *initial_aggregate;
    detail::apply_mask(x, obs.support_mask);
  } else {
    for (std::size_t t = 0; t < count; ++t) result.plans[t] = independent_coupling(obs.pairs[t]);
    x = detail::sum_plans(result.plans, n);
    detail::apply_mask(x, obs.support_mask);
    result.objective_history.push_back(objective_value(result.plans, x));
  }

  std::vector<ScalingPair> scalings(count, ScalingPair::ones(n));
  std::vector<SinkhornReport> reports(count);
  std::size_t plateau_run = 0;

  for (std::size_t k = 1; k <= cfg.max_outer; ++k) {
    SinkhornOptions opt;
    opt.tol = cfg.inner_tolerance(k);
    opt.max_iter = cfg.inner_max_iter;
    opt.min_iter = cfg.inner_mode == InnerMode::Sweeps ? cfg.sweeps : 0;

    detail::for_each_index(count, cfg.threads, [&](std::size_t t) {
      Projection p;
      try {
        p = kl_project(x, obs.pairs[t], opt, cfg.warm_start ? &scalings[t] : nullptr);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::InfeasibleSupport) {
          throw Error(ErrorCode::Infeasible, "pair " + std::to_string(t) + ": " + e.what());
        }
        throw;
      }
      result.plans[t] = std::move(p.plan);
      scalings[t] = std::move(p.scalings);
      reports[t] = p.report;
    });

    AggregatePlan next = detail::sum_plans(result.plans, n);
    result.last_change = detail::relative_change(next, x);
    result.change_history.push_back(result.last_change);
    x = std::move(next);
    result.outer_iterations = k;
    for (const auto& r : reports) result.inner_sweeps += r.iterations;

    const double f = objective_value(result.plans, x);
    const bool flat = !result.objective_history.empty() &&
                      std::abs(result.objective_history.back() - f) <= cfg.plateau_tol;
    plateau_run = flat ? plateau_run + 1 : 0;
    result.objective_history.push_back(f);

    if (result.last_change <= cfg.outer_tol) {
      result.status = EstimateStatus::Converged;
      result.stop_reason = StopReason::AggregateChange;
      break;
    }
    if (cfg.plateau_count > 0 && plateau_run >= cfg.plateau_count) {
      result.status = EstimateStatus::Converged;
      result.stop_reason = StopReason::ObjectivePlateau;
      break;
    }
  }

  result.max_marginal_residual = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    result.max_marginal_residual =
        std::max(result.max_marginal_residual, marginal_residual(result.plans[t], obs.pairs[t]));
  }
  result.aggregate = std::move(x);
  auto recovered = recover_transition(result.aggregate, ZeroRowPolicy::UniformRow);
  result.transition = std::move(recovered.transition);
  result.zero_row_flags = std::move(recovered.zero_rows);
  return result;
}

}  // namespace aggmarkov
