#pragma once

// Dual certificates for a converged estimate.
//
// At an optimum every plan factors as M_t = Mbar .* (u_t v_t^T) with
// sum_t u_t(i) v_t(j) <= 1, and equality wherever Mbar > 0. The scalings are
// read back from the primal ratios M_t ./ Mbar, then used for the dual value,
// the feasibility report, and the span tests that decide uniqueness.

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "aggmarkov/core_model.hpp"
#include "aggmarkov/proximal_estimator.hpp"

namespace aggmarkov {

struct DualScalings {
  std::vector<Vector> u;  // exp(lambda_t)
  std::vector<Vector> v;  // exp(rho_t)
  /// Factor c_t applied as (u_t, v_t) -> (u_t / c_t, c_t v_t) to make max_i u_t(i) = 1.
  std::vector<double> gauge;
  /// States whose scaling could not be read from the plan (zero marginal
  /// mass); they are set to 0, i.e. lambda = -infinity.
  std::vector<std::vector<bool>> u_extrapolated;
  std::vector<std::vector<bool>> v_extrapolated;
  /// Largest relative misfit |u v - M_t/Mbar| / (M_t/Mbar) over fitted cells.
  double max_fit_error = 0.0;

  std::size_t size() const { return u.size(); }
};

struct DualFitOptions {
  /// Cells with Mbar below this fraction of max(Mbar) carry too little mass to
  /// test the rank-one structure against.
  double significant_mass = 1e-6;
  double rank_one_tol = 1e-4;
  /// When false, a misfit is only recorded in max_fit_error.
  bool throw_on_misfit = true;
};

namespace detail {

inline double log_or_neg_inf(double x) { return x > 0.0 ? std::log(x) : -kInfinite; }

}  // namespace detail

/// Reads (u_t, v_t) off the ratios M_t ./ Mbar by a mass-weighted log-linear
/// fit. Throws NotRankOne when some ratio matrix is not u v^T within
/// `rank_one_tol` on cells carrying significant mass.
inline DualScalings extract_dual_scalings(const EstimateResult& result, const DualFitOptions& opt = {}) {
  const AggregatePlan& xbar = result.aggregate;
  const Eigen::Index n = xbar.rows();
  const double scale = xbar.maxCoeff();
  DualScalings out;
  for (std::size_t t = 0; t < result.plans.size(); ++t) {
    const TransportPlan& plan = result.plans[t];
    const Vector rows = plan.rowwise().sum();
    const Vector cols = plan.colwise().sum().transpose();

    std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (xbar(i, j) > 0.0 && plan(i, j) > 0.0) cells.emplace_back(i, j);

    const auto m = static_cast<Eigen::Index>(cells.size());
    Matrix design = Matrix::Zero(m, 2 * n);
    Vector target(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto [i, j] = cells[static_cast<std::size_t>(k)];
      const double w = std::sqrt(xbar(i, j) / scale);
      design(k, i) = w;
      design(k, n + j) = w;
      target[k] = w * std::log(plan(i, j) / xbar(i, j));
    }
    Vector coef = Vector::Zero(2 * n);
    if (m > 0) coef = design.completeOrthogonalDecomposition().solve(target);

    Vector lambda = coef.head(n);
    Vector rho = coef.tail(n);
    std::vector<bool> u_flag(static_cast<std::size_t>(n), false), v_flag(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (rows[i] <= 0.0) {
        lambda[i] = -kInfinite;
        u_flag[static_cast<std::size_t>(i)] = true;
      }
      if (cols[i] <= 0.0) {
        rho[i] = -kInfinite;
        v_flag[static_cast<std::size_t>(i)] = true;
      }
    }

    for (const auto& [i, j] : cells) {
      if (xbar(i, j) < opt.significant_mass * scale) continue;
      const double ratio = plan(i, j) / xbar(i, j);
      const double fitted = std::exp(lambda[i] + rho[j]);
      const double err = std::abs(fitted - ratio) / ratio;
      out.max_fit_error = std::max(out.max_fit_error, err);
      if (err > opt.rank_one_tol && opt.throw_on_misfit) {
        throw Error(ErrorCode::NotRankOne, "plan " + std::to_string(t) + " ratio at (" + detail::index_str(i) +
                                               "," + detail::index_str(j) + ") misfit " + std::to_string(err));
      }
    }

    double shift = -kInfinite;
    for (Eigen::Index i = 0; i < n; ++i) shift = std::max(shift, lambda[i]);
    if (!std::isfinite(shift)) shift = 0.0;
    Vector u(n), v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      u[i] = std::exp(lambda[i] - shift);
      v[i] = std::exp(rho[i] + shift);
    }
    out.u.push_back(std::move(u));
    out.v.push_back(std::move(v));
    out.gauge.push_back(std::exp(shift));
    out.u_extrapolated.push_back(std::move(u_flag));
    out.v_extrapolated.push_back(std::move(v_flag));
  }
  return out;
}

/// sum_t lambda_t^T mu_t + rho_t^T nu_t, with 0 * (-infinity) taken as 0.
inline double dual_objective(const std::vector<Vector>& lambdas, const std::vector<Vector>& rhos,
                             const ObservationSet& obs) {
  if (lambdas.size() != obs.size() || rhos.size() != obs.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one multiplier pair per observation pair is required");
  }
  auto dot = [](const Vector& mult, const Vector& mass) {
    if (mult.size() != mass.size()) throw Error(ErrorCode::ShapeMismatch, "multiplier length differs from n");
    double s = 0.0;
    for (Eigen::Index i = 0; i < mass.size(); ++i)
      if (mass[i] != 0.0) s += mult[i] * mass[i];
    return s;
  };
  double total = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    total += dot(lambdas[t], obs.pairs[t].mu().weights()) + dot(rhos[t], obs.pairs[t].nu().weights());
  }
  return total;
}

inline double dual_objective(const DualScalings& s, const ObservationSet& obs) {
  std::vector<Vector> lambdas, rhos;
  for (std::size_t t = 0; t < s.size(); ++t) {
    lambdas.push_back(s.u[t].unaryExpr(&detail::log_or_neg_inf));
    rhos.push_back(s.v[t].unaryExpr(&detail::log_or_neg_inf));
  }
  return dual_objective(lambdas, rhos, obs);
}

enum class ConstraintClass { Active, Inactive, Violated };

struct DualFeasibilityReport {
  /// sum_t u_t(i) v_t(j)
  Matrix values;
  std::vector<std::vector<ConstraintClass>> classes;
  double max_value = 0.0;
  /// Largest |value - 1| over cells where the aggregate exceeds the support
  /// floor (0 when no aggregate was supplied).
  double max_deviation_on_support = 0.0;
  /// Violation amount value - 1 at the worst cell, or 0.
  double max_violation = 0.0;
};

inline Matrix dual_constraint_values(const DualScalings& s) {
  if (s.u.empty()) throw Error(ErrorCode::EmptyInput, "no scalings");
  const Eigen::Index n = s.u.front().size();
  Matrix values = Matrix::Zero(n, n);
  for (std::size_t t = 0; t < s.size(); ++t) values += s.u[t] * s.v[t].transpose();
  return values;
}

/// `support_floor`: aggregate cells at or below it count as zero.
inline DualFeasibilityReport check_dual_feasibility(const DualScalings& s, const AggregatePlan* aggregate = nullptr,
                                                    double tol = 1e-6, double support_floor = 1e-10) {
  DualFeasibilityReport report;
  report.values = dual_constraint_values(s);
  const Eigen::Index n = report.values.rows();
  report.max_value = report.values.maxCoeff();
  report.max_violation = std::max(0.0, report.max_value - 1.0);
  report.classes.assign(static_cast<std::size_t>(n), std::vector<ConstraintClass>(static_cast<std::size_t>(n)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double value = report.values(i, j);
      auto& c = report.classes[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      c = value > 1.0 + tol ? ConstraintClass::Violated
                            : (value < 1.0 - tol ? ConstraintClass::Inactive : ConstraintClass::Active);
      if (aggregate != nullptr && (*aggregate)(i, j) > support_floor) {
        report.max_deviation_on_support = std::max(report.max_deviation_on_support, std::abs(value - 1.0));
      }
    }
  }
  return report;
}

enum class UniquenessVerdict { Certified, NotUnique, Undetermined };

constexpr std::string_view to_string(UniquenessVerdict v) {
  switch (v) {
    case UniquenessVerdict::Certified: return "Certified";
    case UniquenessVerdict::NotUnique: return "NotUnique";
    case UniquenessVerdict::Undetermined: return "Undetermined";
  }
  return "Unknown";
}

struct UniquenessCertificate {
  int rank_u = 0;
  int rank_v = 0;
  bool certified_unique = false;
  UniquenessVerdict verdict = UniquenessVerdict::Undetermined;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> inactive_set;
  bool aggregate_strictly_positive = false;
  std::vector<double> singular_values_u;
  std::vector<double> singular_values_v;
};

struct CertificateOptions {
  /// Singular values below this fraction of the largest count as zero.
  double rank_threshold = 1e-8;
  double inactive_tol = 1e-6;
  /// Aggregate cells at or below this fraction of its largest entry count as
  /// zero when deciding strict positivity.
  double positivity_floor = 1e-10;
};

namespace detail {

inline int numerical_rank(const Matrix& columns, double threshold, std::vector<double>* singular_values = nullptr) {
  if (columns.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(columns);
  const Vector& sv = svd.singularValues();
  if (singular_values != nullptr) singular_values->assign(sv.data(), sv.data() + sv.size());
  if (sv.size() == 0 || sv[0] <= 0.0) return 0;
  int rank = 0;
  for (Eigen::Index k = 0; k < sv.size(); ++k)
    if (sv[k] > threshold * sv[0]) ++rank;
  return rank;
}

inline bool strictly_positive(const Matrix& m, double floor) {
  const double scale = m.maxCoeff();
  return scale > 0.0 && m.minCoeff() > floor * scale;
}

inline UniquenessVerdict verdict_for(bool certified, bool positive) {
  if (certified) return UniquenessVerdict::Certified;
  return positive ? UniquenessVerdict::NotUnique : UniquenessVerdict::Undetermined;
}

}  // namespace detail

/// Span test on the dual scalings: unique if {u_t} or {v_t} spans R^n. When
/// the aggregate is strictly positive the test is also necessary, so a
/// failed test proves non-uniqueness; otherwise the verdict is Undetermined.
inline UniquenessCertificate uniqueness_certificate(const DualScalings& s, const EstimateResult& result,
                                                    const CertificateOptions& opt = {}) {
  UniquenessCertificate cert;
  const Eigen::Index n = result.aggregate.rows();
  const auto count = static_cast<Eigen::Index>(s.size());
  Matrix us(n, count), vs(n, count);
  for (Eigen::Index t = 0; t < count; ++t) {
    us.col(t) = s.u[static_cast<std::size_t>(t)];
    vs.col(t) = s.v[static_cast<std::size_t>(t)];
    // extrapolated entries stay out of the span
    for (Eigen::Index i = 0; i < n; ++i) {
      if (s.u_extrapolated[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]) us(i, t) = 0.0;
      if (s.v_extrapolated[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]) vs(i, t) = 0.0;
    }
  }
  cert.rank_u = detail::numerical_rank(us, opt.rank_threshold, &cert.singular_values_u);
  cert.rank_v = detail::numerical_rank(vs, opt.rank_threshold, &cert.singular_values_v);
  cert.certified_unique = cert.rank_u == n || cert.rank_v == n;
  const Matrix values = dual_constraint_values(s);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (values(i, j) < 1.0 - opt.inactive_tol) cert.inactive_set.emplace_back(i, j);
  cert.aggregate_strictly_positive = detail::strictly_positive(result.aggregate, opt.positivity_floor);
  cert.verdict = detail::verdict_for(cert.certified_unique, cert.aggregate_strictly_positive);
  return cert;
}

/// The same span test read directly off the plans: with a strictly positive
/// aggregate, span{M_t(i,:)} equals span{v_t} for every i and span{M_t(:,j)}
/// equals span{u_t} for every j. Requires Mbar > 0; otherwise Undetermined.
inline UniquenessCertificate primal_span_certificate(const EstimateResult& result,
                                                     const CertificateOptions& opt = {}) {
  UniquenessCertificate cert;
  const Eigen::Index n = result.aggregate.rows();
  const auto count = static_cast<Eigen::Index>(result.plans.size());
  cert.aggregate_strictly_positive = detail::strictly_positive(result.aggregate, opt.positivity_floor);
  if (!cert.aggregate_strictly_positive) {
    cert.verdict = UniquenessVerdict::Undetermined;
    return cert;
  }
  int min_row_rank = static_cast<int>(n);
  int min_col_rank = static_cast<int>(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Matrix rows(n, count), cols(n, count);
    for (Eigen::Index t = 0; t < count; ++t) {
      rows.col(t) = result.plans[static_cast<std::size_t>(t)].row(k).transpose();
      cols.col(t) = result.plans[static_cast<std::size_t>(t)].col(k);
    }
    min_row_rank = std::min(min_row_rank, detail::numerical_rank(rows, opt.rank_threshold));
    min_col_rank = std::min(min_col_rank, detail::numerical_rank(cols, opt.rank_threshold));
  }
  cert.rank_v = min_row_rank;
  cert.rank_u = min_col_rank;
  cert.certified_unique = cert.rank_u == n || cert.rank_v == n;
  cert.verdict = detail::verdict_for(cert.certified_unique, true);
  return cert;
}

}  // namespace aggmarkov
