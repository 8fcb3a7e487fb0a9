#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aggmarkov/markov_sim.hpp"
#include "aggmarkov/proximal_estimator.hpp"
#include "oracles.hpp"

using namespace aggmarkov;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Vector random_simplex(std::mt19937_64& gen, Eigen::Index n) {
  std::exponential_distribution<double> e(1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = e(gen);
  return v / v.sum();
}

ObservationSet noise_free(const Matrix& a, const std::vector<Vector>& mus) {
  std::vector<std::pair<Vector, Vector>> raw;
  for (const auto& mu : mus) raw.emplace_back(mu, a.transpose() * mu);
  return build_observation_set(raw, false);
}

ObservationSet random_pairs(std::mt19937_64& gen, Eigen::Index n, std::size_t count) {
  std::vector<std::pair<Vector, Vector>> raw;
  for (std::size_t t = 0; t < count; ++t) raw.emplace_back(random_simplex(gen, n), random_simplex(gen, n));
  return build_observation_set(raw, false);
}

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

}  // namespace

TEST(Estimate, SinglePairIsProductCoupling) {
  const auto obs = build_observation_set({{vec({1, 1}), vec({1, 1})}}, false);
  const auto r = estimate(obs);
  EXPECT_EQ(r.status, EstimateStatus::Converged);
  EXPECT_LE(r.outer_iterations, 2u);
  EXPECT_LE((r.transition.entries() - Matrix::Constant(2, 2, 0.5)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((r.aggregate - Matrix::Constant(2, 2, 0.5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Estimate, BasisPairsPinEachRow) {
  const Matrix a = mat2(0.9, 0.1, 0.2, 0.8);
  const auto r = estimate(noise_free(a, {vec({1, 0}), vec({0, 1})}));
  EXPECT_EQ(r.status, EstimateStatus::Converged);
  EXPECT_LE(frobenius_error(r.transition.entries(), a), 1e-6);
}

TEST(Estimate, IdenticalPairsGiveProductSolution) {
  const auto obs = build_observation_set({{vec({1, 1}), vec({1, 1})}, {vec({1, 1}), vec({1, 1})}}, false);
  const auto r = estimate(obs);
  EXPECT_LE((r.transition.entries() - Matrix::Constant(2, 2, 0.5)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Estimate, MatchesGridOracleOnTwoStates) {
  std::mt19937_64 gen(41);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t count = 1 + static_cast<std::size_t>(trial % 2);
    std::vector<std::pair<Vector, Vector>> raw;
    std::vector<oracle::Pair2> pairs;
    for (std::size_t t = 0; t < count; ++t) {
      const Vector mu = random_simplex(gen, 2), nu = random_simplex(gen, 2);
      raw.emplace_back(mu, nu);
      pairs.push_back({mu[0], mu[1], nu[0], nu[1]});
    }
    const auto r = estimate(build_observation_set(raw, false));
    const auto g = oracle::grid_minimize2(pairs);
    EXPECT_NEAR(r.objective_history.back(), g.objective, 1e-4);
  }
}

TEST(Estimate, ObjectiveNeverIncreases) {
  std::mt19937_64 gen(42);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 2 + trial % 5;
    const std::size_t count = 1 + static_cast<std::size_t>(trial % 9);
    ObservationSet obs;
    if (trial % 3 == 0) {
      std::vector<Vector> mus;
      for (std::size_t t = 0; t < count; ++t) mus.push_back(random_simplex(gen, n));
      obs = noise_free(random_stochastic_matrix(n, 100 + static_cast<std::uint64_t>(trial), false).entries(), mus);
    } else {
      obs = random_pairs(gen, n, count);
    }
    EstimatorConfig cfg;
    cfg.max_outer = 300;
    const auto r = estimate(obs, cfg);
    for (std::size_t k = 1; k < r.objective_history.size(); ++k) {
      EXPECT_LE(r.objective_history[k], r.objective_history[k - 1] + 1e-10) << "trial " << trial << " step " << k;
    }
  }
}

TEST(Estimate, AggregateIsSumOfPlansAndTransitionIsItsRowNormalization) {
  std::mt19937_64 gen(43);
  for (int trial = 0; trial < 10; ++trial) {
    const auto obs = random_pairs(gen, 4, 6);
    const auto r = estimate(obs);
    Matrix sum = Matrix::Zero(4, 4);
    for (const auto& p : r.plans) sum += p;
    EXPECT_LE((sum - r.aggregate).cwiseAbs().maxCoeff(), 1e-12 * r.aggregate.maxCoeff());
    EXPECT_LE((recover_transition(r.aggregate).transition.entries() - r.transition.entries()).cwiseAbs().maxCoeff(),
              1e-15);
    EXPECT_LE(r.max_marginal_residual, 1e-9);
  }
}

TEST(Estimate, ConvergedRunMeetsOuterTolerance) {
  std::mt19937_64 gen(44);
  for (int trial = 0; trial < 10; ++trial) {
    const auto obs = random_pairs(gen, 3, 5);
    const auto r = estimate(obs);
    ASSERT_EQ(r.status, EstimateStatus::Converged);
    if (r.stop_reason == StopReason::AggregateChange) EXPECT_LE(r.last_change, 1e-8);
  }
}

TEST(Estimate, UnobservedEntriesStayZero) {
  // State 2 is never a source and state 0 is never a destination.
  const auto obs = build_observation_set(
      {{vec({0.5, 0.5, 0.0}), vec({0.0, 0.3, 0.7})}, {vec({0.2, 0.8, 0.0}), vec({0.0, 0.6, 0.4})}}, false);
  const auto r = estimate(obs);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      if (obs.support_mask(i, j)) continue;
      EXPECT_EQ(r.aggregate(i, j), 0.0);
      for (const auto& p : r.plans) EXPECT_EQ(p(i, j), 0.0);
    }
  }
  EXPECT_TRUE(r.zero_row_flags[2]);
  EXPECT_FALSE(r.zero_row_flags[0]);
}

TEST(Estimate, NoiseFreeDataReachesZeroOriginalObjective) {
  std::mt19937_64 gen(45);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 3 + trial % 3;
    const auto a = random_stochastic_matrix(n, 200 + static_cast<std::uint64_t>(trial), true);
    std::vector<Vector> mus;
    for (int t = 0; t < 2 * n; ++t) mus.push_back(random_simplex(gen, n));
    const auto obs = noise_free(a.entries(), mus);
    // small entries of A slow the outer loop down; give it room to converge
    EstimatorConfig cfg;
    cfg.max_outer = 5000;
    const auto r = estimate(obs, cfg);
    EXPECT_EQ(r.status, EstimateStatus::Converged);
    EXPECT_LE(objective_original(r.plans, obs, r.transition), 1e-8);
    EXPECT_LE(frobenius_error(r.transition.entries(), a.entries()), 1e-4);
  }
}

TEST(Estimate, RestartFromConvergedAggregateStopsQuickly) {
  std::mt19937_64 gen(46);
  for (int trial = 0; trial < 10; ++trial) {
    const auto obs = random_pairs(gen, 4, 6);
    const auto first = estimate(obs);
    ASSERT_EQ(first.status, EstimateStatus::Converged);
    const auto again = estimate(obs, {}, &first.aggregate);
    EXPECT_EQ(again.status, EstimateStatus::Converged);
    EXPECT_LE(again.outer_iterations, 2u);
    EXPECT_LE(detail::relative_change(again.aggregate, first.aggregate), 1e-7);
  }
}

TEST(Estimate, InexactSweepsAgreeWithFullProjections) {
  std::mt19937_64 gen(47);
  for (int trial = 0; trial < 5; ++trial) {
    const auto obs = random_pairs(gen, 4, 8);
    EstimatorConfig sweeps;
    sweeps.inner_mode = InnerMode::Sweeps;
    sweeps.sweeps = 2;
    sweeps.max_outer = 5000;
    EstimatorConfig full;
    full.max_outer = 5000;
    const auto a = estimate(obs, full);
    const auto b = estimate(obs, sweeps);
    ASSERT_EQ(a.status, EstimateStatus::Converged);
    ASSERT_EQ(b.status, EstimateStatus::Converged);
    EXPECT_LE(frobenius_error(a.transition.entries(), b.transition.entries()), 1e-5);
  }
}

TEST(Estimate, ThreadCountDoesNotChangeBits) {
  std::mt19937_64 gen(48);
  const auto obs = random_pairs(gen, 5, 12);
  EstimatorConfig one, four;
  four.threads = 4;
  const auto a = estimate(obs, one);
  const auto b = estimate(obs, four);
  EXPECT_EQ(a.aggregate, b.aggregate);
  EXPECT_EQ(a.objective_history, b.objective_history);
}

TEST(Estimate, UnnormalizedMassesArePreserved) {
  const auto obs = build_observation_set({{vec({2, 1}), vec({1.5, 1.5})}, {vec({0.1, 0.3}), vec({0.2, 0.2})}}, false);
  const auto r = estimate(obs);
  EXPECT_NEAR(r.plans[0].sum(), 3.0, 1e-9);
  EXPECT_NEAR(r.plans[1].sum(), 0.4, 1e-9);
  EXPECT_NEAR(r.aggregate.sum(), 3.4, 1e-9);
}

TEST(Estimate, IncompatibleStartingAggregateIsInfeasible) {
  const auto obs = build_observation_set({{vec({1, 0}), vec({0, 1})}}, false);
  const Matrix start = Matrix::Identity(2, 2);
  try {
    estimate(obs, {}, &start);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
  }
}

TEST(Estimate, RejectsInvalidConfig) {
  const auto obs = build_observation_set({{vec({1, 1}), vec({1, 1})}}, false);
  EstimatorConfig cfg;
  cfg.epsilon = 0.5;
  EXPECT_THROW(estimate(obs, cfg), Error);
  cfg = {};
  cfg.outer_tol = 0.0;
  EXPECT_THROW(estimate(obs, cfg), Error);
}

TEST(Estimate, InexactScheduleDecaysToFloor) {
  EstimatorConfig cfg;
  cfg.inner_mode = InnerMode::Sweeps;
  EXPECT_NEAR(cfg.inner_tolerance(1), 1e-2 * 0.9, 1e-18);
  EXPECT_NEAR(cfg.inner_tolerance(10), 1e-2 * std::pow(0.9, 10), 1e-18);
  EXPECT_EQ(cfg.inner_tolerance(100000), cfg.inner_tol_floor);
  cfg.inner_mode = InnerMode::FullConvergence;
  EXPECT_EQ(cfg.inner_tolerance(3), cfg.inner_tol);
}

TEST(ObjectiveValue, HandCases) {
  const Matrix x = Matrix::Constant(2, 2, 0.5);
  EXPECT_EQ(objective_value({x}, x), 0.0);
  const Matrix q = Matrix::Constant(2, 2, 0.25);
  EXPECT_NEAR(objective_value({q, q}, x), -2.0 * std::log(2.0), 1e-15);
  EXPECT_EQ(objective_value({mat2(1, 0, 0, 0)}, mat2(0, 1, 1, 1)), kInfinite);
  EXPECT_THROW(objective_value({Matrix::Ones(3, 3)}, x), Error);
}

TEST(ObjectiveOriginal, HandCases) {
  const TransitionMatrix a(mat2(0.5, 0.5, 0.5, 0.5));
  std::mt19937_64 gen(49);
  std::vector<std::pair<Vector, Vector>> raw;
  std::vector<TransportPlan> exact;
  for (int t = 0; t < 4; ++t) {
    const Vector mu = random_simplex(gen, 2);
    raw.emplace_back(mu, a.entries().transpose() * mu);
    exact.push_back(mu.asDiagonal() * a.entries());
  }
  EXPECT_NEAR(objective_original(exact, build_observation_set(raw, false), a), 0.0, 1e-15);

  const auto one = build_observation_set({{vec({1, 0}), vec({0.5, 0.5})}}, false);
  EXPECT_NEAR(objective_original({mat2(0.5, 0.5, 0, 0)}, one, a), 0.0, 1e-15);
  const auto skew = build_observation_set({{vec({1, 0}), vec({1, 0})}}, false);
  EXPECT_NEAR(objective_original({mat2(1, 0, 0, 0)}, skew, a), std::log(2.0), 1e-15);
}

TEST(ObjectiveOriginal, ShiftDependsOnlyOnRowSums) {
  // Two feasible plan sets with identical row sums but different columns.
  std::mt19937_64 gen(50);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::pair<Vector, Vector>> raw;
    std::vector<TransportPlan> p1, p2;
    for (int t = 0; t < 3; ++t) {
      const Vector mu = random_simplex(gen, 3);
      const Matrix r1 = random_stochastic_matrix(3, 1000 + 7 * trial + t, true).entries();
      const Matrix r2 = random_stochastic_matrix(3, 5000 + 7 * trial + t, true).entries();
      p1.push_back(mu.asDiagonal() * r1);
      p2.push_back(mu.asDiagonal() * r2);
      raw.emplace_back(mu, p1.back().colwise().sum().transpose());
    }
    const auto obs = build_observation_set(raw, false);
    Matrix x1 = Matrix::Zero(3, 3), x2 = Matrix::Zero(3, 3);
    for (int t = 0; t < 3; ++t) {
      x1 += p1[static_cast<std::size_t>(t)];
      x2 += p2[static_cast<std::size_t>(t)];
    }
    const double d1 = objective_original(p1, obs, recover_transition(x1).transition) - objective_value(p1, x1);
    const double d2 = objective_original(p2, obs, recover_transition(x2).transition) - objective_value(p2, x2);
    EXPECT_NEAR(d1, d2, 1e-10);
  }
}
