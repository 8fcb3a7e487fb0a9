#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aggmarkov/core_model.hpp"
#include "oracles.hpp"

using namespace aggmarkov;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return m;
}

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

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an aggmarkov::Error";
  return ErrorCode::Malformed;
}

}  // namespace

TEST(KlDivergence, IdenticalArgumentsGiveZero) {
  EXPECT_EQ(kl_divergence(vec({0.3, 0.7}), vec({0.3, 0.7})), 0.0);
}

TEST(KlDivergence, PointMassAgainstUniform) {
  EXPECT_NEAR(kl_divergence(vec({1.0, 0.0}), vec({0.5, 0.5})), std::log(2.0), 1e-15);
}

TEST(KlDivergence, NegativeWhenMassesDiffer) {
  const Matrix p = Matrix::Constant(2, 2, 0.25);
  const Matrix q = Matrix::Constant(2, 2, 0.5);
  EXPECT_NEAR(kl_divergence(p, q), -std::log(2.0), 1e-15);
}

TEST(KlDivergence, ExcessSupportIsInfinite) {
  EXPECT_EQ(kl_divergence(vec({0.5, 0.5}), vec({1.0, 0.0})), kInfinite);
}

TEST(KlDivergence, ShapeMismatchThrows) {
  EXPECT_EQ(code_of([] { kl_divergence(vec({1.0, 0.0}), vec({1.0, 0.0, 0.0})); }), ErrorCode::ShapeMismatch);
}

TEST(KlDivergence, SelfDivergenceZeroOnRandomInputs) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix p(4, 3);
    for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = trial % 3 == 0 && k % 4 == 0 ? 0.0 : u(gen);
    EXPECT_EQ(kl_divergence(p, p), 0.0);
  }
}

TEST(KlDivergence, DominatedSummandsAreNonPositiveAndFinite) {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix q(3, 3), p(3, 3);
    for (Eigen::Index k = 0; k < q.size(); ++k) {
      q(k) = u(gen);
      p(k) = (k + trial) % 5 == 0 ? 0.0 : q(k) * u(gen);
    }
    for (Eigen::Index k = 0; k < q.size(); ++k) {
      const double term = kl_divergence(p.reshaped().segment(k, 1), q.reshaped().segment(k, 1));
      EXPECT_LE(term, 0.0);
      EXPECT_TRUE(std::isfinite(term));
    }
  }
}

TEST(KlDivergence, MatchesEntrywiseOracle) {
  std::mt19937_64 gen(13);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix p(3, 4), q(3, 4);
    double expected = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      q(k) = u(gen) + 1e-3;
      p(k) = k % 3 == 1 ? 0.0 : u(gen);
      expected += oracle::xlogy_ratio(p(k), q(k));
    }
    EXPECT_NEAR(kl_divergence(p, q), expected, 1e-12 * (1.0 + std::abs(expected)));
  }
}

TEST(RecoverTransition, RowNormalizes) {
  const auto r = recover_transition(mat({{2, 2}, {1, 3}}));
  EXPECT_TRUE(r.transition.entries().isApprox(mat({{0.5, 0.5}, {0.25, 0.75}}), 1e-15));
  EXPECT_FALSE(r.any_zero_row());
}

TEST(RecoverTransition, StochasticInputIsFixed) {
  const Matrix a = mat({{0.9, 0.1}, {0.2, 0.8}});
  EXPECT_TRUE(recover_transition(a).transition.entries().isApprox(a, 1e-15));
}

TEST(RecoverTransition, ZeroRowUniformPolicyFlagsRow) {
  const auto r = recover_transition(mat({{0, 0}, {1, 1}}), ZeroRowPolicy::UniformRow);
  EXPECT_TRUE(r.transition.entries().isApprox(Matrix::Constant(2, 2, 0.5), 1e-15));
  ASSERT_EQ(r.zero_rows.size(), 2u);
  EXPECT_TRUE(r.zero_rows[0]);
  EXPECT_FALSE(r.zero_rows[1]);
}

TEST(RecoverTransition, ZeroRowErrorPolicyThrows) {
  EXPECT_EQ(code_of([] { recover_transition(mat({{0, 0}, {1, 1}}), ZeroRowPolicy::Error); }), ErrorCode::ZeroRow);
}

TEST(RecoverTransition, ScaleInvariantAndStochastic) {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::uniform_real_distribution<double> c(1e-3, 1e3);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix x(4, 4);
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = k % 7 == trial % 7 ? 0.0 : u(gen);
    const auto a = recover_transition(x).transition.entries();
    const auto b = recover_transition(c(gen) * x).transition.entries();
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-15);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(IndependentCoupling, SymmetricMarginals) {
  const MarginalPair pair(Distribution{1, 1}, Distribution{1, 1});
  EXPECT_TRUE(independent_coupling(pair).isApprox(Matrix::Constant(2, 2, 0.5), 1e-15));
}

TEST(IndependentCoupling, ZeroRowForced) {
  const MarginalPair pair(Distribution{2, 0}, Distribution{1, 1});
  EXPECT_TRUE(independent_coupling(pair).isApprox(mat({{1, 1}, {0, 0}}), 1e-15));
}

TEST(IndependentCoupling, MassMismatchRejected) {
  EXPECT_EQ(code_of([] { MarginalPair(Distribution{1, 0}, Distribution{1, 1}); }), ErrorCode::MassMismatch);
}

TEST(IndependentCoupling, MarginalsAndSupportOnRandomPairs) {
  std::mt19937_64 gen(31);
  for (int trial = 0; trial < 200; ++trial) {
    Vector mu = random_simplex(gen, 5), nu = random_simplex(gen, 5);
    mu[trial % 5] = 0.0;
    nu[(trial / 5) % 5] = 0.0;
    const double s = 0.5 + trial;
    mu *= s / mu.sum();
    nu *= s / nu.sum();
    const Matrix m = independent_coupling(MarginalPair(Distribution(mu), Distribution(nu)));
    EXPECT_LE((m.rowwise().sum() - mu).cwiseAbs().maxCoeff(), 1e-12 * s);
    EXPECT_LE((m.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff(), 1e-12 * s);
    for (Eigen::Index i = 0; i < 5; ++i)
      for (Eigen::Index j = 0; j < 5; ++j) EXPECT_EQ(m(i, j) > 0.0, mu[i] > 0.0 && nu[j] > 0.0);
  }
}

TEST(IndependentCoupling, SumIsPositiveWhenEveryEntryIsObserved) {
  std::mt19937_64 gen(32);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MarginalPair> pairs;
    for (int t = 0; t < 4; ++t) {
      Vector mu = random_simplex(gen, 4), nu = random_simplex(gen, 4);
      mu[t] = 0.0;
      nu[(t + 1) % 4] = 0.0;
      pairs.emplace_back(Distribution(mu / mu.sum()), Distribution(nu / nu.sum()));
    }
    const auto obs = build_observation_set(pairs);
    ASSERT_TRUE(obs.support_mask.all());
    Matrix sum = Matrix::Zero(4, 4);
    for (const auto& p : obs.pairs) sum += independent_coupling(p);
    EXPECT_GT(sum.minCoeff(), 0.0);
  }
}

TEST(ObservationSet, SingleCrossingPair) {
  const auto obs = build_observation_set({{vec({1, 0}), vec({0, 1})}}, false);
  BoolMatrix expected(2, 2);
  expected << false, true, false, false;
  EXPECT_EQ(obs.support_mask, expected);
}

TEST(ObservationSet, TwoCrossingPairs) {
  const auto obs = build_observation_set({{vec({1, 0}), vec({0, 1})}, {vec({0, 1}), vec({1, 0})}}, false);
  BoolMatrix expected(2, 2);
  expected << false, true, true, false;
  EXPECT_EQ(obs.support_mask, expected);
}

TEST(ObservationSet, FullSupport) {
  const auto obs = build_observation_set({{vec({0.5, 0.5}), vec({0.5, 0.5})}}, false);
  EXPECT_TRUE(obs.support_mask.all());
}

TEST(ObservationSet, Errors) {
  EXPECT_EQ(code_of([] { build_observation_set(std::vector<std::pair<Vector, Vector>>{}, false); }),
            ErrorCode::EmptyInput);
  EXPECT_EQ(code_of([] { build_observation_set({{vec({1, 0}), vec({1, 1})}}, false); }), ErrorCode::MassMismatch);
  EXPECT_EQ(code_of([] { build_observation_set({{vec({1, -1}), vec({0, 0})}}, false); }),
            ErrorCode::NonnegativityViolation);
  EXPECT_EQ(code_of([] { build_observation_set({{vec({1, 0}), vec({1, 0, 0})}}, false); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { build_observation_set({{vec({0, 0}), vec({0, 0})}}, false); }), ErrorCode::EmptyInput);
}

TEST(ObservationSet, NormalizationRescalesEachPair) {
  const auto obs = build_observation_set({{vec({2, 2}), vec({1, 3})}, {vec({0.1, 0.0}), vec({0.05, 0.05})}}, true);
  for (const auto& p : obs.pairs) {
    EXPECT_NEAR(p.mass(), 1.0, 1e-15);
    EXPECT_NEAR(p.nu().mass(), 1.0, 1e-15);
  }
  EXPECT_NEAR(obs.pairs[0].nu()[1], 0.75, 1e-15);
}

TEST(FrobeniusError, HandValues) {
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_EQ(frobenius_error(i2, i2), 0.0);
  EXPECT_NEAR(frobenius_error(i2, mat({{0, 1}, {1, 0}})), 2.0, 1e-15);
  EXPECT_NEAR(frobenius_error(i2, mat({{1, 0}, {0, 0}})), 1.0, 1e-15);
  EXPECT_EQ(code_of([&] { frobenius_error(i2, Matrix::Identity(3, 3)); }), ErrorCode::ShapeMismatch);
}

TEST(TransitionMatrixType, RejectsNonStochasticRows) {
  EXPECT_EQ(code_of([] { TransitionMatrix(mat({{0.5, 0.6}, {0.5, 0.5}})); }), ErrorCode::InvalidTransition);
  EXPECT_EQ(code_of([] { TransitionMatrix(mat({{1.5, -0.5}, {0.5, 0.5}})); }), ErrorCode::InvalidTransition);
  EXPECT_NO_THROW(TransitionMatrix(mat({{0.25, 0.75}, {1.0, 0.0}})));
}
