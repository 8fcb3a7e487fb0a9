#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

#include "aggmarkov/aggmarkov.hpp"

namespace testing_support {

using aggmarkov::Matrix;
using aggmarkov::Vector;

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return m;
}

inline Vector random_simplex(std::mt19937_64& gen, Eigen::Index n) {
  std::exponential_distribution<double> e(1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = e(gen);
  return v / v.sum();
}

/// Kinds of random estimation instances.
enum class InstanceKind {
  NoiseFree,      // nu = A^T mu for a strictly positive A
  Sampled,        // 1000 particles pushed through a strictly positive A
  Unrelated,      // mu and nu drawn independently
};

struct Instance {
  aggmarkov::ObservationSet obs;
  Eigen::Index n = 0;
  std::size_t pairs = 0;
  InstanceKind kind = InstanceKind::NoiseFree;
  /// State with zero initial mass in every pair, or -1.
  Eigen::Index empty_state = -1;
};

/// Random instance with n in [2, max_n] and T in [1, max_pairs]; every fourth
/// draw leaves one state unoccupied at the start of every pair.
inline Instance random_instance(std::mt19937_64& gen, std::size_t draw, Eigen::Index max_n = 6,
                                std::size_t max_pairs = 12) {
  std::uniform_int_distribution<Eigen::Index> dn(2, max_n);
  std::uniform_int_distribution<std::size_t> dt(1, max_pairs);
  std::uniform_int_distribution<int> dk(0, 2);
  Instance inst;
  inst.n = dn(gen);
  inst.pairs = dt(gen);
  inst.kind = static_cast<InstanceKind>(dk(gen));
  inst.empty_state = draw % 4 == 3 ? static_cast<Eigen::Index>(gen() % static_cast<std::uint64_t>(inst.n)) : -1;
  const auto a = aggmarkov::random_stochastic_matrix(inst.n, gen(), true);
  std::vector<std::pair<Vector, Vector>> raw;
  for (std::size_t t = 0; t < inst.pairs; ++t) {
    Vector mu = random_simplex(gen, inst.n);
    if (inst.empty_state >= 0) {
      mu[inst.empty_state] = 0.0;
      mu /= mu.sum();
    }
    Vector nu;
    switch (inst.kind) {
      case InstanceKind::NoiseFree:
        nu = a.entries().transpose() * mu;
        break;
      case InstanceKind::Sampled: {
        aggmarkov::SimulationConfig sim;
        sim.n = inst.n;
        sim.n_pairs = 1;
        sim.n_particles = 1000;
        sim.seed = gen();
        sim.initial_law = aggmarkov::InitialLawKind::Fixed;
        sim.fixed_law = aggmarkov::Distribution(mu);
        const auto o = aggmarkov::sample_empirical_marginals(a, sim);
        mu = o.pairs[0].mu().weights();
        nu = o.pairs[0].nu().weights();
        break;
      }
      case InstanceKind::Unrelated:
        nu = random_simplex(gen, inst.n);
        break;
    }
    raw.emplace_back(mu, nu);
  }
  inst.obs = aggmarkov::build_observation_set(raw, false);
  return inst;
}

/// Settings under which cells with a zero optimum decay below 1e-10.
inline aggmarkov::EstimatorConfig tight_config() {
  aggmarkov::EstimatorConfig cfg;
  cfg.outer_tol = 1e-14;
  cfg.max_outer = 50000;
  return cfg;
}

}  // namespace testing_support
