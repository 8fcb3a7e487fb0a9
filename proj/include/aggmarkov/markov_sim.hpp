#pragma once

// Synthetic aggregate observations from a known chain, plus chain analytics
// used to interpret the estimates (stationary law, total variation, mixing).

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aggmarkov/core_model.hpp"
#include "aggmarkov/random.hpp"

namespace aggmarkov {

enum class SamplingMode { Independent, Sequential };

constexpr std::string_view to_string(SamplingMode m) {
  return m == SamplingMode::Independent ? "independent" : "sequential";
}

/// How initial laws are drawn when none is fixed.
enum class InitialLawKind { UniformRandomSimplex, NormalizedUniform, Fixed };

struct SimulationConfig {
  Eigen::Index n = 0;
  /// Particle count; std::nullopt means exact (infinite-population) propagation.
  std::optional<std::uint64_t> n_particles;
  std::size_t n_pairs = 1;
  SamplingMode mode = SamplingMode::Independent;
  std::uint64_t seed = 0;
  /// Repeat index; selects an independent family of streams.
  std::uint64_t repeat = 0;
  InitialLawKind initial_law = InitialLawKind::UniformRandomSimplex;
  /// Used when initial_law == Fixed.
  Distribution fixed_law;
  /// Sequential mode: transitions applied before the first snapshot.
  std::size_t burn_in = 0;

  void validate() const {
    if (n_pairs == 0) throw Error(ErrorCode::InvalidArgument, "at least one pair is required");
    if (n_particles && *n_particles == 0) throw Error(ErrorCode::InvalidArgument, "particle count must be >= 1");
    if (initial_law == InitialLawKind::Fixed) {
      if (fixed_law.size() != n) throw Error(ErrorCode::ShapeMismatch, "fixed initial law has the wrong size");
      if (fixed_law.mass() <= 0.0) throw Error(ErrorCode::EmptyInput, "fixed initial law has no mass");
    }
  }
};

/// Stream stages inside one (seed, repeat, pair) key.
namespace stage {
inline constexpr std::uint64_t kInitialLaw = 0;
inline constexpr std::uint64_t kPositions = 1;
inline constexpr std::uint64_t kTransition = 2;
}  // namespace stage

namespace detail {

inline Vector draw_law(const SimulationConfig& cfg, std::uint64_t pair) {
  if (cfg.initial_law == InitialLawKind::Fixed) return cfg.fixed_law.weights() / cfg.fixed_law.mass();
  Rng rng(StreamKey{cfg.seed, cfg.repeat, pair, stage::kInitialLaw});
  return cfg.initial_law == InitialLawKind::UniformRandomSimplex ? rng.simplex(cfg.n) : rng.normalized_uniform(cfg.n);
}

/// Multinomial allocation of `particles` over `law`, one categorical draw per particle.
inline std::vector<std::uint64_t> allocate(const Vector& law, std::uint64_t particles, Rng& rng) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(law.size()), 0);
  const double total = law.sum();
  for (std::uint64_t p = 0; p < particles; ++p) ++counts[static_cast<std::size_t>(rng.categorical(law, total))];
  return counts;
}

/// Moves every particle one step; returns the per-cell transition counts.
inline Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic> step_counts(
    const Matrix& a, const std::vector<std::uint64_t>& counts, Rng& rng) {
  const Eigen::Index n = a.rows();
  Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic> moves =
      Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = a.row(i);
    for (std::uint64_t p = 0; p < counts[static_cast<std::size_t>(i)]; ++p) ++moves(i, rng.categorical(row, 1.0));
  }
  return moves;
}

inline Vector frequencies(const std::vector<std::uint64_t>& counts, std::uint64_t particles) {
  Vector v(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t k = 0; k < counts.size(); ++k) v[static_cast<Eigen::Index>(k)] = static_cast<double>(counts[k]);
  return v / static_cast<double>(particles);
}

inline std::vector<std::uint64_t> column_totals(
    const Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic>& moves) {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(moves.cols()), 0);
  for (Eigen::Index j = 0; j < moves.cols(); ++j)
    for (Eigen::Index i = 0; i < moves.rows(); ++i) out[static_cast<std::size_t>(j)] += moves(i, j);
  return out;
}

}  // namespace detail

/// Builds aggregate snapshot pairs from simulated particles (or exact
/// propagation when the particle count is infinite). Each pair has mass 1.
inline ObservationSet sample_empirical_marginals(const TransitionMatrix& a, SimulationConfig cfg) {
  if (cfg.n == 0) cfg.n = a.size();
  if (cfg.n != a.size()) throw Error(ErrorCode::ShapeMismatch, "config n differs from the transition size");
  cfg.validate();
  const Matrix& am = a.entries();
  const Matrix at = am.transpose();
  std::vector<MarginalPair> pairs;
  pairs.reserve(cfg.n_pairs);

  if (cfg.mode == SamplingMode::Independent) {
    for (std::size_t t = 0; t < cfg.n_pairs; ++t) {
      const Vector law = detail::draw_law(cfg, t);
      if (!cfg.n_particles) {
        pairs.emplace_back(Distribution(law), Distribution(Vector(at * law)));
        continue;
      }
      const std::uint64_t particles = *cfg.n_particles;
      Rng positions(StreamKey{cfg.seed, cfg.repeat, t, stage::kPositions});
      const auto before = detail::allocate(law, particles, positions);
      Rng moves_rng(StreamKey{cfg.seed, cfg.repeat, t, stage::kTransition});
      const auto after = detail::column_totals(detail::step_counts(am, before, moves_rng));
      pairs.emplace_back(Distribution(detail::frequencies(before, particles)),
                         Distribution(detail::frequencies(after, particles)));
    }
  } else {
    const Vector law = detail::draw_law(cfg, 0);
    std::vector<Vector> snapshots;
    snapshots.reserve(cfg.n_pairs + 1);
    if (!cfg.n_particles) {
      Vector current = law;
      for (std::size_t s = 0; s < cfg.burn_in; ++s) current = at * current;
      snapshots.push_back(current);
      for (std::size_t t = 0; t < cfg.n_pairs; ++t) {
        current = at * current;
        snapshots.push_back(current);
      }
    } else {
      const std::uint64_t particles = *cfg.n_particles;
      Rng positions(StreamKey{cfg.seed, cfg.repeat, 0, stage::kPositions});
      auto counts = detail::allocate(law, particles, positions);
      const std::size_t steps = cfg.burn_in + cfg.n_pairs;
      for (std::size_t s = 0; s <= steps; ++s) {
        if (s >= cfg.burn_in) snapshots.push_back(detail::frequencies(counts, particles));
        if (s == steps) break;
        Rng step_rng(StreamKey{cfg.seed, cfg.repeat, s, stage::kTransition});
        counts = detail::column_totals(detail::step_counts(am, counts, step_rng));
      }
    }
    for (std::size_t t = 0; t < cfg.n_pairs; ++t) {
      pairs.emplace_back(Distribution(snapshots[t]), Distribution(snapshots[t + 1]));
    }
  }
  return build_observation_set(std::move(pairs));
}

/// log P(M | mu0, A) for integer transition counts M, via log-gamma.
/// Returns -infinity when M moves particles along a zero of A.
inline double log_transition_probability(const Vector& mu0, const TransitionMatrix& a, const Matrix& m) {
  const Eigen::Index n = a.size();
  if (mu0.size() != n || m.rows() != n || m.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "counts do not match the transition size");
  }
  auto is_count = [](double v) { return std::isfinite(v) && v >= 0.0 && v == std::floor(v); };
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_count(mu0[i])) throw Error(ErrorCode::NegativeCount, "mu0 must hold nonnegative integers");
    for (Eigen::Index j = 0; j < n; ++j)
      if (!is_count(m(i, j))) throw Error(ErrorCode::NegativeCount, "M must hold nonnegative integers");
    if (m.row(i).sum() != mu0[i]) {
      throw Error(ErrorCode::MarginalMismatch, "row " + detail::index_str(i) + " of M does not sum to mu0");
    }
  }
  double logp = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    logp += std::lgamma(mu0[i] + 1.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double mij = m(i, j);
      if (mij == 0.0) continue;
      if (a(i, j) == 0.0) return -kInfinite;
      logp += mij * std::log(a(i, j)) - std::lgamma(mij + 1.0);
    }
  }
  return logp;
}

/// Strong connectivity of the transition graph i -> j (A(i,j) > 0).
inline bool is_irreducible(const TransitionMatrix& a) {
  const Eigen::Index n = a.size();
  auto reaches_all = [&](bool transpose) {
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    std::vector<Eigen::Index> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const Eigen::Index u = stack.back();
      stack.pop_back();
      for (Eigen::Index v = 0; v < n; ++v) {
        const double w = transpose ? a(v, u) : a(u, v);
        if (w > 0.0 && !seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = true;
          stack.push_back(v);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool s) { return s; });
  };
  return reaches_all(false) && reaches_all(true);
}

/// Unique pi with A^T pi = pi, sum pi = 1, for irreducible A.
inline Distribution stationary_distribution(const TransitionMatrix& a, double tol = 1e-12) {
  if (!is_irreducible(a)) throw Error(ErrorCode::Reducible, "transition graph is not strongly connected");
  const Eigen::Index n = a.size();
  Matrix system(n + 1, n);
  system.topRows(n) = a.entries().transpose() - Matrix::Identity(n, n);
  system.row(n).setOnes();
  Vector rhs = Vector::Zero(n + 1);
  rhs[n] = 1.0;
  Vector pi = system.colPivHouseholderQr().solve(rhs);
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  const double residual = (a.entries().transpose() * pi - pi).lpNorm<1>();
  if (!(residual <= tol)) {
    throw Error(ErrorCode::NotConverged, "stationary residual " + std::to_string(residual));
  }
  return Distribution(pi);
}

inline double tv_distance(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw Error(ErrorCode::ShapeMismatch, "tv_distance operands differ in length");
  if (!detail::masses_agree(p.mass(), q.mass())) {
    throw Error(ErrorCode::MassMismatch, "tv_distance operands differ in mass");
  }
  return 0.5 * (p.weights() - q.weights()).lpNorm<1>();
}

struct MixingStats {
  Distribution pi;
  /// d[t] for t = 0..horizon
  std::vector<double> d;
  std::optional<std::size_t> t_mix;
  double alpha_hat = 0.0;
};

/// Second-largest eigenvalue modulus.
inline double second_eigenvalue_modulus(const TransitionMatrix& a) {
  Eigen::EigenSolver<Matrix> solver(a.entries(), false);
  std::vector<double> moduli;
  for (Eigen::Index k = 0; k < solver.eigenvalues().size(); ++k) moduli.push_back(std::abs(solver.eigenvalues()[k]));
  std::sort(moduli.begin(), moduli.end(), std::greater<>());
  return moduli.size() > 1 ? moduli[1] : 0.0;
}

/// Worst-case distance to stationarity d(t) = max_i TV(e_i^T A^t, pi); the
/// supremum over initial laws is attained at a basis vector.
inline MixingStats mixing_stats(const TransitionMatrix& a, double eps, std::size_t horizon) {
  if (horizon < 1) throw Error(ErrorCode::InvalidArgument, "horizon must be at least 1");
  MixingStats stats;
  stats.pi = stationary_distribution(a);
  const Eigen::Index n = a.size();
  Matrix power = Matrix::Identity(n, n);
  for (std::size_t t = 0; t <= horizon; ++t) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      worst = std::max(worst, 0.5 * (power.row(i).transpose() - stats.pi.weights()).lpNorm<1>());
    }
    stats.d.push_back(worst);
    if (!stats.t_mix && worst <= eps) stats.t_mix = t;
    power = power * a.entries();
  }
  stats.alpha_hat = second_eigenvalue_modulus(a);
  return stats;
}

/// Rows drawn uniformly from the simplex. With `strictly_positive`, each
/// entry is lifted by `min_entry` before renormalizing.
inline TransitionMatrix random_stochastic_matrix(Eigen::Index n, std::uint64_t seed, bool strictly_positive = true,
                                                 double min_entry = 1e-3) {
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "random transition needs n >= 2");
  Rng rng(StreamKey{seed, 0, 0, 0x7261ULL});
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector row = rng.simplex(n);
    if (strictly_positive) row.array() += min_entry;
    m.row(i) = row.transpose() / row.sum();
  }
  return TransitionMatrix(std::move(m));
}

/// The 5-state chain estimated from flow cytometry data, used throughout the
/// simulation studies.
inline TransitionMatrix paper_matrix() {
  Matrix m(5, 5);
  m << 0.48, 0.50, 0.00, 0.02, 0.00,
       0.33, 0.27, 0.00, 0.40, 0.00,
       0.00, 0.00, 0.00, 0.54, 0.46,
       0.26, 0.00, 0.45, 0.29, 0.00,
       0.00, 0.00, 0.51, 0.00, 0.49;
  return TransitionMatrix(std::move(m));
}

}  // namespace aggmarkov
