#pragma once

// Simulation studies: sweep particle counts and numbers of observed pairs,
// estimate the chain for every (N, T, repeat) cell, and summarize the
// Frobenius error curves.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aggmarkov/core_model.hpp"
#include "aggmarkov/format.hpp"
#include "aggmarkov/markov_sim.hpp"
#include "aggmarkov/proximal_estimator.hpp"

namespace aggmarkov {

enum class ExperimentMode { Independent, SequentialPaperA, SequentialRandomA };

constexpr std::string_view to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::Independent: return "independent";
    case ExperimentMode::SequentialPaperA: return "sequential-paper";
    case ExperimentMode::SequentialRandomA: return "sequential-random";
  }
  return "unknown";
}

/// std::nullopt stands for infinitely many particles (exact propagation).
using ParticleCount = std::optional<std::uint64_t>;

inline std::string format_particles(const ParticleCount& n) { return n ? std::to_string(*n) : "inf"; }

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::Independent;
  Eigen::Index n = 5;
  std::vector<ParticleCount> particle_counts;
  std::vector<std::size_t> tau_grid;
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
  EstimatorConfig estimator;
  /// Ground truth override; defaults to the flow-cytometry chain (paper modes)
  /// or a seeded strictly positive random chain.
  std::optional<TransitionMatrix> transition;
  std::uint64_t random_transition_seed = 1;
  InitialLawKind initial_law = InitialLawKind::UniformRandomSimplex;
  double tail_fraction = 0.5;
  unsigned jobs = 1;

  /// Desk-scale defaults for each study.
  static ExperimentConfig defaults(ExperimentMode mode) {
    ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.n = 5;
    cfg.repeats = 10;
    cfg.estimator.max_outer = 2000;
    if (mode == ExperimentMode::Independent) {
      cfg.particle_counts = {1000, 10000, 100000, std::nullopt};
      cfg.tau_grid = {8, 16, 32, 64, 128, 256};
    } else {
      cfg.particle_counts = {2, 5, 10, 50, 100};
      cfg.tau_grid = {50, 100, 200, 400, 800, 1600};
    }
    return cfg;
  }

  void validate() const {
    if (repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be at least 1");
    if (tau_grid.empty()) throw Error(ErrorCode::InvalidArgument, "tau_grid is empty");
    for (std::size_t k = 0; k < tau_grid.size(); ++k) {
      if (tau_grid[k] == 0) throw Error(ErrorCode::InvalidArgument, "tau_grid entries must be positive");
      if (k > 0 && tau_grid[k] <= tau_grid[k - 1]) {
        throw Error(ErrorCode::InvalidArgument, "tau_grid must be strictly increasing");
      }
    }
    if (particle_counts.empty()) throw Error(ErrorCode::InvalidArgument, "particle_counts is empty");
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "tail_fraction must lie in (0, 1]");
    }
    estimator.validate();
  }

  TransitionMatrix ground_truth() const {
    if (transition) return *transition;
    if (mode == ExperimentMode::SequentialRandomA) return random_stochastic_matrix(n, random_transition_seed, true);
    return paper_matrix();
  }
};

struct ErrorRow {
  ParticleCount n_particles;
  std::size_t tau = 0;
  std::size_t repeat = 0;
  /// NaN for cells whose estimation failed.
  double frobenius_error = std::numeric_limits<double>::quiet_NaN();
  /// TV distance between the stationary laws of the estimate and the truth
  /// (NaN when either chain is reducible).
  double stationary_tv = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t sub_seed = 0;
  std::size_t outer_iterations = 0;
  EstimateStatus status = EstimateStatus::MaxIterations;
  /// Largest step-to-step increase of the objective history (<= 0 means monotone).
  double max_objective_increase = std::numeric_limits<double>::quiet_NaN();
};

struct SummaryRow {
  ParticleCount n_particles;
  std::size_t tau = 0;
  std::size_t count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  double mean_stationary_tv = std::numeric_limits<double>::quiet_NaN();
};

struct SlopeRow {
  ParticleCount n_particles;
  /// NaN when the tail window has too few usable points.
  double slope = std::numeric_limits<double>::quiet_NaN();
};

struct ErrorCurve {
  std::vector<ErrorRow> rows;
  std::vector<SummaryRow> summary;
  std::vector<SlopeRow> slopes;
};

/// Sub-seed of one cell; the cell's simulation depends on nothing else.
inline std::uint64_t cell_seed(std::uint64_t seed, const ParticleCount& n, std::size_t tau) {
  std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc908ULL);
  h = splitmix64(h ^ (n ? *n : std::numeric_limits<std::uint64_t>::max()));
  return splitmix64(h ^ static_cast<std::uint64_t>(tau));
}

/// Simulates and estimates a single cell.
inline ErrorRow run_cell(const ExperimentConfig& cfg, const TransitionMatrix& truth, const ParticleCount& n_particles,
                         std::size_t tau, std::size_t repeat) {
  ErrorRow row;
  row.n_particles = n_particles;
  row.tau = tau;
  row.repeat = repeat;
  row.sub_seed = cell_seed(cfg.seed, n_particles, tau);

  SimulationConfig sim;
  sim.n = truth.size();
  sim.n_particles = n_particles;
  sim.n_pairs = tau;
  sim.mode = cfg.mode == ExperimentMode::Independent ? SamplingMode::Independent : SamplingMode::Sequential;
  sim.seed = row.sub_seed;
  sim.repeat = repeat;
  sim.initial_law = cfg.initial_law;

  try {
    const ObservationSet obs = sample_empirical_marginals(truth, sim);
    const EstimateResult est = estimate(obs, cfg.estimator);
    row.frobenius_error = frobenius_error(est.transition.entries(), truth.entries());
    row.outer_iterations = est.outer_iterations;
    row.status = est.status;
    row.max_objective_increase = -kInfinite;
    for (std::size_t k = 1; k < est.objective_history.size(); ++k) {
      row.max_objective_increase =
          std::max(row.max_objective_increase, est.objective_history[k] - est.objective_history[k - 1]);
    }
    try {
      row.stationary_tv = tv_distance(stationary_distribution(est.transition, 1e-9),
                                      stationary_distribution(truth, 1e-9));
    } catch (const Error&) {
      // reducible estimate: leave NaN
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Infeasible) throw;
  }
  return row;
}

/// Least-squares slope of log(error) against log(tau) over the tail of the
/// curve: the last ceil(tail_fraction * size) points, but never fewer than 3.
inline double fit_loglog_slope(const std::vector<std::pair<double, double>>& points, double tail_fraction = 0.5) {
  if (points.size() < 3) throw Error(ErrorCode::InsufficientPoints, "slope fit needs at least 3 points");
  const auto want = static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(points.size())));
  const std::size_t window = std::min(points.size(), std::max<std::size_t>(3, want));
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = points.size() - window; k < points.size(); ++k) {
    const auto [tau, err] = points[k];
    if (!(err > 0.0) || !(tau > 0.0)) throw Error(ErrorCode::NonPositiveError, "slope fit needs positive values");
    const double x = std::log(tau);
    const double y = std::log(err);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = static_cast<double>(window);
  const double denom = m * sxx - sx * sx;
  if (denom <= 0.0) throw Error(ErrorCode::InsufficientPoints, "slope fit needs distinct tau values");
  return (m * sxy - sx * sy) / denom;
}

/// Mean and normal-approximation 95% interval (mean +- 1.96 sd / sqrt(K)) per
/// (N, tau) cell; NaN rows are skipped. Output is sorted by (N, tau).
inline std::vector<SummaryRow> summarize(const std::vector<ErrorRow>& rows) {
  struct Acc {
    std::vector<double> errors;
    std::vector<double> tvs;
  };
  auto key_of = [](const ErrorRow& r) {
    return std::make_pair(r.n_particles ? *r.n_particles : std::numeric_limits<std::uint64_t>::max(), r.tau);
  };
  std::map<std::pair<std::uint64_t, std::size_t>, Acc> cells;
  std::map<std::pair<std::uint64_t, std::size_t>, ParticleCount> labels;
  for (const auto& r : rows) {
    auto key = key_of(r);
    labels[key] = r.n_particles;
    auto& acc = cells[key];
    if (!std::isnan(r.frobenius_error)) acc.errors.push_back(r.frobenius_error);
    if (!std::isnan(r.stationary_tv)) acc.tvs.push_back(r.stationary_tv);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, acc] : cells) {
    SummaryRow s;
    s.n_particles = labels[key];
    s.tau = key.second;
    s.count = acc.errors.size();
    if (!acc.errors.empty()) {
      const double k = static_cast<double>(acc.errors.size());
      double sum = 0.0;
      for (double e : acc.errors) sum += e;
      s.mean = sum / k;
      double ss = 0.0;
      for (double e : acc.errors) ss += (e - s.mean) * (e - s.mean);
      const double sd = acc.errors.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
      const double half = 1.96 * sd / std::sqrt(k);
      s.ci_low = s.mean - half;
      s.ci_high = s.mean + half;
    }
    if (!acc.tvs.empty()) {
      double sum = 0.0;
      for (double v : acc.tvs) sum += v;
      s.mean_stationary_tv = sum / static_cast<double>(acc.tvs.size());
    }
    out.push_back(s);
  }
  return out;
}

inline std::vector<SlopeRow> fit_slopes(const std::vector<SummaryRow>& summary, double tail_fraction) {
  std::vector<SlopeRow> out;
  std::size_t k = 0;
  while (k < summary.size()) {
    SlopeRow row;
    row.n_particles = summary[k].n_particles;
    std::vector<std::pair<double, double>> points;
    for (; k < summary.size() && summary[k].n_particles == row.n_particles; ++k) {
      if (!std::isnan(summary[k].mean)) points.emplace_back(static_cast<double>(summary[k].tau), summary[k].mean);
    }
    try {
      row.slope = fit_loglog_slope(points, tail_fraction);
    } catch (const Error&) {
      // too few usable points: slope stays NaN
    }
    out.push_back(row);
  }
  return out;
}

/// Runs every (N, tau, repeat) cell, optionally on `cfg.jobs` threads.
/// `on_row` is called (serialized) as each cell completes; the returned rows
/// are in canonical (N, tau, repeat) order regardless.
inline ErrorCurve run_experiment(const ExperimentConfig& cfg,
                                 const std::function<void(const ErrorRow&)>& on_row = {}) {
  cfg.validate();
  const TransitionMatrix truth = cfg.ground_truth();

  struct Cell {
    ParticleCount n;
    std::size_t tau;
    std::size_t repeat;
  };
  std::vector<ParticleCount> counts = cfg.particle_counts;
  std::stable_sort(counts.begin(), counts.end(), [](const ParticleCount& a, const ParticleCount& b) {
    if (!a) return false;
    if (!b) return true;
    return *a < *b;
  });
  std::vector<Cell> cells;
  for (const auto& n : counts)
    for (std::size_t tau : cfg.tau_grid)
      for (std::size_t r = 0; r < cfg.repeats; ++r) cells.push_back({n, tau, r});

  ErrorCurve curve;
  curve.rows.resize(cells.size());
  std::mutex sink;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors;
  auto work = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      try {
        curve.rows[k] = run_cell(cfg, truth, cells[k].n, cells[k].tau, cells[k].repeat);
        if (on_row) {
          std::lock_guard lock(sink);
          on_row(curve.rows[k]);
        }
      } catch (...) {
        std::lock_guard lock(sink);
        errors.push_back(std::current_exception());
        return;
      }
    }
  };
  const unsigned jobs = std::max(1u, cfg.jobs);
  if (jobs == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < jobs; ++w) pool.emplace_back(work);
  }
  if (!errors.empty()) std::rethrow_exception(errors.front());

  curve.summary = summarize(curve.rows);
  curve.slopes = fit_slopes(curve.summary, cfg.tail_fraction);
  return curve;
}

inline void write_row_csv(std::ostream& out, const ErrorRow& r) {
  out << format_particles(r.n_particles) << ',' << r.tau << ',' << r.repeat << ',' << format_double(r.frobenius_error)
      << '\n';
}

/// Rows, then the summary and slope blocks as '#'-prefixed lines. The lower
/// interval bound is floored at 0 for display.
inline void write_curve_csv(std::ostream& out, const ErrorCurve& curve) {
  out << "n_particles,tau,repeat,frobenius_error\n";
  for (const auto& r : curve.rows) write_row_csv(out, r);
  out << "# summary: n_particles,tau,mean,ci_low,ci_high\n";
  for (const auto& s : curve.summary) {
    out << "# " << format_particles(s.n_particles) << ',' << s.tau << ',' << format_double(s.mean) << ','
        << format_double(std::isnan(s.ci_low) ? s.ci_low : std::max(0.0, s.ci_low)) << ','
        << format_double(s.ci_high) << '\n';
  }
  out << "# slope: n_particles,slope\n";
  for (const auto& s : curve.slopes) out << "# " << format_particles(s.n_particles) << ',' << format_double(s.slope) << '\n';
}

/// Static log-log plot: one polyline per N with a shaded 95% band.
inline void write_curve_svg(std::ostream& out, const ErrorCurve& curve, const std::string& title = "") {
  constexpr double width = 640, height = 440, left = 70, right = 150, top = 30, bottom = 50;
  double xmin = kInfinite, xmax = 0, ymin = kInfinite, ymax = 0;
  for (const auto& s : curve.summary) {
    if (std::isnan(s.mean) || s.mean <= 0.0) continue;
    xmin = std::min(xmin, static_cast<double>(s.tau));
    xmax = std::max(xmax, static_cast<double>(s.tau));
    ymin = std::min(ymin, std::max(s.ci_low, s.mean * 0.5) > 0 ? std::max(s.ci_low, s.mean * 0.5) : s.mean);
    ymax = std::max(ymax, s.ci_high);
  }
  if (!(xmax > 0)) {
    xmin = 1;
    xmax = 10;
    ymin = 0.1;
    ymax = 1;
  }
  if (xmax <= xmin) xmax = xmin * 10;
  if (ymax <= ymin) ymax = ymin * 10;
  const double lx0 = std::floor(std::log10(xmin)), lx1 = std::ceil(std::log10(xmax));
  const double ly0 = std::floor(std::log10(ymin)), ly1 = std::ceil(std::log10(ymax));
  auto px = [&](double x) { return left + (std::log10(x) - lx0) / (lx1 - lx0) * (width - left - right); };
  auto py = [&](double y) {
    const double ly = std::log10(std::max(y, std::pow(10.0, ly0)));
    return top + (ly1 - ly) / (ly1 - ly0) * (height - top - bottom);
  };
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) out << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">" << title << "</text>\n";
  out << "<g stroke=\"#ccc\" font-size=\"11\" fill=\"black\">\n";
  for (double e = lx0; e <= lx1; e += 1) {
    const double x = px(std::pow(10.0, e));
    out << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\"" << height - bottom << "\"/>";
    out << "<text x=\"" << x - 12 << "\" y=\"" << height - bottom + 16 << "\" stroke=\"none\">1e" << e << "</text>\n";
  }
  for (double e = ly0; e <= ly1; e += 1) {
    const double y = py(std::pow(10.0, e));
    out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - right << "\" y2=\"" << y << "\"/>";
    out << "<text x=\"" << left - 40 << "\" y=\"" << y + 4 << "\" stroke=\"none\">1e" << e << "</text>\n";
  }
  out << "</g>\n";
  out << "<text x=\"" << (width - right + left) / 2 - 40 << "\" y=\"" << height - 12
      << "\" font-size=\"12\">pairs observed (T)</text>\n";
  out << "<text x=\"14\" y=\"" << (height) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << height / 2
      << ")\">Frobenius error</text>\n";

  std::size_t series = 0;
  std::size_t k = 0;
  while (k < curve.summary.size()) {
    const ParticleCount label = curve.summary[k].n_particles;
    std::vector<const SummaryRow*> pts;
    for (; k < curve.summary.size() && curve.summary[k].n_particles == label; ++k) {
      if (!std::isnan(curve.summary[k].mean) && curve.summary[k].mean > 0.0) pts.push_back(&curve.summary[k]);
    }
    const char* color = palette[series % (sizeof(palette) / sizeof(palette[0]))];
    if (!pts.empty()) {
      std::ostringstream band, line;
      for (const auto* p : pts) band << px(static_cast<double>(p->tau)) << ',' << py(p->ci_high) << ' ';
      for (auto it = pts.rbegin(); it != pts.rend(); ++it)
        band << px(static_cast<double>((*it)->tau)) << ',' << py((*it)->ci_low) << ' ';
      for (const auto* p : pts) line << px(static_cast<double>(p->tau)) << ',' << py(p->mean) << ' ';
      out << "<polygon class=\"ci\" points=\"" << band.str() << "\" fill=\"" << color
          << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
      out << "<polyline class=\"series\" data-n=\"" << format_particles(label) << "\" points=\"" << line.str()
          << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    }
    const double ly = top + 16.0 * static_cast<double>(series);
    out << "<text x=\"" << width - right + 12 << "\" y=\"" << ly + 4 << "\" font-size=\"12\" fill=\"" << color
        << "\">N=" << format_particles(label) << "</text>\n";
    ++series;
  }
  out << "</svg>\n";
}

}  // namespace aggmarkov
