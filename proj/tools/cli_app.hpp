#pragma once

// Command-line front end: simulate, estimate, diagnose, experiment.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 invalid flags, 3 unreadable or
// malformed input, 4 infeasible observations, 5 no convergence under
// --strict, 6 result file without plans.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aggmarkov/aggmarkov.hpp"

namespace aggmarkov::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kBadFlags = 2,
  kBadInput = 3,
  kInfeasible = 4,
  kNotConverged = 5,
  kNoPlans = 6,
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline ParticleCount parse_particles(const std::string& text) {
  if (text == "inf" || text == "infinity" || text == "Infinity") return std::nullopt;
  std::size_t used = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(text, &used);
  } catch (const std::exception&) {
    throw UsageError("invalid particle count '" + text + "'");
  }
  if (used != text.size() || value == 0) throw UsageError("invalid particle count '" + text + "'");
  return static_cast<std::uint64_t>(value);
}

/// flag > AGGMARKOV_SEED > 0
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("AGGMARKOV_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("AGGMARKOV_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

/// `paper`, `random:<seed>`, or a JSON file holding either a bare matrix or
/// an object with a "transition" matrix.
inline TransitionMatrix load_transition(const std::string& spec, Eigen::Index states) {
  if (spec == "paper") return paper_matrix();
  if (spec.rfind("random:", 0) == 0) {
    const std::string seed_text = spec.substr(7);
    std::size_t used = 0;
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(seed_text, &used);
    } catch (const std::exception&) {
      throw UsageError("invalid random transition seed '" + seed_text + "'");
    }
    if (used != seed_text.size()) throw UsageError("invalid random transition seed '" + seed_text + "'");
    return random_stochastic_matrix(states, seed, true);
  }
  try {
    const Json doc = parse_json_text(read_text_file(spec));
    const Json& m = doc.is_object() ? detail::require(doc, "transition", "") : doc;
    return TransitionMatrix::normalized_from(detail::matrix_from_json(m, "transition"), 1e-9);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidTransition) throw Error(ErrorCode::Malformed, e.what());
    throw;
  }
}

struct InnerSpec {
  InnerMode mode = InnerMode::FullConvergence;
  std::size_t sweeps = 1;
};

inline InnerSpec parse_inner(const std::string& text) {
  if (text == "full") return {};
  if (text.rfind("sweeps:", 0) == 0) {
    const std::string k = text.substr(7);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(k, &used);
    } catch (const std::exception&) {
      throw UsageError("invalid --inner value '" + text + "'");
    }
    if (used != k.size() || v == 0) throw UsageError("invalid --inner value '" + text + "'");
    return {InnerMode::Sweeps, static_cast<std::size_t>(v)};
  }
  throw UsageError("invalid --inner value '" + text + "' (expected full or sweeps:<k>)");
}

inline ExperimentMode parse_experiment_mode(const std::string& text) {
  if (text == "independent") return ExperimentMode::Independent;
  if (text == "sequential-paper") return ExperimentMode::SequentialPaperA;
  if (text == "sequential-random") return ExperimentMode::SequentialRandomA;
  throw UsageError("invalid --mode '" + text + "'");
}

/// Overrides the mode defaults with the keys present in `doc`.
inline ExperimentConfig experiment_config_from_json(ExperimentMode mode, const Json& doc) {
  ExperimentConfig cfg = ExperimentConfig::defaults(mode);
  if (doc.is_null()) return cfg;
  if (!doc.is_object()) detail::malformed("<root>", "expected an object");
  for (const auto& [key, value] : doc.items()) {
    if (key == "n") {
      if (!value.is_number_integer() || value.get<std::int64_t>() < 2) detail::malformed(key, "expected an integer >= 2");
      cfg.n = static_cast<Eigen::Index>(value.get<std::int64_t>());
    } else if (key == "particle_counts") {
      if (!value.is_array() || value.empty()) detail::malformed(key, "expected a non-empty array");
      cfg.particle_counts.clear();
      for (const auto& v : value) {
        if (v.is_string() && v.get<std::string>() == "inf") {
          cfg.particle_counts.emplace_back(std::nullopt);
        } else if (v.is_number_unsigned() && v.get<std::uint64_t>() > 0) {
          cfg.particle_counts.emplace_back(v.get<std::uint64_t>());
        } else {
          detail::malformed(key, "entries must be positive integers or \"inf\"");
        }
      }
    } else if (key == "tau_grid") {
      if (!value.is_array() || value.empty()) detail::malformed(key, "expected a non-empty array");
      cfg.tau_grid.clear();
      for (const auto& v : value) {
        if (!v.is_number_unsigned()) detail::malformed(key, "entries must be positive integers");
        cfg.tau_grid.push_back(v.get<std::size_t>());
      }
    } else if (key == "repeats") {
      if (!value.is_number_unsigned()) detail::malformed(key, "expected a positive integer");
      cfg.repeats = value.get<std::size_t>();
    } else if (key == "seed") {
      if (!value.is_number_unsigned()) detail::malformed(key, "expected an unsigned integer");
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "max_outer") {
      if (!value.is_number_unsigned()) detail::malformed(key, "expected a positive integer");
      cfg.estimator.max_outer = value.get<std::size_t>();
    } else if (key == "outer_tol") {
      if (!value.is_number()) detail::malformed(key, "expected a number");
      cfg.estimator.outer_tol = value.get<double>();
    } else if (key == "inner") {
      if (!value.is_string()) detail::malformed(key, "expected \"full\" or \"sweeps:<k>\"");
      try {
        const auto inner = parse_inner(value.get<std::string>());
        cfg.estimator.inner_mode = inner.mode;
        cfg.estimator.sweeps = inner.sweeps;
      } catch (const UsageError& e) {
        detail::malformed(key, e.what());
      }
    } else if (key == "tail_fraction") {
      if (!value.is_number()) detail::malformed(key, "expected a number");
      cfg.tail_fraction = value.get<double>();
    } else if (key == "transition") {
      try {
        cfg.transition = TransitionMatrix::normalized_from(detail::matrix_from_json(value, key), 1e-9);
      } catch (const Error& e) {
        detail::malformed(key, e.what());
      }
      cfg.n = cfg.transition->size();
    } else if (key == "random_transition_seed") {
      if (!value.is_number_unsigned()) detail::malformed(key, "expected an unsigned integer");
      cfg.random_transition_seed = value.get<std::uint64_t>();
    } else if (key == "initial_law") {
      const std::string law = value.is_string() ? value.get<std::string>() : "";
      if (law == "simplex") cfg.initial_law = InitialLawKind::UniformRandomSimplex;
      else if (law == "uniform") cfg.initial_law = InitialLawKind::NormalizedUniform;
      else detail::malformed(key, "expected \"simplex\" or \"uniform\"");
    } else {
      detail::malformed(key, "unknown key");
    }
  }
  if (cfg.mode == ExperimentMode::SequentialPaperA && cfg.n != 5 && !cfg.transition) {
    detail::malformed("n", "sequential-paper uses the 5-state chain");
  }
  if (cfg.mode != ExperimentMode::SequentialRandomA && !cfg.transition) cfg.n = 5;
  return cfg;
}

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Malformed:
    case ErrorCode::InvalidTransition:
    case ErrorCode::NonnegativityViolation:
    case ErrorCode::EmptyInput:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::NonFinite:
      return kBadInput;
    case ErrorCode::Infeasible:
    case ErrorCode::InfeasibleSupport:
    case ErrorCode::MassMismatch:  // unequal pair masses leave no feasible plan
      return kInfeasible;
    case ErrorCode::InvalidArgument:
      return kBadFlags;
    default:
      return kFailure;
  }
}

struct SimulateArgs {
  std::string transition;
  std::string mode = "independent";
  std::string particles = "inf";
  std::size_t pairs = 1;
  std::optional<std::uint64_t> seed;
  std::string out;
  Eigen::Index states = 5;
  std::string initial_law = "simplex";
  std::size_t burn_in = 0;
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  SimulationConfig sim;
  if (a.mode == "independent") sim.mode = SamplingMode::Independent;
  else if (a.mode == "sequential") sim.mode = SamplingMode::Sequential;
  else throw UsageError("invalid --mode '" + a.mode + "'");
  if (a.initial_law == "simplex") sim.initial_law = InitialLawKind::UniformRandomSimplex;
  else if (a.initial_law == "uniform") sim.initial_law = InitialLawKind::NormalizedUniform;
  else throw UsageError("invalid --initial-law '" + a.initial_law + "'");
  if (a.pairs == 0) throw UsageError("--pairs must be at least 1");
  sim.n_particles = parse_particles(a.particles);
  sim.n_pairs = a.pairs;
  sim.seed = resolve_seed(a.seed);
  sim.burn_in = a.burn_in;
  const TransitionMatrix truth = load_transition(a.transition, a.states);
  sim.n = truth.size();
  const ObservationSet obs = sample_empirical_marginals(truth, sim);
  ObservationMeta meta;
  meta.seed = sim.seed;
  meta.mode = std::string(to_string(sim.mode));
  meta.n_particles = format_particles(sim.n_particles);
  meta.generator_version = kGeneratorVersion;
  write_text_file(a.out, dump_canonical(observation_to_json(obs, meta)));
  out << "wrote " << obs.size() << " pairs (n=" << obs.n << ") to " << a.out << "\n";
  return kOk;
}

struct EstimateArgs {
  std::string observations;
  std::string out;
  std::size_t max_outer = 1000;
  double outer_tol = 1e-8;
  std::string inner = "full";
  bool emit_plans = false;
  bool strict = false;
  bool no_normalize = false;
};

inline int cmd_estimate(const EstimateArgs& a, std::ostream& out) {
  EstimatorConfig cfg;
  cfg.max_outer = a.max_outer;
  cfg.outer_tol = a.outer_tol;
  const InnerSpec inner = parse_inner(a.inner);
  cfg.inner_mode = inner.mode;
  cfg.sweeps = inner.sweeps;
  if (!(a.outer_tol > 0.0) || a.max_outer == 0) throw UsageError("--outer-tol and --max-outer must be positive");

  const ObservationFile file = observation_from_json(parse_json_text(read_text_file(a.observations)), !a.no_normalize);
  const EstimateResult est = estimate(file.observations, cfg);

  ResultFile r;
  r.transition = est.transition.entries();
  r.aggregate = est.aggregate;
  if (a.emit_plans) r.plans = est.plans;
  r.objective_history = est.objective_history;
  r.status = std::string(to_string(est.status));
  r.outer_iterations = est.outer_iterations;
  r.diagnostics = diagnose(est, file.observations);
  write_text_file(a.out, dump_canonical(result_to_json(r)));

  const double objective = est.objective_history.empty() ? kInfinite : est.objective_history.back();
  out << "status=" << r.status << " outer_iterations=" << est.outer_iterations
      << " objective=" << format_double(objective) << " certified_unique="
      << (r.diagnostics ? (r.diagnostics->certified_unique ? "true" : "false") : "unknown") << "\n";
  if (a.strict && est.status != EstimateStatus::Converged) return kNotConverged;
  return kOk;
}

struct DiagnoseArgs {
  std::string result;
  bool json = false;
};

inline int cmd_diagnose(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  ResultFile file;
  try {
    file = result_from_json(parse_json_text(read_text_file(a.result)));
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kBadInput;
  }
  if (!file.plans || file.plans->empty()) {
    err << "error: result has no plans; rerun estimate with --emit-plans\n";
    return kNoPlans;
  }
  const EstimateResult est = result_with_plans(file);
  const ObservationSet obs = observations_from_plans(*file.plans);
  DualFitOptions fit;
  fit.throw_on_misfit = false;
  const DualScalings duals = extract_dual_scalings(est, fit);
  const bool factored = duals.max_fit_error <= fit.rank_one_tol;
  const auto feas = check_dual_feasibility(duals, &est.aggregate);
  const auto cert = uniqueness_certificate(duals, est);
  const auto primal = primal_span_certificate(est);
  const bool certified = factored && cert.certified_unique;
  const UniquenessVerdict verdict = factored ? cert.verdict : UniquenessVerdict::Undetermined;
  const double primal_value = objective_value(est.plans, est.aggregate);
  const double gap = primal_value - dual_objective(duals, obs);

  if (a.json) {
    Json doc = Json{{"rank_u", cert.rank_u},
                    {"rank_v", cert.rank_v},
                    {"certified_unique", certified},
                    {"inactive_set_size", cert.inactive_set.size()},
                    {"max_dual_constraint", detail::nullable(feas.max_value)},
                    {"duality_gap", detail::nullable(gap)},
                    {"primal_objective", detail::nullable(primal_value)},
                    {"aggregate_strictly_positive", cert.aggregate_strictly_positive},
                    {"primal_verdict", std::string(to_string(primal.verdict))},
                    {"dual_fit_error", detail::nullable(duals.max_fit_error)},
                    {"verdict", std::string(to_string(verdict))}};
    out << dump_canonical(doc);
  } else {
    out << "rank_u: " << cert.rank_u << "\n"
        << "rank_v: " << cert.rank_v << "\n"
        << "inactive_set_size: " << cert.inactive_set.size() << "\n"
        << "max_dual_constraint: " << format_double(feas.max_value) << "\n"
        << "duality_gap: " << format_double(gap) << "\n"
        << "aggregate_strictly_positive: " << (cert.aggregate_strictly_positive ? "true" : "false") << "\n"
        << "dual_fit_error: " << format_double(duals.max_fit_error) << "\n"
        << "primal_verdict: " << to_string(primal.verdict) << "\n"
        << "verdict: " << to_string(verdict) << "\n";
  }
  return kOk;
}

struct ExperimentArgs {
  std::string mode;
  std::string config;
  std::string out;
  std::string plot;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 0;
};

inline int cmd_experiment(const ExperimentArgs& a, std::ostream& out) {
  const ExperimentMode mode = parse_experiment_mode(a.mode);
  const Json doc = a.config.empty() ? Json(nullptr) : parse_json_text(read_text_file(a.config));
  ExperimentConfig cfg = experiment_config_from_json(mode, doc);
  if (a.seed || !doc.is_object() || !doc.contains("seed")) cfg.seed = resolve_seed(a.seed);
  cfg.jobs = a.jobs > 0 ? a.jobs : std::max(1u, std::thread::hardware_concurrency());

  // Rows land in <out>.partial as cells finish; the sorted file replaces it at the end.
  const std::string partial_path = a.out + ".partial";
  std::ofstream partial(partial_path, std::ios::trunc);
  if (!partial) throw Error(ErrorCode::InvalidArgument, "cannot write '" + partial_path + "'");
  partial << "n_particles,tau,repeat,frobenius_error\n";
  const ErrorCurve curve = run_experiment(cfg, [&](const ErrorRow& row) {
    write_row_csv(partial, row);
    partial.flush();
  });
  partial.close();

  std::ostringstream csv;
  write_curve_csv(csv, curve);
  write_text_file(a.out, csv.str());
  std::remove(partial_path.c_str());
  if (!a.plot.empty()) {
    std::ostringstream svg;
    write_curve_svg(svg, curve, std::string(to_string(mode)));
    write_text_file(a.plot, svg.str());
  }
  for (const auto& s : curve.slopes) {
    out << "N=" << format_particles(s.n_particles) << " slope=" << format_double(s.slope) << "\n";
  }
  return kOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Estimate Markov transition matrices from aggregate snapshots", "aggmarkov"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate aggregate observations from a known chain");
  simulate->add_option("--transition", sim.transition, "paper | random:<seed> | path to JSON matrix")->required();
  simulate->add_option("--mode", sim.mode, "independent | sequential");
  simulate->add_option("--particles", sim.particles, "particle count or inf");
  simulate->add_option("--pairs", sim.pairs, "number of observed pairs")->required();
  simulate->add_option("--seed", sim.seed, "RNG seed (overrides AGGMARKOV_SEED)");
  simulate->add_option("--out", sim.out, "output observation file")->required();
  simulate->add_option("--states", sim.states, "state count for random:<seed>");
  simulate->add_option("--initial-law", sim.initial_law, "simplex | uniform");
  simulate->add_option("--burn-in", sim.burn_in, "sequential mode: steps before the first snapshot");

  EstimateArgs est;
  auto* estimate_cmd = app.add_subcommand("estimate", "Estimate the transition matrix from observations");
  estimate_cmd->add_option("--observations", est.observations, "observation file")->required();
  estimate_cmd->add_option("--out", est.out, "output result file")->required();
  estimate_cmd->add_option("--max-outer", est.max_outer, "maximum outer iterations");
  estimate_cmd->add_option("--outer-tol", est.outer_tol, "relative change tolerance on the aggregate");
  estimate_cmd->add_option("--inner", est.inner, "full | sweeps:<k>");
  estimate_cmd->add_flag("--emit-plans", est.emit_plans, "store the transport plans in the result");
  estimate_cmd->add_flag("--strict", est.strict, "exit 5 when the run does not converge");
  estimate_cmd->add_flag("--no-normalize", est.no_normalize, "keep pair masses as given");

  DiagnoseArgs diag;
  auto* diagnose_cmd = app.add_subcommand("diagnose", "Dual feasibility and uniqueness report for a result");
  diagnose_cmd->add_option("--result", diag.result, "result file written with --emit-plans")->required();
  diagnose_cmd->add_flag("--json", diag.json, "print JSON");

  ExperimentArgs exp;
  auto* experiment = app.add_subcommand("experiment", "Run an error-curve study");
  experiment->add_option("--mode", exp.mode, "independent | sequential-paper | sequential-random")->required();
  experiment->add_option("--config", exp.config, "JSON overrides of the study defaults");
  experiment->add_option("--out", exp.out, "output CSV")->required();
  experiment->add_option("--plot", exp.plot, "optional SVG plot");
  experiment->add_option("--seed", exp.seed, "RNG seed (overrides AGGMARKOV_SEED)");
  experiment->add_option("--jobs", exp.jobs, "worker threads (default: all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kBadFlags;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim, out);
    if (estimate_cmd->parsed()) return cmd_estimate(est, out);
    if (diagnose_cmd->parsed()) return cmd_diagnose(diag, out, err);
    if (experiment->parsed()) return cmd_experiment(exp, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kBadFlags;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kBadFlags;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"aggmarkov"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace aggmarkov::cli
