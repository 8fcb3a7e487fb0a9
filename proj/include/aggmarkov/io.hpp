#pragma once

// JSON observation and result files.
//
// Documents are written through nlohmann::json, whose objects keep keys
// sorted and whose doubles print as the shortest round-trip decimal, so
// parse -> serialize is byte-stable.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aggmarkov/core_model.hpp"
#include "aggmarkov/duality.hpp"
#include "aggmarkov/proximal_estimator.hpp"

namespace aggmarkov {

using Json = nlohmann::json;

inline constexpr const char* kGeneratorVersion = "aggmarkov 0.1.0";

struct ObservationMeta {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  /// "inf" or a decimal count.
  std::optional<std::string> n_particles;
  std::optional<std::string> generator_version;
};

struct ObservationFile {
  ObservationSet observations;
  ObservationMeta meta;
};

struct Diagnostics {
  bool certified_unique = false;
  int rank_u = 0;
  int rank_v = 0;
  double max_dual_constraint = 0.0;
  double duality_gap = 0.0;
  double dual_fit_error = 0.0;
  std::string verdict = "Undetermined";
};

struct ResultFile {
  Matrix transition;
  Matrix aggregate;
  std::optional<std::vector<Matrix>> plans;
  std::vector<double> objective_history;
  std::string status;
  std::size_t outer_iterations = 0;
  /// Absent when the dual scalings could not be extracted.
  std::optional<Diagnostics> diagnostics;
};

namespace detail {

[[noreturn]] inline void malformed(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::Malformed, "field '" + field + "': " + why);
}

inline const Json& require(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) malformed(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) malformed(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

inline Vector vector_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) malformed(path, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) malformed(path + "[" + std::to_string(k) + "]", "expected a number");
    v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  return v;
}

inline Matrix matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) malformed(path, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  Matrix m;
  for (std::size_t i = 0; i < rows; ++i) {
    const Vector row = vector_from_json(j[i], path + "[" + std::to_string(i) + "]");
    if (i == 0) m.resize(static_cast<Eigen::Index>(rows), row.size());
    if (row.size() != m.cols()) malformed(path + "[" + std::to_string(i) + "]", "ragged row");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

inline Json matrix_to_json(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(vector_to_json(m.row(i).transpose()));
  return out;
}

inline Json nullable(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

}  // namespace detail

/// Canonical text: sorted keys, compact, trailing newline.
inline std::string dump_canonical(const Json& j) { return j.dump() + "\n"; }

inline Json parse_json_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::Malformed, std::string("invalid JSON: ") + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Malformed, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::InvalidArgument, "failed writing '" + path + "'");
}

inline Json observation_to_json(const ObservationSet& obs, const ObservationMeta& meta = {}) {
  Json doc = Json::object();
  doc["n"] = static_cast<std::int64_t>(obs.n);
  Json pairs = Json::array();
  for (const auto& p : obs.pairs) {
    Json item = Json::object();
    item["mu"] = detail::vector_to_json(p.mu().weights());
    item["nu"] = detail::vector_to_json(p.nu().weights());
    pairs.push_back(std::move(item));
  }
  doc["pairs"] = std::move(pairs);
  Json m = Json::object();
  if (meta.seed) m["seed"] = *meta.seed;
  if (meta.mode) m["mode"] = *meta.mode;
  if (meta.n_particles) m["n_particles"] = *meta.n_particles;
  if (meta.generator_version) m["generator_version"] = *meta.generator_version;
  if (!m.empty()) doc["meta"] = std::move(m);
  return doc;
}

/// Parses an observation document. With `normalize`, each pair is scaled to
/// unit mass before validation.
inline ObservationFile observation_from_json(const Json& doc, bool normalize) {
  if (!doc.is_object()) detail::malformed("<root>", "expected an object");
  const Json& nj = detail::require(doc, "n", "");
  if (!nj.is_number_integer() || nj.get<std::int64_t>() <= 0) detail::malformed("n", "expected a positive integer");
  const auto n = static_cast<Eigen::Index>(nj.get<std::int64_t>());
  const Json& pj = detail::require(doc, "pairs", "");
  if (!pj.is_array() || pj.empty()) detail::malformed("pairs", "expected a non-empty array");
  std::vector<std::pair<Vector, Vector>> raw;
  for (std::size_t t = 0; t < pj.size(); ++t) {
    const std::string path = "pairs[" + std::to_string(t) + "]";
    Vector mu = detail::vector_from_json(detail::require(pj[t], "mu", path), path + ".mu");
    Vector nu = detail::vector_from_json(detail::require(pj[t], "nu", path), path + ".nu");
    if (mu.size() != n) detail::malformed(path + ".mu", "expected " + std::to_string(n) + " entries");
    if (nu.size() != n) detail::malformed(path + ".nu", "expected " + std::to_string(n) + " entries");
    raw.emplace_back(std::move(mu), std::move(nu));
  }
  ObservationFile out;
  out.observations = build_observation_set(raw, normalize);
  if (const auto it = doc.find("meta"); it != doc.end() && it->is_object()) {
    const Json& m = *it;
    if (auto s = m.find("seed"); s != m.end() && s->is_number_unsigned()) out.meta.seed = s->get<std::uint64_t>();
    if (auto s = m.find("mode"); s != m.end() && s->is_string()) out.meta.mode = s->get<std::string>();
    if (auto s = m.find("n_particles"); s != m.end() && s->is_string()) out.meta.n_particles = s->get<std::string>();
    if (auto s = m.find("generator_version"); s != m.end() && s->is_string()) {
      out.meta.generator_version = s->get<std::string>();
    }
  }
  return out;
}

inline Json result_to_json(const ResultFile& r) {
  Json doc = Json::object();
  doc["transition"] = detail::matrix_to_json(r.transition);
  doc["aggregate"] = detail::matrix_to_json(r.aggregate);
  if (r.plans) {
    Json plans = Json::array();
    for (const auto& p : *r.plans) plans.push_back(detail::matrix_to_json(p));
    doc["plans"] = std::move(plans);
  }
  Json hist = Json::array();
  for (double f : r.objective_history) hist.push_back(detail::nullable(f));
  doc["objective_history"] = std::move(hist);
  doc["status"] = r.status;
  doc["outer_iterations"] = static_cast<std::uint64_t>(r.outer_iterations);
  if (r.diagnostics) {
    const auto& d = *r.diagnostics;
    doc["diagnostics"] = Json{{"certified_unique", d.certified_unique},
                              {"rank_u", d.rank_u},
                              {"rank_v", d.rank_v},
                              {"max_dual_constraint", detail::nullable(d.max_dual_constraint)},
                              {"duality_gap", detail::nullable(d.duality_gap)},
                              {"dual_fit_error", detail::nullable(d.dual_fit_error)},
                              {"verdict", d.verdict}};
  } else {
    doc["diagnostics"] = nullptr;
  }
  return doc;
}

inline ResultFile result_from_json(const Json& doc) {
  if (!doc.is_object()) detail::malformed("<root>", "expected an object");
  ResultFile r;
  r.transition = detail::matrix_from_json(detail::require(doc, "transition", ""), "transition");
  r.aggregate = detail::matrix_from_json(detail::require(doc, "aggregate", ""), "aggregate");
  if (const auto it = doc.find("plans"); it != doc.end() && !it->is_null()) {
    if (!it->is_array()) detail::malformed("plans", "expected an array of matrices");
    std::vector<Matrix> plans;
    for (std::size_t t = 0; t < it->size(); ++t) {
      plans.push_back(detail::matrix_from_json((*it)[t], "plans[" + std::to_string(t) + "]"));
    }
    r.plans = std::move(plans);
  }
  const Json& hist = detail::require(doc, "objective_history", "");
  if (!hist.is_array()) detail::malformed("objective_history", "expected an array");
  for (const auto& f : hist) {
    r.objective_history.push_back(f.is_number() ? f.get<double>() : std::numeric_limits<double>::quiet_NaN());
  }
  const Json& status = detail::require(doc, "status", "");
  if (!status.is_string()) detail::malformed("status", "expected a string");
  r.status = status.get<std::string>();
  if (const auto it = doc.find("outer_iterations"); it != doc.end() && it->is_number_unsigned()) {
    r.outer_iterations = it->get<std::size_t>();
  }
  if (const auto it = doc.find("diagnostics"); it != doc.end() && it->is_object()) {
    Diagnostics d;
    const Json& dj = *it;
    d.certified_unique = dj.value("certified_unique", false);
    d.rank_u = dj.value("rank_u", 0);
    d.rank_v = dj.value("rank_v", 0);
    auto num = [&](const char* key) {
      const auto f = dj.find(key);
      return f != dj.end() && f->is_number() ? f->get<double>() : std::numeric_limits<double>::quiet_NaN();
    };
    d.max_dual_constraint = num("max_dual_constraint");
    d.duality_gap = num("duality_gap");
    d.dual_fit_error = num("dual_fit_error");
    d.verdict = dj.value("verdict", std::string("Undetermined"));
    r.diagnostics = d;
  }
  return r;
}

/// Diagnostics of a finished estimate. Plans that do not factor through the
/// aggregate (a run stopped before converging) are still fitted, but the
/// verdict is then Undetermined and nothing is certified.
inline std::optional<Diagnostics> diagnose(const EstimateResult& result, const ObservationSet& obs) {
  try {
    DualFitOptions fit;
    fit.throw_on_misfit = false;
    const DualScalings duals = extract_dual_scalings(result, fit);
    const bool factored = duals.max_fit_error <= fit.rank_one_tol;
    const auto feas = check_dual_feasibility(duals, &result.aggregate);
    const auto cert = uniqueness_certificate(duals, result);
    Diagnostics d;
    d.certified_unique = factored && cert.certified_unique;
    d.rank_u = cert.rank_u;
    d.rank_v = cert.rank_v;
    d.max_dual_constraint = feas.max_value;
    d.duality_gap = objective_value(result.plans, result.aggregate) - dual_objective(duals, obs);
    d.verdict = std::string(to_string(factored ? cert.verdict : UniquenessVerdict::Undetermined));
    d.dual_fit_error = duals.max_fit_error;
    return d;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NotRankOne) return std::nullopt;
    throw;
  }
}

/// Rebuilds the observation pairs from stored plans (row and column sums).
inline ObservationSet observations_from_plans(const std::vector<Matrix>& plans) {
  std::vector<std::pair<Vector, Vector>> raw;
  for (const auto& p : plans) raw.emplace_back(p.rowwise().sum(), p.colwise().sum().transpose());
  return build_observation_set(raw, false);
}

/// Rebuilds an EstimateResult from a result file that carries plans.
inline EstimateResult result_with_plans(const ResultFile& file) {
  if (!file.plans) throw Error(ErrorCode::EmptyInput, "result file carries no plans");
  EstimateResult r;
  r.plans = *file.plans;
  r.aggregate = file.aggregate;
  r.transition = TransitionMatrix::normalized_from(file.transition, 1e-9);
  r.objective_history = file.objective_history;
  r.outer_iterations = file.outer_iterations;
  r.status = file.status == "Converged" ? EstimateStatus::Converged : EstimateStatus::MaxIterations;
  return r;
}

}  // namespace aggmarkov
