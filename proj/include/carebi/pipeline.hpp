#pragma once

// Pipeline orchestration. Each stage reads its upstream artifacts from the
// output directory, writes its own as plain CSV/JSON, and records content
// hashes in the run manifest. All randomness flows from the single config
// seed; a rerun with identical config and inputs is byte-identical except
// for manifest timings.

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "carebi/cfa.hpp"
#include "carebi/codebook.hpp"
#include "carebi/common.hpp"
#include "carebi/csv.hpp"
#include "carebi/efa.hpp"
#include "carebi/polycorr.hpp"
#include "carebi/scoring.hpp"
#include "carebi/simulate.hpp"
#include "carebi/validation.hpp"

namespace carebi {

inline constexpr const char* kToolVersion = "1.0.0";

// shortest decimal that round-trips; deterministic for identical doubles
inline std::string fmt_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path);
  out << text;
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

inline std::string file_hash(const std::string& path) {
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0')
      << detail::fnv1a64(read_text_file(path));
  return hex.str();
}

// ---------------------------------------------------------------------------
// configuration

struct PipelineConfig {
  // paths
  std::string raw_csv;
  std::string codebook;
  std::string model_spec;
  std::string outcomes_csv;
  std::string true_model;
  std::string out_dir = "out";

  std::uint64_t seed = 1;
  std::vector<std::string> stages;  // empty: caller picks stages explicitly

  // prep
  double max_missing = 0.10;
  // corr
  int n_boot = 0;  // 0: unit DWLS weights
  double rho_tol = 1e-4;
  double kmo_min = 0.80;
  // efa
  int n_sims = 100;
  PaCriterion criterion = PaCriterion::mean;
  int n_factors = 0;  // 0: use the parallel-analysis suggestion
  double load_min = 0.40;
  double cross_max = 0.32;
  double comm_min = 0.40;
  std::vector<std::string> retention_overrides;
  // classify
  int k = 3;
  std::string preset;  // nonempty: fixed thresholds instead of k-means
  // validate
  std::string cluster_column;  // outcomes-table column; empty: cohort clusters
  std::vector<OutcomeSpec> outcomes;
  // simulate
  long sim_n = 2000;
  double sim_missing_rate = 0.0;
  int sim_clusters = 0;

  std::string artifact(const std::string& name) const {
    return (std::filesystem::path(out_dir) / name).string();
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& known,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key))
      throw UserError("unknown config key '" + where + key + "'");
  }
}

}  // namespace detail

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"raw_csv", "codebook", "model_spec", "outcomes_csv", "true_model",
       "out_dir", "seed", "stages", "prep", "corr", "efa", "cfa", "score",
       "classify", "validate", "simulate", "report"},
      "");
  PipelineConfig c;
  auto str = [&](const char* key, std::string& out) {
    if (j.contains(key)) out = j.at(key).get<std::string>();
  };
  str("raw_csv", c.raw_csv);
  str("codebook", c.codebook);
  str("model_spec", c.model_spec);
  str("outcomes_csv", c.outcomes_csv);
  str("true_model", c.true_model);
  str("out_dir", c.out_dir);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("stages"))
    for (const auto& s : j.at("stages"))
      c.stages.push_back(s.get<std::string>());

  if (j.contains("prep")) {
    const auto& p = j.at("prep");
    detail::reject_unknown_keys(p, {"max_missing"}, "prep.");
    if (p.contains("max_missing")) c.max_missing = p.at("max_missing").get<double>();
  }
  if (j.contains("corr")) {
    const auto& p = j.at("corr");
    detail::reject_unknown_keys(p, {"n_boot", "rho_tol", "kmo_min"}, "corr.");
    if (p.contains("n_boot")) c.n_boot = p.at("n_boot").get<int>();
    if (p.contains("rho_tol")) c.rho_tol = p.at("rho_tol").get<double>();
    if (p.contains("kmo_min")) c.kmo_min = p.at("kmo_min").get<double>();
  }
  if (j.contains("efa")) {
    const auto& p = j.at("efa");
    detail::reject_unknown_keys(p,
                                {"n_sims", "criterion", "n_factors", "load_min",
                                 "cross_max", "comm_min", "overrides"},
                                "efa.");
    if (p.contains("n_sims")) c.n_sims = p.at("n_sims").get<int>();
    if (p.contains("criterion"))
      c.criterion = pa_criterion_from_string(p.at("criterion").get<std::string>());
    if (p.contains("n_factors")) c.n_factors = p.at("n_factors").get<int>();
    if (p.contains("load_min")) c.load_min = p.at("load_min").get<double>();
    if (p.contains("cross_max")) c.cross_max = p.at("cross_max").get<double>();
    if (p.contains("comm_min")) c.comm_min = p.at("comm_min").get<double>();
    if (p.contains("overrides"))
      for (const auto& s : p.at("overrides"))
        c.retention_overrides.push_back(s.get<std::string>());
  }
  if (j.contains("classify")) {
    const auto& p = j.at("classify");
    detail::reject_unknown_keys(p, {"k", "preset"}, "classify.");
    if (p.contains("k")) c.k = p.at("k").get<int>();
    if (p.contains("preset")) c.preset = p.at("preset").get<std::string>();
  }
  if (j.contains("validate")) {
    const auto& p = j.at("validate");
    detail::reject_unknown_keys(p, {"cluster_column", "outcomes"}, "validate.");
    if (p.contains("cluster_column"))
      c.cluster_column = p.at("cluster_column").get<std::string>();
    if (p.contains("outcomes"))
      for (const auto& o : p.at("outcomes")) {
        detail::reject_unknown_keys(
            o, {"name", "family", "form", "column", "cluster_column", "binarize_ge"},
            "validate.outcomes.");
        OutcomeSpec spec;
        spec.name = o.at("name").get<std::string>();
        spec.family = glm_family_from_string(o.at("family").get<std::string>());
        if (o.contains("form"))
          spec.form = predictor_form_from_string(o.at("form").get<std::string>());
        spec.column = o.at("column").get<std::string>();
        if (o.contains("cluster_column"))
          spec.cluster_column = o.at("cluster_column").get<std::string>();
        else
          spec.cluster_column = c.cluster_column;
        if (o.contains("binarize_ge"))
          spec.binarize_ge = o.at("binarize_ge").get<int>();
        c.outcomes.push_back(std::move(spec));
      }
  }
  if (j.contains("simulate")) {
    const auto& p = j.at("simulate");
    detail::reject_unknown_keys(p, {"n", "missing_rate", "n_clusters"},
                                "simulate.");
    if (p.contains("n")) c.sim_n = p.at("n").get<long>();
    if (p.contains("missing_rate"))
      c.sim_missing_rate = p.at("missing_rate").get<double>();
    if (p.contains("n_clusters")) c.sim_clusters = p.at("n_clusters").get<int>();
  }
  if (j.contains("cfa"))
    detail::reject_unknown_keys(j.at("cfa"), {}, "cfa.");
  if (j.contains("score"))
    detail::reject_unknown_keys(j.at("score"), {}, "score.");
  if (j.contains("report"))
    detail::reject_unknown_keys(j.at("report"), {}, "report.");
  return c;
}

// "section.key=value" or "key=value"; values parsed as JSON when they look
// like numbers/booleans, otherwise taken as strings
inline void apply_stage_override(nlohmann::json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UserError("override '" + kv + "' is not key=value");
  const std::string path = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
    if (!parsed.is_number() && !parsed.is_boolean() && !parsed.is_array())
      parsed = value;
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  nlohmann::json* at = &j;
  std::size_t start = 0;
  for (auto dot = path.find('.'); dot != std::string::npos;
       start = dot + 1, dot = path.find('.', start))
    at = &(*at)[path.substr(start, dot - start)];
  (*at)[path.substr(start)] = parsed;
}

inline nlohmann::json load_config_json(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    // comments allowed so the shipped example can document itself
    return nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw UserError("config " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// run manifest

class RunManifest {
 public:
  explicit RunManifest(const PipelineConfig& cfg)
      : path_(cfg.artifact("manifest.json")) {
    std::error_code ec;
    if (std::filesystem::exists(path_, ec))
      doc_ = nlohmann::json::parse(read_text_file(path_));
    else
      doc_ = {{"format", "carebi-manifest"}, {"tool_version", kToolVersion}};
  }

  void record(const std::string& stage, const std::vector<std::string>& inputs,
              const std::vector<std::string>& outputs, std::uint64_t seed,
              long elapsed_ms) {
    nlohmann::json entry;
    for (const auto& p : inputs) entry["inputs"][p] = file_hash(p);
    for (const auto& p : outputs) entry["outputs"][p] = file_hash(p);
    entry["seed"] = seed;
    entry["elapsed_ms"] = elapsed_ms;
    entry["tool_version"] = kToolVersion;
    doc_["stages"][stage] = std::move(entry);
    write_text_file(path_, doc_.dump(2) + "\n");
  }

  const nlohmann::json& doc() const { return doc_; }

 private:
  std::string path_;
  nlohmann::json doc_;
};

// dependency gate: a stage names the artifact it needs and who makes it
inline void require_artifact(const std::string& path, const std::string& stage,
                             const std::string& producer) {
  if (!std::filesystem::exists(path))
    throw UserError("stage '" + stage + "' needs " + path + "; run '" +
                    producer + "' first");
}

inline void require_config_path(const std::string& path, const std::string& what) {
  if (path.empty()) throw UserError("config is missing " + what);
  if (!std::filesystem::exists(path))
    throw UserError(what + " not found: " + path);
}

namespace detail {

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  long ms() const {
    return static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - start_)
                                 .count());
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline csv::Table matrix_table(const Eigen::MatrixXd& m,
                               const std::vector<std::string>& header) {
  csv::Table t;
  t.header = header;
  for (long i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row;
    for (long j = 0; j < m.cols(); ++j) row.push_back(fmt_double(m(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Eigen::MatrixXd matrix_from_csv(const csv::Table& t) {
  const long p = static_cast<long>(t.header.size());
  Eigen::MatrixXd m(static_cast<long>(t.rows.size()), p);
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (long j = 0; j < p; ++j)
      m(static_cast<long>(i), j) = std::stod(t.rows[i][static_cast<std::size_t>(j)]);
  return m;
}

inline std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (long i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (long j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const long rows = static_cast<long>(j.size());
  const long cols = rows > 0 ? static_cast<long>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long jx = 0; jx < cols; ++jx)
      m(i, jx) = j.at(static_cast<std::size_t>(i))
                     .at(static_cast<std::size_t>(jx))
                     .get<double>();
  return m;
}

// select model columns out of the prepared matrix, in model order
inline ResponseMatrix select_items(const ResponseMatrix& m,
                                   const std::vector<std::string>& ids) {
  ResponseMatrix out;
  out.row_ids = m.row_ids;
  out.cluster_ids = m.cluster_ids;
  for (const auto& id : ids) {
    int found = -1;
    for (std::size_t j = 0; j < m.item_ids.size(); ++j)
      if (m.item_ids[j] == id) found = static_cast<int>(j);
    if (found < 0)
      throw UserError("model item '" + id + "' not in the prepared data");
    out.item_ids.push_back(id);
    out.n_levels.push_back(m.n_levels[static_cast<std::size_t>(found)]);
    out.columns.push_back(m.columns[static_cast<std::size_t>(found)]);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// stages

inline void cmd_prep(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  require_config_path(cfg.raw_csv, "raw_csv");
  require_config_path(cfg.codebook, "codebook");
  std::filesystem::create_directories(cfg.out_dir);

  const Codebook cb = parse_codebook(read_text_file(cfg.codebook));
  const csv::Table raw = csv::read_file(cfg.raw_csv);
  const ResponseMatrix m = apply_codebook(raw, cb, cfg.max_missing);

  const std::string out = cfg.artifact("responses.csv");
  csv::write_file(out, to_table(m));

  RunManifest(cfg).record("prep", {cfg.raw_csv, cfg.codebook}, {out}, cfg.seed,
                          timer.ms());
}

inline void cmd_corr(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  const std::string responses = cfg.artifact("responses.csv");
  require_artifact(responses, "corr", "prep");

  const ResponseMatrix m = from_table(csv::read_file(responses));
  const auto cols = m.dense();
  const PolychoricMatrix pm = polychoric_matrix(cols, m.item_ids, cfg.rho_tol);
  const KmoReport adequacy = kmo(pm);
  const WeightSet weights =
      cfg.n_boot > 0
          ? bootstrap_weights(cols, cfg.n_boot, cfg.seed, cfg.rho_tol)
          : unit_weights(static_cast<int>(m.n_items()));

  const std::string rho_path = cfg.artifact("rho.csv");
  csv::write_file(rho_path, detail::matrix_table(pm.rho, pm.item_ids));

  nlohmann::json j;
  j["format"] = "carebi-corr";
  j["n_obs"] = pm.n_obs;
  j["item_ids"] = pm.item_ids;
  nlohmann::json th = nlohmann::json::array();
  for (const auto& t : pm.thresholds)
    th.push_back({{"taus", t.taus}, {"codes", t.codes}});
  j["thresholds"] = th;
  j["repaired"] = pm.repaired;
  if (pm.repaired) j["min_eig_before"] = pm.min_eig_before;
  j["kmo"] = {{"overall", adequacy.overall},
              {"per_item", adequacy.per_item},
              {"adequate", adequacy.overall >= cfg.kmo_min},
              {"gate", cfg.kmo_min}};
  j["weights"] = {{"method", weights.method == WeightMethod::bootstrap
                                 ? "bootstrap"
                                 : "unit"},
                  {"n_boot", weights.n_boot},
                  {"variances", weights.variances}};
  const std::string corr_path = cfg.artifact("corr.json");
  write_text_file(corr_path, j.dump(2) + "\n");

  RunManifest(cfg).record("corr", {responses}, {rho_path, corr_path}, cfg.seed,
                          timer.ms());
}

inline void cmd_efa(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  const std::string responses = cfg.artifact("responses.csv");
  const std::string rho_path = cfg.artifact("rho.csv");
  const std::string corr_path = cfg.artifact("corr.json");
  require_artifact(responses, "efa", "prep");
  require_artifact(rho_path, "efa", "corr");
  require_artifact(corr_path, "efa", "corr");

  const ResponseMatrix m = from_table(csv::read_file(responses));
  const Eigen::MatrixXd rho = detail::matrix_from_csv(csv::read_file(rho_path));
  const nlohmann::json corr = nlohmann::json::parse(read_text_file(corr_path));
  const long n_obs = corr.at("n_obs").get<long>();

  const auto scree = scree_table(rho);
  const auto pa = parallel_analysis(m.dense(), m.item_ids, cfg.n_sims, cfg.seed,
                                    cfg.criterion, cfg.rho_tol);
  const int m_use = cfg.n_factors > 0 ? cfg.n_factors : pa.suggested_factors;
  if (m_use < 1)
    throw UserError("parallel analysis suggests no factors; set efa.n_factors "
                    "to extract anyway");

  const MinresResult extraction = fit_minres(rho, m_use);
  const ObliminResult rotation = rotate_oblimin(extraction.loadings);
  const Eigen::VectorXd comm = communalities(rotation.pattern, rotation.phi);
  const RetentionReport retention =
      retention_filter(rotation.pattern, comm, m.item_ids, cfg.load_min,
                       cfg.cross_max, cfg.comm_min, cfg.retention_overrides);
  const EfaFit fit = efa_fit_indices(rho, rotation.pattern, rotation.phi, n_obs);

  {
    csv::Table t;
    t.header = {"rank", "eigenvalue", "first_difference"};
    for (const auto& r : scree)
      t.rows.push_back({std::to_string(r.rank), fmt_double(r.eigenvalue),
                        fmt_double(r.first_difference)});
    csv::write_file(cfg.artifact("scree.csv"), t);
  }
  {
    csv::Table t;
    t.header = {"item"};
    for (int f = 1; f <= m_use; ++f) t.header.push_back("f" + std::to_string(f));
    t.header.push_back("communality");
    for (std::size_t i = 0; i < m.item_ids.size(); ++i) {
      std::vector<std::string> row{m.item_ids[i]};
      for (int f = 0; f < m_use; ++f)
        row.push_back(fmt_double(rotation.pattern(static_cast<long>(i), f)));
      row.push_back(fmt_double(comm[static_cast<long>(i)]));
      t.rows.push_back(std::move(row));
    }
    csv::write_file(cfg.artifact("pattern.csv"), t);
  }

  nlohmann::json j;
  j["format"] = "carebi-efa";
  j["observed_eigenvalues"] = detail::to_vec(pa.observed_eigenvalues);
  j["reference_eigenvalues"] = detail::to_vec(pa.reference_eigenvalues);
  j["pa"] = {{"suggested_factors", pa.suggested_factors},
             {"n_sims", pa.n_sims},
             {"criterion", to_string(pa.criterion)}};
  j["n_factors"] = m_use;
  j["minres"] = {{"f_min", extraction.f_min},
                 {"iterations", extraction.iterations},
                 {"converged", extraction.converged},
                 {"heywood", extraction.heywood},
                 {"psi", detail::to_vec(extraction.psi)}};
  j["pattern"] = detail::matrix_to_json(rotation.pattern);
  j["phi"] = detail::matrix_to_json(rotation.phi);
  j["communalities"] = detail::to_vec(comm);
  nlohmann::json rt = nlohmann::json::array();
  for (const auto& r : retention.rows)
    rt.push_back({{"item", r.item_id},
                  {"primary_factor", r.primary_factor + 1},
                  {"primary_loading", r.primary_loading},
                  {"max_cross", r.max_cross},
                  {"communality", r.communality},
                  {"kept", r.kept},
                  {"reason", to_string(r.reason)}});
  j["retention"] = rt;
  j["fit"] = {{"chi_square", fit.chi_square},
              {"df", fit.df},
              {"tli", fit.tli},
              {"rmsea", fit.rmsea},
              {"bic", fit.bic},
              {"chi_square_null", fit.chi_square_null},
              {"df_null", fit.df_null}};
  const std::string efa_path = cfg.artifact("efa.json");
  write_text_file(efa_path, j.dump(2) + "\n");

  RunManifest(cfg).record(
      "efa", {responses, rho_path, corr_path},
      {cfg.artifact("scree.csv"), cfg.artifact("pattern.csv"), efa_path},
      cfg.seed, timer.ms());
}

inline void cmd_cfa(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  const std::string rho_path = cfg.artifact("rho.csv");
  const std::string corr_path = cfg.artifact("corr.json");
  require_artifact(rho_path, "cfa", "corr");
  require_artifact(corr_path, "cfa", "corr");
  require_config_path(cfg.model_spec, "model_spec");

  const nlohmann::json corr = nlohmann::json::parse(read_text_file(corr_path));
  PolychoricMatrix pm;
  pm.rho = detail::matrix_from_csv(csv::read_file(rho_path));
  for (const auto& id : corr.at("item_ids"))
    pm.item_ids.push_back(id.get<std::string>());
  for (const auto& t : corr.at("thresholds")) {
    ThresholdSet ts;
    for (const auto& v : t.at("taus")) ts.taus.push_back(v.get<double>());
    for (const auto& v : t.at("codes")) ts.codes.push_back(v.get<int>());
    pm.thresholds.push_back(std::move(ts));
  }
  pm.n_obs = corr.at("n_obs").get<long>();

  WeightSet weights;
  weights.method = corr.at("weights").at("method").get<std::string>() == "bootstrap"
                       ? WeightMethod::bootstrap
                       : WeightMethod::unit;
  weights.n_boot = corr.at("weights").at("n_boot").get<int>();
  for (const auto& v : corr.at("weights").at("variances"))
    weights.variances.push_back(v.get<double>());

  const ModelSpec spec = load_model_spec(cfg.model_spec, pm.item_ids);
  const CfaFit fit = fit_dwls(spec, pm, weights, pm.n_obs);
  const CfaFit baseline = fit_null(pm, weights, pm.n_obs);
  const CfaIndices ix = cfa_fit_indices(fit, baseline);

  nlohmann::json j = model_to_json(fit);
  j["indices"] = {{"cfi", ix.cfi}, {"tli", ix.tli}, {"rmsea", ix.rmsea}};
  j["null"] = {{"chi_square", baseline.chi_square}, {"df", baseline.df}};
  if (fit.spec.variant == CfaVariant::bifactor) {
    const CfaOmega om = omega(fit);
    j["omega"] = {{"omega_h", om.omega_h},
                  {"omega_s", om.omega_s},
                  {"ecv", om.ecv}};
    j["acceptance"] = {{"pass", acceptance_predicate(ix, om.omega_h)},
                       {"rule", "TLI >= 0.9, CFI >= 0.9, RMSEA <= 0.08, "
                                "omega_h >= 0.70"}};
  } else {
    j["note"] = "higher-order variant: interpretation only, not scorable";
  }
  const std::string model_path = cfg.artifact("model.json");
  write_text_file(model_path, j.dump(2) + "\n");

  RunManifest(cfg).record("cfa", {rho_path, corr_path, cfg.model_spec},
                          {model_path}, cfg.seed, timer.ms());
}

inline void cmd_score(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  const std::string responses = cfg.artifact("responses.csv");
  const std::string model_path = cfg.artifact("model.json");
  require_artifact(responses, "score", "prep");
  require_artifact(model_path, "score", "cfa");

  const CfaFit fit =
      model_from_json(nlohmann::json::parse(read_text_file(model_path)));
  const ResponseMatrix all = from_table(csv::read_file(responses));
  const ResponseMatrix m = detail::select_items(all, fit.spec.item_ids);

  const Eigen::MatrixXd xstar = latent_response_means(m, fit.thresholds);
  const Eigen::VectorXd raw = regression_scores(fit, xstar);
  const RescaleResult scaled = rescale_minmax(raw);

  csv::Table t;
  t.header = {"row_id", "raw_score", "index"};
  for (std::size_t i = 0; i < m.row_ids.size(); ++i)
    t.rows.push_back({m.row_ids[i], fmt_double(raw[static_cast<long>(i)]),
                      std::to_string(scaled.index[i])});
  const std::string scores_path = cfg.artifact("scores.csv");
  csv::write_file(scores_path, t);

  nlohmann::json j;
  j["format"] = "carebi-scale";
  j["min_raw"] = scaled.min_raw;
  j["max_raw"] = scaled.max_raw;
  const std::string scale_path = cfg.artifact("scale.json");
  write_text_file(scale_path, j.dump(2) + "\n");

  RunManifest(cfg).record("score", {responses, model_path},
                          {scores_path, scale_path}, cfg.seed, timer.ms());
}

inline void cmd_classify(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  const std::string scores_path = cfg.artifact("scores.csv");
  require_artifact(scores_path, "classify", "score");

  const csv::Table scores = csv::read_file(scores_path);
  const int idx_col = scores.col_index("index");
  if (idx_col < 0) throw UserError("scores.csv has no index column");
  std::vector<long> index;
  for (const auto& row : scores.rows)
    index.push_back(std::stol(row[static_cast<std::size_t>(idx_col)]));

  const BurdenThresholds th = cfg.preset.empty()
                                  ? kmeans_thresholds(index, cfg.k)
                                  : named_preset(cfg.preset);

  csv::Table t = scores;
  t.header.push_back("category");
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    t.rows[i].push_back(to_string(classify(index[i], th)));
  const std::string out_path = cfg.artifact("classified.csv");
  csv::write_file(out_path, t);

  const std::string th_path = cfg.artifact("thresholds.json");
  write_text_file(th_path, thresholds_to_json(th).dump(2) + "\n");

  RunManifest(cfg).record("classify", {scores_path}, {out_path, th_path},
                          cfg.seed, timer.ms());
}

inline void cmd_validate(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  const std::string classified_path = cfg.artifact("classified.csv");
  const std::string responses = cfg.artifact("responses.csv");
  require_artifact(classified_path, "validate", "classify");
  require_artifact(responses, "validate", "prep");
  require_config_path(cfg.outcomes_csv, "outcomes_csv");
  if (cfg.outcomes.empty())
    throw UserError("config has no validate.outcomes entries");

  const csv::Table classified = csv::read_file(classified_path);
  const int idx_col = classified.col_index("index");
  const int cat_col = classified.col_index("category");
  const int rid_col = classified.col_index("row_id");
  if (idx_col < 0 || cat_col < 0 || rid_col < 0)
    throw UserError("classified.csv is missing its columns");

  std::vector<long> index;
  std::vector<Category> category;
  std::vector<std::string> row_ids;
  for (const auto& row : classified.rows) {
    index.push_back(std::stol(row[static_cast<std::size_t>(idx_col)]));
    const std::string& c = row[static_cast<std::size_t>(cat_col)];
    if (c == "Low") category.push_back(Category::Low);
    else if (c == "Moderate") category.push_back(Category::Moderate);
    else if (c == "High") category.push_back(Category::High);
    else throw UserError("unknown category '" + c + "' in classified.csv");
    row_ids.push_back(row[static_cast<std::size_t>(rid_col)]);
  }

  // cohort clusters travel on the prepared matrix
  const ResponseMatrix prepared = from_table(csv::read_file(responses));
  std::map<std::string, std::string> cluster_of;
  for (std::size_t i = 0; i < prepared.row_ids.size(); ++i)
    cluster_of[prepared.row_ids[i]] = prepared.cluster_ids[i];
  std::vector<std::string> clusters;
  for (const auto& rid : row_ids) {
    const auto it = cluster_of.find(rid);
    if (it == cluster_of.end())
      throw UserError("row '" + rid + "' not present in responses.csv");
    clusters.push_back(it->second);
  }

  const csv::Table outcomes = csv::read_file(cfg.outcomes_csv);
  if (outcomes.rows.size() != row_ids.size())
    throw UserError("outcomes table has " + std::to_string(outcomes.rows.size()) +
                    " rows, cohort has " + std::to_string(row_ids.size()));
  const int out_rid = outcomes.col_index("row_id");
  if (out_rid >= 0)
    for (std::size_t i = 0; i < row_ids.size(); ++i)
      if (outcomes.rows[i][static_cast<std::size_t>(out_rid)] != row_ids[i])
        throw UserError("outcomes row " + std::to_string(i + 1) +
                        " is not aligned with the scored cohort");

  const auto table = validity_table(cfg.outcomes, index, category, clusters,
                                    outcomes);

  csv::Table t;
  t.header = {"outcome", "term", "family", "label", "estimate", "ci_lo",
              "ci_hi", "p", "stars", "n", "n_clusters", "error"};
  for (const auto& r : table) {
    if (r.error.empty())
      t.rows.push_back({r.outcome, r.term, r.family, r.label,
                        fmt_double(r.estimate), fmt_double(r.ci_lo),
                        fmt_double(r.ci_hi), fmt_double(r.p), r.stars,
                        std::to_string(r.n), std::to_string(r.n_clusters), ""});
    else
      t.rows.push_back({r.outcome, r.term, r.family, r.label, "", "", "", "",
                        "", "", "", r.error});
  }
  const std::string csv_path = cfg.artifact("validity.csv");
  csv::write_file(csv_path, t);

  std::ostringstream txt;
  txt << "Criterion validity (cluster-robust GLM; * p<0.1, ** p<0.05, "
         "*** p<0.01)\n";
  for (const auto& r : table) {
    txt << "  " << r.outcome << " | " << r.term << " | " << r.label << " ";
    if (r.error.empty()) {
      char line[160];
      std::snprintf(line, sizeof line, "%.2f [%.2f, %.2f]%s  n=%ld g=%d",
                    r.estimate, r.ci_lo, r.ci_hi, r.stars.c_str(), r.n,
                    r.n_clusters);
      txt << line << "\n";
    } else {
      txt << "(not fit: " << r.error << ")\n";
    }
  }
  const std::string txt_path = cfg.artifact("validity.txt");
  write_text_file(txt_path, txt.str());

  RunManifest(cfg).record("validate",
                          {classified_path, responses, cfg.outcomes_csv},
                          {csv_path, txt_path}, cfg.seed, timer.ms());
}

inline void cmd_simulate(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  require_config_path(cfg.true_model, "true_model");
  require_config_path(cfg.codebook, "codebook");
  std::filesystem::create_directories(cfg.out_dir);

  const TrueModel model = load_true_model(cfg.true_model);
  const Codebook cb = parse_codebook(read_text_file(cfg.codebook));
  const SimOutput sim = simulate_bifactor(model, cfg.sim_n, cfg.seed,
                                          cfg.sim_missing_rate, cfg.sim_clusters);

  const std::string raw_path = cfg.artifact("simulated_raw.csv");
  csv::write_file(raw_path, to_raw_table(sim.responses, cb));

  csv::Table truth;
  truth.header = {"row_id", "true_g"};
  for (const auto& g : model.groups) truth.header.push_back("true_" + g);
  for (std::size_t i = 0; i < sim.responses.row_ids.size(); ++i) {
    std::vector<std::string> row{sim.responses.row_ids[i],
                                 fmt_double(sim.latent(static_cast<long>(i), 0))};
    for (int g = 0; g < model.n_groups(); ++g)
      row.push_back(fmt_double(sim.latent(static_cast<long>(i), g + 1)));
    truth.rows.push_back(std::move(row));
  }
  const std::string truth_path = cfg.artifact("truth.csv");
  csv::write_file(truth_path, truth);

  RunManifest(cfg).record("simulate", {cfg.true_model, cfg.codebook},
                          {raw_path, truth_path}, cfg.seed, timer.ms());
}

// ---------------------------------------------------------------------------
// consolidated report

namespace detail {

inline std::string fixed(double v, int places = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

}  // namespace detail

inline void cmd_report(const PipelineConfig& cfg) {
  detail::StageTimer timer;
  std::ostringstream out;
  std::vector<std::string> used;
  bool any = false;

  auto with_json = [&](const char* name, auto&& render) {
    const std::string path = cfg.artifact(name);
    if (!std::filesystem::exists(path)) {
      out << "  [missing: " << name << "]\n";
      return;
    }
    any = true;
    used.push_back(path);
    render(nlohmann::json::parse(read_text_file(path)));
  };
  auto with_csv = [&](const char* name, auto&& render) {
    const std::string path = cfg.artifact(name);
    if (!std::filesystem::exists(path)) {
      out << "  [missing: " << name << "]\n";
      return;
    }
    any = true;
    used.push_back(path);
    render(csv::read_file(path));
  };

  out << "CareBI pipeline report (tool " << kToolVersion << ")\n";

  out << "\n== Sampling adequacy ==\n";
  with_json("corr.json", [&](const nlohmann::json& j) {
    const auto& k = j.at("kmo");
    out << "  KMO overall " << detail::fixed(k.at("overall").get<double>(), 3)
        << (k.at("adequate").get<bool>() ? "  (adequate at gate "
                                         : "  (below gate ")
        << detail::fixed(k.at("gate").get<double>(), 2) << ")\n";
    if (j.at("repaired").get<bool>())
      out << "  correlation matrix repaired to positive definite\n";
  });

  out << "\n== Factor count ==\n";
  with_json("efa.json", [&](const nlohmann::json& j) {
    const auto& pa = j.at("pa");
    out << "  parallel analysis (" << pa.at("criterion").get<std::string>()
        << ", " << pa.at("n_sims").get<int>() << " sims): suggested "
        << pa.at("suggested_factors").get<int>() << ", extracted "
        << j.at("n_factors").get<int>() << "\n";
    const auto& obs = j.at("observed_eigenvalues");
    const auto& ref = j.at("reference_eigenvalues");
    out << "  rank  observed  reference\n";
    for (std::size_t r = 0; r < obs.size(); ++r)
      out << "  " << std::setw(4) << r + 1 << "  "
          << detail::fixed(obs.at(r).get<double>(), 3) << "     "
          << detail::fixed(ref.at(r).get<double>(), 3) << "\n";
  });

  out << "\n== Item retention ==\n";
  with_json("efa.json", [&](const nlohmann::json& j) {
    out << "  item            factor  loading  max_cross  h2     decision\n";
    for (const auto& r : j.at("retention")) {
      char line[160];
      std::snprintf(line, sizeof line, "  %-15s  %5d  %7.3f  %9.3f  %5.3f  %s\n",
                    r.at("item").get<std::string>().c_str(),
                    r.at("primary_factor").get<int>(),
                    r.at("primary_loading").get<double>(),
                    r.at("max_cross").get<double>(),
                    r.at("communality").get<double>(),
                    r.at("reason").get<std::string>().c_str());
      out << line;
    }
  });

  out << "\n== Exploratory fit ==\n";
  with_json("efa.json", [&](const nlohmann::json& j) {
    const auto& f = j.at("fit");
    // TLI above 1 is reported as 1 (display cap only)
    const double tli = std::min(f.at("tli").get<double>(), 1.0);
    out << "  chi2 " << detail::fixed(f.at("chi_square").get<double>(), 2)
        << " on df " << f.at("df").get<double>() << ", TLI "
        << detail::fixed(tli, 3) << ", RMSEA "
        << detail::fixed(f.at("rmsea").get<double>(), 3) << ", BIC "
        << detail::fixed(f.at("bic").get<double>(), 2) << "\n";
  });

  out << "\n== Confirmatory fit ==\n";
  with_json("model.json", [&](const nlohmann::json& j) {
    const auto& ix = j.at("indices");
    const double tli = std::min(ix.at("tli").get<double>(), 1.0);
    const double cfi = std::min(ix.at("cfi").get<double>(), 1.0);
    out << "  " << j.at("variant").get<std::string>() << " model: CFI "
        << detail::fixed(cfi, 3) << ", TLI " << detail::fixed(tli, 3)
        << ", RMSEA " << detail::fixed(ix.at("rmsea").get<double>(), 3) << "\n";
    if (j.contains("acceptance"))
      out << "  verdict: "
          << (j.at("acceptance").at("pass").get<bool>() ? "acceptable"
                                                        : "refine model")
          << "  (" << j.at("acceptance").at("rule").get<std::string>() << ")\n";
    if (j.contains("flagged_items")) {
      out << "  flagged items:";
      for (const auto& s : j.at("flagged_items"))
        out << " " << s.get<std::string>();
      out << "\n";
    }
  });

  out << "\n== Reliability ==\n";
  with_json("model.json", [&](const nlohmann::json& j) {
    if (!j.contains("omega")) {
      out << "  (not a bifactor model; omega not defined)\n";
      return;
    }
    const auto& om = j.at("omega");
    out << "  omega_h " << detail::fixed(om.at("omega_h").get<double>(), 3)
        << ", ECV " << detail::fixed(om.at("ecv").get<double>(), 3) << "\n";
    const auto& groups = j.at("groups");
    const auto& os = om.at("omega_s");
    for (std::size_t g = 0; g < os.size(); ++g)
      out << "  omega_s[" << groups.at(g).get<std::string>() << "] "
          << detail::fixed(os.at(g).get<double>(), 3) << "\n";
  });

  out << "\n== Scores ==\n";
  with_csv("classified.csv", [&](const csv::Table& t) {
    const int idx_col = t.col_index("index");
    const int cat_col = t.col_index("category");
    long lo = 100, hi = 0;
    double sum = 0.0;
    std::map<std::string, long> counts;
    for (const auto& row : t.rows) {
      const long v = std::stol(row[static_cast<std::size_t>(idx_col)]);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += static_cast<double>(v);
      ++counts[row[static_cast<std::size_t>(cat_col)]];
    }
    out << "  n " << t.rows.size() << ", index mean "
        << detail::fixed(sum / static_cast<double>(t.rows.size()), 1)
        << ", range [" << lo << ", " << hi << "]\n";
    for (const char* name : {"Low", "Moderate", "High"})
      out << "  " << name << " " << counts[name] << "\n";
  });

  out << "\n== Thresholds ==\n";
  with_json("thresholds.json", [&](const nlohmann::json& j) {
    if (j.contains("preset"))
      out << "  preset " << j.at("preset").get<std::string>() << ":";
    else {
      out << "  k-means centers";
      for (const auto& c : j.at("centers"))
        out << " " << detail::fixed(c.get<double>(), 1);
      out << ";";
    }
    out << " boundaries";
    for (const auto& b : j.at("boundaries")) out << " " << b.get<long>();
    out << "\n";
  });

  out << "\n== Criterion validity ==\n";
  with_csv("validity.csv", [&](const csv::Table& t) {
    const int e = t.col_index("error");
    for (const auto& row : t.rows) {
      out << "  " << row[0] << " | " << row[1] << " | " << row[3];
      if (row[static_cast<std::size_t>(e)].empty()) {
        char line[120];
        std::snprintf(line, sizeof line, " %.2f [%.2f, %.2f]%s",
                      std::stod(row[4]), std::stod(row[5]), std::stod(row[6]),
                      row[8].c_str());
        out << line << "\n";
      } else {
        out << " (not fit: " << row[static_cast<std::size_t>(e)] << ")\n";
      }
    }
  });

  if (!any)
    throw UserError("no artifacts in " + cfg.out_dir +
                    "; run pipeline stages first");

  const std::string report_path = cfg.artifact("report.txt");
  write_text_file(report_path, out.str());
  RunManifest(cfg).record("report", used, {report_path}, cfg.seed, timer.ms());
}

// ---------------------------------------------------------------------------

inline void run_stage(const std::string& stage, const PipelineConfig& cfg) {
  if (stage == "prep") cmd_prep(cfg);
  else if (stage == "corr") cmd_corr(cfg);
  else if (stage == "efa") cmd_efa(cfg);
  else if (stage == "cfa") cmd_cfa(cfg);
  else if (stage == "score") cmd_score(cfg);
  else if (stage == "classify") cmd_classify(cfg);
  else if (stage == "validate") cmd_validate(cfg);
  else if (stage == "simulate") cmd_simulate(cfg);
  else if (stage == "report") cmd_report(cfg);
  else throw UserError("unknown stage '" + stage + "'");
}

}  // namespace carebi
