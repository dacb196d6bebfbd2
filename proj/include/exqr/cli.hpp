#pragma once

// Command layer shared by the exqr executable and the tests: configuration
// resolution (defaults < JSON file < flags), dispatch, and result documents.

#include <cstdint>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "exqr/error.hpp"
#include "exqr/inference.hpp"
#include "exqr/io.hpp"
#include "exqr/montecarlo.hpp"
#include "exqr/pipeline.hpp"
#include "exqr/qr_solver.hpp"
#include "exqr/subsampling.hpp"
#include "exqr/tail_estimation.hpp"

namespace exqr {

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"fit",          "infer-sn",    "infer-cn",
                                              "infer-boundary", "advise",    "subsample-cv",
                                              "analytic-cv",  "mc-coverage", "mc-qq"};
  return names;
}

struct RunConfig {
  std::string command;
  // data
  std::string input;
  std::string response;
  std::vector<std::string> regressors;
  bool intercept = true;
  std::vector<std::string> coefficients;  // names (data commands) or indices (mc-coverage); empty = default
  // inference
  std::vector<double> tau;
  double alpha = 0.10;
  std::string method = "subsample";  // critical values: subsample | analytic
  std::string statistic = "sn";      // *-cv commands: sn | cn | boundary
  std::optional<Index> b;
  Index B_T = 200;
  Index M = 500;
  int B = 1000;
  int p = 5;
  std::optional<double> tail_tau;
  std::string mode = "iid";
  std::optional<std::uint64_t> seed;
  // advisor
  double threshold = 20.0;
  double cell_threshold = 30.0;
  double band = 0.25;
  std::optional<double> min_cell_share;
  // Monte Carlo
  std::string preset;
  std::string error_law;
  std::optional<Index> T;
  std::optional<Index> d;
  std::optional<int> reps;
  std::vector<std::string> methods;
  int ev_draws = 10000;
  // output
  std::string output;
  std::string table;
  bool force = false;
  unsigned threads = 0;
};

namespace cli_detail {

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "command", "input",  "response", "regressors", "intercept", "coefficients", "tau",       "alpha",
      "method",  "statistic", "b",     "B_T",        "M",         "B",            "p",         "tail_tau",
      "mode",    "seed",   "threshold", "cell_threshold", "band", "min_cell_share", "preset",  "error_law",
      "T",       "d",      "reps",     "methods",    "ev_draws",  "output",       "table",     "force",
      "threads"};
  return keys;
}

template <class V>
void read(const Json& j, const char* key, V& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = j[key].get<V>();
  } catch (const Json::exception&) {
    throw UsageError(std::string("configuration key '") + key + "' has the wrong type", "config");
  }
}

template <class V>
void read(const Json& j, const char* key, std::optional<V>& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  V v{};
  read(j, key, v);
  out = v;
}

/// Accepts a scalar or an array for list-valued keys.
template <class V>
void read_list(const Json& j, const char* key, std::vector<V>& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  if (j[key].is_array()) {
    read(j, key, out);
  } else {
    V v{};
    read(j, key, v);
    out = {v};
  }
}

template <class V>
Json opt(const std::optional<V>& v) {
  return v ? Json(*v) : Json(nullptr);
}

}  // namespace cli_detail

inline RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw UsageError("configuration must be a JSON object", "config");
  for (const auto& [k, v] : j.items()) {
    if (!cli_detail::known_keys().count(k)) throw UsageError("unknown configuration key '" + k + "'", "config");
  }
  using cli_detail::read;
  using cli_detail::read_list;
  RunConfig c;
  read(j, "command", c.command);
  read(j, "input", c.input);
  read(j, "response", c.response);
  read_list(j, "regressors", c.regressors);
  read(j, "intercept", c.intercept);
  read_list(j, "coefficients", c.coefficients);
  read_list(j, "tau", c.tau);
  read(j, "alpha", c.alpha);
  read(j, "method", c.method);
  read(j, "statistic", c.statistic);
  read(j, "b", c.b);
  read(j, "B_T", c.B_T);
  read(j, "M", c.M);
  read(j, "B", c.B);
  read(j, "p", c.p);
  read(j, "tail_tau", c.tail_tau);
  read(j, "mode", c.mode);
  read(j, "seed", c.seed);
  read(j, "threshold", c.threshold);
  read(j, "cell_threshold", c.cell_threshold);
  read(j, "band", c.band);
  read(j, "min_cell_share", c.min_cell_share);
  read(j, "preset", c.preset);
  read(j, "error_law", c.error_law);
  read(j, "T", c.T);
  read(j, "d", c.d);
  read(j, "reps", c.reps);
  read_list(j, "methods", c.methods);
  read(j, "ev_draws", c.ev_draws);
  read(j, "output", c.output);
  read(j, "table", c.table);
  read(j, "force", c.force);
  read(j, "threads", c.threads);
  return c;
}

inline Json config_to_json(const RunConfig& c) {
  using cli_detail::opt;
  Json j;
  j["command"] = c.command;
  j["input"] = c.input;
  j["response"] = c.response;
  j["regressors"] = c.regressors;
  j["intercept"] = c.intercept;
  j["coefficients"] = c.coefficients;
  j["tau"] = c.tau;
  j["alpha"] = c.alpha;
  j["method"] = c.method;
  j["statistic"] = c.statistic;
  j["b"] = opt(c.b);
  j["B_T"] = c.B_T;
  j["M"] = c.M;
  j["B"] = c.B;
  j["p"] = c.p;
  j["tail_tau"] = opt(c.tail_tau);
  j["mode"] = c.mode;
  j["seed"] = opt(c.seed);
  j["threshold"] = c.threshold;
  j["cell_threshold"] = c.cell_threshold;
  j["band"] = c.band;
  j["min_cell_share"] = opt(c.min_cell_share);
  j["preset"] = c.preset;
  j["error_law"] = c.error_law;
  j["T"] = opt(c.T);
  j["d"] = opt(c.d);
  j["reps"] = opt(c.reps);
  j["methods"] = c.methods;
  j["ev_draws"] = c.ev_draws;
  j["output"] = c.output;
  j["table"] = c.table;
  j["force"] = c.force;
  j["threads"] = c.threads;
  return j;
}

/// Layers `overrides` on top of `base` key by key.
inline Json merge_config(Json base, const Json& overrides) {
  if (base.is_null()) base = Json::object();
  for (const auto& [k, v] : overrides.items()) base[k] = v;
  return base;
}

// ---------------------------------------------------------------------------

struct RunOutput {
  Json document;
  std::vector<std::string> written;  // files created
};

namespace cli_detail {

inline bool is_stochastic(const std::string& cmd) {
  return cmd != "fit" && cmd != "advise";
}

inline Json vec_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json named_json(const Vector& v, const std::vector<std::string>& names) {
  Json o = Json::object();
  for (Index i = 0; i < v.size(); ++i) o[names[static_cast<std::size_t>(i)]] = v(i);
  return o;
}

inline Json cv_json(const CriticalValues& cv) {
  Json j;
  j["tag"] = cv.tag();
  j["draw_count"] = cv.draw_count;
  Json grid = Json::array();
  for (const auto& [level, q] : cv.grid) grid.push_back({{"level", level}, {"quantile", q}});
  j["grid"] = grid;
  Json prov = Json::object();
  for (const auto& [k, v] : cv.provenance) prov[k] = v;
  j["provenance"] = prov;
  return j;
}

inline Json tail_json(const TailEstimates& t, const std::vector<std::string>& names) {
  Json j;
  j["xi"] = t.xi;
  j["xi_raw"] = t.xi_raw;
  j["gamma"] = named_json(t.gamma, names);
  j["tau_T"] = t.tau_T;
  j["spacing"] = t.spacing;
  j["A_hat"] = opt(t.A_hat);
  return j;
}

inline Json result_json(const InferenceResult& r, const std::string& coefficient) {
  Json j;
  j["tau"] = r.tau;
  j["coefficient"] = coefficient;
  j["point"] = r.point;
  j["median_unbiased"] = r.median_unbiased;
  j["ci"] = {r.ci_lo, r.ci_hi};
  j["alpha"] = r.alpha;
  j["method"] = r.method;
  j["scale_used"] = r.scale_used;
  j["m"] = opt(r.m);
  j["warnings"] = r.warnings;
  return j;
}

inline SubsampleMode parse_mode(const std::string& s) {
  if (s == "iid") return SubsampleMode::iid;
  if (s == "timeseries") return SubsampleMode::timeseries;
  throw UsageError("mode must be iid or timeseries, got '" + s + "'");
}

inline CvMethod parse_cv(const std::string& s) {
  if (s == "subsample") return CvMethod::subsample;
  if (s == "analytic") return CvMethod::analytic;
  throw UsageError("method must be subsample or analytic, got '" + s + "'");
}

inline Statistic parse_statistic(const std::string& s) {
  if (s == "sn" || s == "SN") return Statistic::sn;
  if (s == "cn" || s == "CN") return Statistic::cn;
  if (s == "boundary") return Statistic::boundary;
  throw UsageError("statistic must be sn, cn or boundary, got '" + s + "'");
}

inline void require_taus(const RunConfig& c) {
  if (c.tau.empty()) throw UsageError("at least one --tau is required for " + c.command);
  for (double t : c.tau) {
    if (!(t > 0.0 && t < 1.0)) throw DomainError("quantile index must lie in (0,1)");
  }
}

inline LoadedDataset load(const RunConfig& c) {
  if (c.input.empty()) throw UsageError("--input is required for " + c.command);
  return load_dataset_csv(c.input, c.response, c.regressors, c.intercept);
}

/// Unit vectors for the requested coefficient names (all columns by default).
inline std::vector<std::pair<std::string, Vector>> selected_psis(const Dataset& data, RunConfig& c) {
  if (c.coefficients.empty()) c.coefficients = data.names;
  std::vector<std::pair<std::string, Vector>> out;
  for (const auto& name : c.coefficients) {
    std::size_t j = 0;
    while (j < data.names.size() && data.names[j] != name) ++j;
    if (j == data.names.size()) throw UsageError("unknown coefficient '" + name + "'");
    out.emplace_back(name, Vector::Unit(data.dim(), static_cast<Index>(j)));
  }
  return out;
}

inline PipelineOptions pipeline_options(const RunConfig& c) {
  PipelineOptions o;
  o.p = c.p;
  o.tail_tau = c.tail_tau;
  o.B = c.B;
  o.M = c.M;
  o.b = c.b;
  o.B_T = c.B_T;
  o.mode = parse_mode(c.mode);
  o.seed = *c.seed;
  o.threads = c.threads;
  return o;
}

inline std::vector<Index> mc_coefficients(RunConfig& c, Index d) {
  if (c.coefficients.empty()) {
    c.coefficients = {"0"};
    if (d > 1) c.coefficients.push_back("1");
  }
  std::vector<Index> out;
  for (const auto& s : c.coefficients) {
    try {
      std::size_t used = 0;
      const long v = std::stol(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      out.push_back(static_cast<Index>(v));
    } catch (const std::exception&) {
      throw UsageError("Monte Carlo coefficients are column indices, got '" + s + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// commands

inline Json cmd_fit(RunConfig& c, const LoadedDataset& ld) {
  require_taus(c);
  Json rows = Json::array();
  for (double tau : c.tau) {
    const QuantileFit f = fit_qr(ld.data, tau);
    rows.push_back({{"tau", tau},
                    {"beta", named_json(f.beta, ld.data.names)},
                    {"objective", f.objective},
                    {"nonunique", f.nonunique}});
  }
  return rows;
}

inline Json cmd_infer(RunConfig& c, const LoadedDataset& ld, Statistic stat) {
  require_taus(c);
  const CvMethod cv = parse_cv(c.method);
  const auto psis = selected_psis(ld.data, c);
  if (cv == CvMethod::subsample && !c.b) c.b = default_subsample_size(ld.data.size(), ld.data.dim());
  if (!c.tail_tau && (cv == CvMethod::analytic || stat == Statistic::cn)) {
    c.tail_tau = default_intermediate_tau(ld.data.size(), ld.data.dim());
  }
  const PipelineOptions po = pipeline_options(c);
  Json rows = Json::array();
  for (double tau : c.tau) {
    for (const auto& [name, psi] : psis) {
      const Method m = stat == Statistic::sn ? (cv == CvMethod::analytic ? Method::sn_analytic : Method::sn_subsample)
                                             : (cv == CvMethod::analytic ? Method::cn_analytic : Method::cn_subsample);
      const PipelineResult r = infer(ld.data, tau, psi, c.alpha, m, po);
      Json j = result_json(r.result, name);
      if (r.critical_values) j["critical_values"] = cv_json(*r.critical_values);
      if (r.tail) j["tail"] = tail_json(*r.tail, ld.data.names);
      rows.push_back(j);
    }
  }
  return rows;
}

inline Json cmd_boundary(RunConfig& c, const LoadedDataset& ld) {
  const CvMethod cv = parse_cv(c.method);
  const auto psis = selected_psis(ld.data, c);
  if (cv == CvMethod::subsample && !c.b) c.b = default_subsample_size(ld.data.size(), ld.data.dim());
  if (!c.tail_tau && cv == CvMethod::analytic) c.tail_tau = default_intermediate_tau(ld.data.size(), ld.data.dim());
  const PipelineOptions po = pipeline_options(c);
  Json rows = Json::array();
  for (const auto& [name, psi] : psis) {
    const PipelineResult r = infer_endpoint(ld.data, psi, c.alpha, cv, po);
    Json j = result_json(r.result, name);
    if (r.critical_values) j["critical_values"] = cv_json(*r.critical_values);
    if (r.tail) j["tail"] = tail_json(*r.tail, ld.data.names);
    rows.push_back(j);
  }
  return rows;
}

inline Json cmd_advise(RunConfig& c, Index T, Index d) {
  require_taus(c);
  AdviceOptions ao;
  ao.threshold = c.threshold;
  ao.cell_threshold = c.cell_threshold;
  ao.band = c.band;
  Json rows = Json::array();
  for (double tau : c.tau) {
    const AdviceRecord a = advise_method(tau, T, d, c.min_cell_share, ao);
    rows.push_back({{"tau", tau},
                    {"order_per_regressor", a.order_per_regressor},
                    {"order_in_cell", opt(a.order_in_cell)},
                    {"threshold", a.threshold},
                    {"cell_threshold", a.cell_threshold},
                    {"recommendation", advice_name(a.recommendation)}});
  }
  return rows;
}

inline Json cmd_cv(RunConfig& c, const LoadedDataset& ld, CvMethod cv, PlotTable* table) {
  const Statistic stat = parse_statistic(c.statistic);
  if (stat != Statistic::boundary) require_taus(c);
  const auto psis = selected_psis(ld.data, c);
  const Dataset& data = ld.data;
  if (cv == CvMethod::subsample && !c.b) c.b = default_subsample_size(data.size(), data.dim());
  if (!c.tail_tau && (cv == CvMethod::analytic || stat == Statistic::cn)) {
    c.tail_tau = default_intermediate_tau(data.size(), data.dim());
  }
  const PipelineOptions po = pipeline_options(c);
  const std::vector<double> alphas{c.alpha};
  const std::vector<double> taus = stat == Statistic::boundary ? std::vector<double>{1.0 / static_cast<double>(data.size())} : c.tau;
  if (table) {
    table->columns = {"tau", "coefficient", "level", "critical_value"};
    table->units = {"quantile index", "", "probability", "statistic units"};
  }
  Json rows = Json::array();
  for (double tau : taus) {
    for (const auto& [name, psi] : psis) {
      CriticalValues cvs;
      std::optional<TailEstimates> tail;
      if (cv == CvMethod::analytic) {
        auto a = analytic_critical_values(data, tau, psi, stat, alphas, po);
        cvs = std::move(a.cv);
        tail = std::move(a.tail);
      } else {
        SubsampleOptions so;
        so.mode = po.mode;
        so.seed = po.seed;
        so.threads = po.threads;
        if (stat == Statistic::sn) {
          cvs = subsample_critical_values(stat, sn_subsample_draws(data, tau, *c.b, c.B_T, psi, c.p, so), alphas);
        } else if (stat == Statistic::cn) {
          TailOptions to;
          to.scale_n = static_cast<double>(data.size());
          tail = estimate_tail(data, *c.tail_tau, to);
          cvs = subsample_critical_values(stat, cn_subsample_draws(data, tau, *c.b, c.B_T, psi, *tail, so), alphas);
        } else {
          cvs = subsample_critical_values(stat, boundary_subsample_draws(data, *c.b, c.B_T, psi, c.p, so), alphas);
        }
      }
      Json j{{"tau", tau}, {"coefficient", name}, {"critical_values", cv_json(cvs)}};
      if (tail) j["tail"] = tail_json(*tail, data.names);
      rows.push_back(j);
      if (table) {
        for (const auto& [level, q] : cvs.grid) table->add_row({format_double(tau), name, format_double(level), format_double(q)});
      }
    }
  }
  return rows;
}

inline Design mc_design(RunConfig& c, const McPreset* preset, const char* default_law) {
  if (c.error_law.empty()) c.error_law = default_law;
  if (!c.T) c.T = preset ? preset->T : 500;
  if (!c.d) c.d = preset ? preset->d : 7;
  if (!c.reps) c.reps = preset ? preset->reps : 200;
  if (c.tau.empty() && preset) c.tau = preset->taus;
  require_taus(c);
  return returns_design(parse_error_law(c.error_law), *c.T, *c.d, *c.seed);
}

inline Json cmd_mc_coverage(RunConfig& c, PlotTable* table) {
  std::optional<McPreset> preset;
  if (!c.preset.empty()) preset = coverage_preset(c.preset);
  const Design design = mc_design(c, preset ? &*preset : nullptr, "t(3)");
  if (c.methods.empty()) c.methods = {"SN-subsample", "normal"};
  std::vector<Method> methods;
  for (const auto& m : c.methods) methods.push_back(parse_method(m));
  CoverageOptions co;
  co.alpha = c.alpha;
  co.coefficients = mc_coefficients(c, design.dim());
  PipelineOptions po;
  po.p = c.p;
  po.tail_tau = c.tail_tau;
  po.B = c.B;
  po.M = c.M;
  po.b = c.b;
  po.B_T = c.B_T;
  po.mode = parse_mode(c.mode);
  co.pipeline = po;
  co.threads = c.threads;
  const CoverageReport rep = coverage_experiment(design, c.tau, *c.reps, methods, co);
  if (table) {
    table->columns = {"tau", "coefficient", "method", "coverage", "width", "reps"};
    table->units = {"quantile index", "column index", "", "share", "response units", "count"};
  }
  Json cells = Json::array();
  for (const auto& cell : rep.cells) {
    cells.push_back({{"tau", cell.tau},
                     {"coefficient", cell.coefficient},
                     {"method", cell.method},
                     {"coverage", cell.coverage},
                     {"width", cell.mean_width},
                     {"reps", cell.reps},
                     {"failed", cell.failed}});
    if (table) {
      table->add_row({format_double(cell.tau), std::to_string(cell.coefficient), cell.method,
                      format_double(cell.coverage), format_double(cell.mean_width), std::to_string(cell.reps)});
    }
  }
  return {{"error_law", rep.error_law},
          {"ev_index", opt(rep.ev_index)},
          {"T", rep.T},
          {"d", rep.d},
          {"alpha", rep.alpha},
          {"cells", cells}};
}

inline Json cmd_mc_qq(RunConfig& c, PlotTable* table) {
  std::optional<McPreset> preset;
  if (!c.preset.empty()) preset = qq_preset(c.preset);
  if (!c.d) c.d = 1;
  if (*c.d != 1) throw DomainError("the quantile comparison uses the one-regressor location design (d = 1)");
  if (!c.T) c.T = preset ? preset->T : 200;
  const Design design = mc_design(c, preset ? &*preset : nullptr, "Cauchy");
  QqOptions qo;
  qo.ev_draws = c.ev_draws;
  qo.M = c.M;
  qo.seed = derive_seed(*c.seed, 1);
  qo.threads = c.threads;
  const auto rows = qq_experiment(design, c.tau, *c.reps, qo);
  if (table) {
    table->columns = {"tau", "level", "true", "ev", "normal"};
    table->units = {"quantile index", "probability", "response units", "response units", "response units"};
  }
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"tau", r.tau},
                   {"reps", r.reps},
                   {"ev_discrepancy", r.ev_discrepancy},
                   {"normal_discrepancy", r.normal_discrepancy}});
    if (table) {
      for (std::size_t i = 0; i < r.levels.size(); ++i) {
        table->add_row({format_double(r.tau), format_double(r.levels[i]), format_double(r.true_q[i]),
                        format_double(r.ev_q[i]), format_double(r.normal_q[i])});
      }
    }
  }
  return {{"error_law", design.error.name()}, {"T", design.T}, {"rows", out}};
}

}  // namespace cli_detail

/// Runs one command. The returned document echoes the fully resolved
/// configuration; files named by `output` and `table` are written here.
inline RunOutput run_command(RunConfig c) {
  const auto& cmds = command_names();
  if (std::find(cmds.begin(), cmds.end(), c.command) == cmds.end()) {
    throw UsageError("unknown command '" + c.command + "'", "unknown_command");
  }
  if (cli_detail::is_stochastic(c.command) && !c.seed) {
    throw UsageError("command '" + c.command + "' is stochastic and needs --seed", "missing_seed");
  }
  if (!c.output.empty()) check_writable(c.output, c.force);
  if (!c.table.empty()) check_writable(c.table, c.force);

  PlotTable table;
  PlotTable* tp = c.table.empty() ? nullptr : &table;
  Json doc;
  doc["schema"] = kSchemaVersion;
  doc["command"] = c.command;
  Json result;
  std::optional<LoadedDataset> ld;
  const bool needs_data = c.command != "mc-coverage" && c.command != "mc-qq" &&
                          !(c.command == "advise" && c.input.empty());
  if (needs_data) ld = cli_detail::load(c);

  if (c.command == "fit") {
    result = cli_detail::cmd_fit(c, *ld);
  } else if (c.command == "infer-sn") {
    result = cli_detail::cmd_infer(c, *ld, Statistic::sn);
  } else if (c.command == "infer-cn") {
    result = cli_detail::cmd_infer(c, *ld, Statistic::cn);
  } else if (c.command == "infer-boundary") {
    result = cli_detail::cmd_boundary(c, *ld);
  } else if (c.command == "advise") {
    Index T = 0, d = 0;
    if (ld) {
      T = ld->data.size();
      d = ld->data.dim();
      c.T = T;
      c.d = d;
    } else {
      if (!c.T || !c.d) throw UsageError("advise needs --input or both --T and --d");
      T = *c.T;
      d = *c.d;
    }
    result = cli_detail::cmd_advise(c, T, d);
  } else if (c.command == "subsample-cv") {
    result = cli_detail::cmd_cv(c, *ld, CvMethod::subsample, tp);
  } else if (c.command == "analytic-cv") {
    result = cli_detail::cmd_cv(c, *ld, CvMethod::analytic, tp);
  } else if (c.command == "mc-coverage") {
    result = cli_detail::cmd_mc_coverage(c, tp);
  } else {
    result = cli_detail::cmd_mc_qq(c, tp);
  }
  if (tp && tp->columns.empty()) throw UsageError("command '" + c.command + "' produces no table");

  doc["config"] = config_to_json(c);
  doc["seed"] = cli_detail::opt(c.seed);
  if (ld) {
    doc["data"] = {{"T", ld->data.size()}, {"d", ld->data.dim()}, {"rejected_rows", ld->rejected_rows},
                   {"columns", ld->data.names}};
  }
  doc["result"] = result;

  RunOutput out;
  if (tp) {
    write_plot_table(table, c.table, c.force);
    out.written.push_back(c.table);
  }
  if (!c.output.empty()) {
    write_json(doc, c.output, c.force);
    out.written.push_back(c.output);
  }
  out.document = std::move(doc);
  return out;
}

inline Json error_document(const Error& e) {
  return {{"schema", kSchemaVersion},
          {"error", {{"category", category_name(e.category())}, {"kind", e.kind()}, {"message", e.what()}}}};
}

}  // namespace exqr
