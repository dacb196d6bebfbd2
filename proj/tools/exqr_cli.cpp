#include "CLI11.hpp"

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "exqr/cli.hpp"

namespace {

enum class Kind { text, number, integer, boolean, text_list, number_list };

struct Flag {
  const char* key;
  Kind kind;
  const char* help;
};

const std::vector<Flag>& flags() {
  static const std::vector<Flag> f{
      {"input", Kind::text, "CSV file with a header row"},
      {"response", Kind::text, "response column"},
      {"regressors", Kind::text_list, "regressor columns (comma separated)"},
      {"intercept", Kind::boolean, "prepend an intercept column (true/false)"},
      {"coefficients", Kind::text_list, "coefficients to report (names; column indices for mc-coverage)"},
      {"tau", Kind::number_list, "quantile indices"},
      {"alpha", Kind::number, "significance level"},
      {"method", Kind::text, "critical values: subsample | analytic"},
      {"statistic", Kind::text, "for *-cv commands: sn | cn | boundary"},
      {"b", Kind::integer, "subsample size"},
      {"B_T", Kind::integer, "number of subsamples"},
      {"M", Kind::integer, "Poisson points per limit draw"},
      {"B", Kind::integer, "limit-law draws"},
      {"p", Kind::integer, "spacing parameter"},
      {"tail_tau", Kind::number, "intermediate index for tail estimation"},
      {"mode", Kind::text, "subsampling: iid | timeseries"},
      {"seed", Kind::integer, "master seed (required for stochastic commands)"},
      {"threshold", Kind::number, "advisor threshold on tau T / d"},
      {"cell_threshold", Kind::number, "advisor threshold on tau T s"},
      {"band", Kind::number, "advisor relative band"},
      {"min_cell_share", Kind::number, "smallest indicator cell share"},
      {"preset", Kind::text, "Monte Carlo preset"},
      {"error_law", Kind::text, "Monte Carlo errors, e.g. t(3), Weibull(1), Cauchy"},
      {"T", Kind::integer, "Monte Carlo sample size (or advise without data)"},
      {"d", Kind::integer, "Monte Carlo regressors (or advise without data)"},
      {"reps", Kind::integer, "Monte Carlo replications"},
      {"methods", Kind::text_list, "mc-coverage methods"},
      {"ev_draws", Kind::integer, "mc-qq limit-law draws"},
      {"output", Kind::text, "result JSON path (stdout if omitted)"},
      {"table", Kind::text, "CSV plot table path"},
      {"threads", Kind::integer, "worker threads (0 = EXQR_THREADS or hardware)"},
  };
  return f;
}

exqr::Json to_json(Kind kind, const std::vector<std::string>& raw, const std::string& key) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw exqr::UsageError("--" + key + " expects a number, got '" + s + "'");
    }
  };
  auto integer = [&](const std::string& s) -> exqr::Json {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      if (key == "seed") {
        if (v < 0) throw std::invalid_argument(s);
        return static_cast<std::uint64_t>(v);
      }
      return v;
    } catch (const std::exception&) {
      throw exqr::UsageError("--" + key + " expects an integer, got '" + s + "'");
    }
  };
  switch (kind) {
    case Kind::text: return raw.back();
    case Kind::number: return number(raw.back());
    case Kind::integer: return integer(raw.back());
    case Kind::boolean: {
      const std::string& s = raw.back();
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw exqr::UsageError("--" + key + " expects true or false, got '" + s + "'");
    }
    case Kind::text_list: return raw;
    case Kind::number_list: {
      exqr::Json a = exqr::Json::array();
      for (const auto& s : raw) a.push_back(number(s));
      return a;
    }
  }
  return nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inference for extremal quantile regression"};
  std::string command, config_path;
  bool force = false;
  std::string commands;
  for (const auto& c : exqr::command_names()) commands += (commands.empty() ? "" : ", ") + c;
  app.add_option("command", command, "one of: " + commands)->required();
  app.add_option("--config", config_path, "JSON configuration; flags override its values");
  app.add_flag("--force", force, "overwrite existing output files");
  std::map<std::string, std::vector<std::string>> raw;
  std::map<std::string, CLI::Option*> opts;
  for (const auto& f : flags()) {
    auto* o = app.add_option(std::string("--") + f.key, raw[f.key], f.help);
    if (f.kind == Kind::text_list || f.kind == Kind::number_list) {
      o->delimiter(',')->expected(1, -1);
    } else {
      o->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    opts[f.key] = o;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << exqr::dump_json(exqr::error_document(exqr::UsageError(e.what(), "cli")));
    return exqr::exit_code(exqr::ErrorCategory::usage);
  }

  try {
    exqr::Json file = config_path.empty() ? exqr::Json::object() : exqr::read_json_file(config_path);
    exqr::Json flags_json = exqr::Json::object();
    flags_json["command"] = command;
    for (const auto& f : flags()) {
      if (opts[f.key]->count() > 0) flags_json[f.key] = to_json(f.kind, raw[f.key], f.key);
    }
    if (force) flags_json["force"] = true;
    const exqr::RunConfig cfg = exqr::config_from_json(exqr::merge_config(file, flags_json));
    const exqr::RunOutput out = exqr::run_command(cfg);
    if (cfg.output.empty()) std::cout << exqr::dump_json(out.document);
    return 0;
  } catch (const exqr::Error& e) {
    std::cerr << exqr::dump_json(exqr::error_document(e));
    return exqr::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << exqr::dump_json(exqr::error_document(exqr::NumericalError(e.what(), "internal")));
    return exqr::exit_code(exqr::ErrorCategory::numerical);
  }
}
