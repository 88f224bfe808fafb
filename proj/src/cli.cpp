#include "expanel/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "CLI11.hpp"

#include "expanel/errors.hpp"
#include "expanel/gp_panel.hpp"
#include "expanel/io.hpp"
#include "expanel/parallel.hpp"
#include "expanel/selection.hpp"
#include "expanel/simulate.hpp"

namespace expanel {

namespace {

constexpr int kOk = 0;
constexpr int kComputeFailure = 1;
constexpr int kUsage = 2;

std::string format_number(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

int thread_count(const std::optional<int>& flag) {
  if (flag) return resolve_threads(*flag);
  if (const char* env = std::getenv("EXTREME_PANEL_THREADS")) {
    int value = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || value < 0)
      throw ConfigError("EXTREME_PANEL_THREADS must be a non-negative integer");
    return resolve_threads(value);
  }
  return resolve_threads(0);
}

struct SimulateArgs {
  std::string config, out, truth;
  std::optional<std::uint64_t> seed;
};

struct ModelArgs {
  std::string data, model, out;
  int groups = 0;
  std::optional<int> g_max;
  std::optional<std::uint64_t> seed;
  std::optional<int> restarts;
  std::optional<int> threads;
};

struct StudyArgs {
  std::string config, out;
  int g_max = 6;
  int reps = 50;
  std::optional<std::uint64_t> seed;
  std::optional<int> restarts;
  std::optional<int> threads;
};

struct QuantileArgs {
  std::string report, data;
  std::optional<double> p;
  std::optional<double> return_period;
};

int cmd_simulate(const SimulateArgs& a) {
  DgpConfig config = read_dgp_config(a.config);
  if (a.seed) config.seed = *a.seed;
  const SimulatedPanel sim = simulate_panel(config);
  write_panel_csv(sim.data, a.out);
  if (!a.truth.empty()) {
    Json truth;
    truth["config"] = to_json(config);
    Json groups = Json::array();
    for (const auto& c : sim.coefficients) groups.push_back(to_json(c));
    truth["coefficients"] = groups;
    Json labels = Json::array();
    for (int g : sim.assignment.labels) labels.push_back(g + 1);
    truth["assignment"] = labels;
    truth["individual_ids"] = sim.data.individual_ids();
    Json q = Json::array();
    for (Eigen::Index i = 0; i < sim.true_q99.rows(); ++i) {
      Json row = Json::array();
      for (Eigen::Index t = 0; t < sim.true_q99.cols(); ++t) row.push_back(number(sim.true_q99(i, t)));
      q.push_back(row);
    }
    truth["true_q99"] = q;
    write_json(truth, a.truth);
  }
  return kOk;
}

struct LoadedModel {
  ModelConfig config;
  PanelData data;
  EmOptions em;
  ReportContext context;
};

LoadedModel load_model(const ModelArgs& a) {
  LoadedModel m;
  m.config = read_model_config(a.model);
  m.data = read_panel_csv(a.data, m.config);
  m.em = m.config.em;
  if (a.seed) m.em.seed = *a.seed;
  if (a.restarts) m.em.n_restarts = *a.restarts;
  m.em.threads = thread_count(a.threads);
  m.em.validate();
  ModelConfig echo = m.config;
  echo.em = m.em;
  m.context.seed = m.em.seed;
  m.context.config = {{"model", to_json(echo)}, {"data", a.data}};
  m.context.column_names = m.data.column_names();
  m.context.individual_ids = m.data.individual_ids();
  return m;
}

// Observation set for the configured family; gp-panel mode also records
// thresholds and exclusions in the report context.
ObservationSet observations(LoadedModel& m, std::ostream& err) {
  const LinkSpec spec = m.config.link_spec(m.data.column_names());
  if (m.config.mode == ModelMode::GevPanel) return ObservationSet::from_panel(m.data, spec);
  const ExceedancePanel panel = extract_exceedances(m.data, m.config.p0);
  for (const auto& w : panel.warnings) err << "warning: " << w << '\n';
  if (panel.n_individuals() == 0) throw ConfigError("no individual has exceedances above its threshold");
  m.context.individual_ids = panel.individual_ids;
  m.context.extra = {{"p0", panel.p0},
                     {"thresholds", panel.thresholds},
                     {"n_exceedances", panel.n_exceedances()},
                     {"warnings", panel.warnings}};
  LinkSpec gp_spec = spec;
  gp_spec.mu_terms.clear();
  return gp_observations(panel, gp_spec);
}

void write_failure(const char* kind, const std::string& path, const ReportContext& context,
                   const std::string& message) {
  Json report = make_report(kind, Json(), context);
  report["error"] = message;
  write_json(report, path);
}

int cmd_fit(const ModelArgs& a, std::ostream& err) {
  LoadedModel m = load_model(a);
  const ObservationSet obs = observations(m, err);
  m.context.config["groups"] = a.groups;
  if (a.groups > obs.n_individuals())
    throw ConfigError("--groups exceeds the number of individuals (" + std::to_string(obs.n_individuals()) + ")");
  try {
    write_fit_report(em_fit(obs, a.groups, m.em), a.out, m.context);
  } catch (const FitError& e) {
    write_failure("fit", a.out, m.context, e.what());
    throw;
  }
  return kOk;
}

int cmd_select(const ModelArgs& a, std::ostream& err) {
  LoadedModel m = load_model(a);
  const ObservationSet obs = observations(m, err);
  const int g_max = a.g_max.value_or(m.config.g_max);
  m.context.config["g_max"] = g_max;
  if (g_max < 1 || g_max > obs.n_individuals())
    throw ConfigError("--gmax must lie in [1, " + std::to_string(obs.n_individuals()) + "]");
  try {
    write_fit_report(select_groups(obs, g_max, m.em), a.out, m.context);
  } catch (const FitError& e) {
    write_failure("selection", a.out, m.context, e.what());
    throw;
  }
  return kOk;
}

int cmd_study(const StudyArgs& a) {
  DgpConfig config = read_dgp_config(a.config);
  if (a.seed) config.seed = *a.seed;
  EmOptions em;
  em.seed = config.seed;
  if (a.restarts) em.n_restarts = *a.restarts;
  em.validate();
  const int threads = thread_count(a.threads);
  const StudySummary summary = run_study(config, a.g_max, a.reps, em, threads);
  ReportContext context;
  context.seed = config.seed;
  context.config = {{"dgp", to_json(config)},
                    {"g_max", a.g_max},
                    {"replications", a.reps},
                    {"em", {{"max_iterations", em.max_em_iterations},
                            {"restarts", em.n_restarts},
                            {"tolerance", em.loglik_tolerance}}}};
  write_fit_report(summary, a.out, context);
  return kOk;
}

int cmd_quantile(const QuantileArgs& a, std::ostream& out) {
  double p = 0;
  if (a.p.has_value() == a.return_period.has_value())
    throw ConfigError("give exactly one of --p and --return-period");
  if (a.p) {
    p = *a.p;
    if (!(p > 0 && p < 1)) throw ConfigError("--p must lie in (0, 1)");
  } else {
    if (!(*a.return_period > 1) || !std::isfinite(*a.return_period))
      throw ConfigError("--return-period must be a finite value > 1");
    p = 1.0 - 1.0 / *a.return_period;
  }

  const Json report = read_report(a.report);
  FitResult fit;
  try {
    const std::string kind = report.at("kind").get<std::string>();
    if (report.at("result").is_null()) throw ConfigError("report holds a failed run");
    if (kind == "fit")
      fit = em_fit_from_json(report.at("result")).result;
    else if (kind == "selection")
      fit = sweep_result_from_json(report.at("result")).selected().fit.result;
    else
      throw ConfigError("quantiles need a fit or selection report, not '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  const ModelConfig model = model_config_from_json(report.at("config").at("model"));
  const PanelData data = read_panel_csv(a.data, model);
  const auto columns = report.value("columns", std::vector<std::string>{});
  if (columns != data.column_names()) throw ConfigError("data columns do not match the report");
  const auto ids = report.value("individual_ids", std::vector<std::string>{});
  if (ids.size() != fit.assignment.labels.size())
    throw ParseError("report assignment and individual ids differ in length");
  std::map<std::string, int> fitted;
  for (std::size_t k = 0; k < ids.size(); ++k) fitted[ids[k]] = static_cast<int>(k);

  const bool gp = fit.family == Family::Gp;
  std::vector<double> thresholds;
  double p0 = 0;
  if (gp) {
    p0 = report.at("extra").at("p0").get<double>();
    for (const auto& u : report.at("extra").at("thresholds")) thresholds.push_back(to_double(u));
    if (!(p > p0)) throw ConfigError("gp-panel quantiles need p above the threshold level p0");
  } else {
    for (const auto& id : data.individual_ids())
      if (!fitted.contains(id)) throw ConfigError("individual '" + id + "' is not in the report");
    if (data.individual_ids().size() != ids.size()) throw ConfigError("data individuals do not match the report");
  }

  out << "id,time,p,quantile\n";
  for (int i = 0; i < data.n_individuals(); ++i) {
    const std::string& id = data.individual_ids()[static_cast<std::size_t>(i)];
    const auto it = fitted.find(id);
    for (int t = 0; t < data.n_periods(); ++t) {
      double q = std::numeric_limits<double>::quiet_NaN();
      const Eigen::VectorXd x = data.covariate_row(i, t);
      if (it != fitted.end() && x.allFinite()) {
        const auto k = static_cast<std::size_t>(it->second);
        const auto& c = fit.coefficients.at(static_cast<std::size_t>(fit.assignment.labels[k]));
        q = gp ? thresholds.at(k) + gp_quantile((p - p0) / (1 - p0), eval_gp_params(c, x, fit.spec))
               : gev_quantile(p, eval_params(c, x, fit.spec));
      }
      out << id << ',' << data.period_labels()[static_cast<std::size_t>(t)] << ',' << format_number(p)
          << ',' << format_number(q) << '\n';
    }
  }
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grouped panel extreme value regression"};
  app.name("extreme-panel");
  app.require_subcommand(1);
  app.set_version_flag("--version", EXPANEL_VERSION);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate a panel from a DGP configuration");
  simulate->add_option("--config", sim.config, "DGP configuration (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output panel CSV")->required();
  simulate->add_option("--truth", sim.truth, "Output JSON with the true coefficients, groups and 0.99-quantiles");
  simulate->add_option("--seed", sim.seed, "Override the configuration seed");

  ModelArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit the grouped model with a given number of groups");
  fit->add_option("--data", fit_args.data, "Panel CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--model", fit_args.model, "Model configuration (JSON)")->required()->check(CLI::ExistingFile);
  fit->add_option("--groups", fit_args.groups, "Number of groups")->required()->check(CLI::PositiveNumber);
  fit->add_option("--out", fit_args.out, "Output report (JSON)")->required();
  fit->add_option("--seed", fit_args.seed, "Override the EM seed");
  fit->add_option("--restarts", fit_args.restarts, "Override the number of EM restarts")->check(CLI::PositiveNumber);
  fit->add_option("--threads", fit_args.threads, "Concurrent EM chains (0: all cores)")->check(CLI::NonNegativeNumber);

  ModelArgs select_args;
  auto* select = app.add_subcommand("select", "Fit G = 1..gmax groups and choose G by BIC");
  select->add_option("--data", select_args.data, "Panel CSV")->required()->check(CLI::ExistingFile);
  select->add_option("--model", select_args.model, "Model configuration (JSON)")->required()->check(CLI::ExistingFile);
  select->add_option("--gmax", select_args.g_max, "Largest number of groups (default: model g_max)")->check(CLI::PositiveNumber);
  select->add_option("--out", select_args.out, "Output report (JSON)")->required();
  select->add_option("--seed", select_args.seed, "Override the EM seed");
  select->add_option("--restarts", select_args.restarts, "Override the number of EM restarts")->check(CLI::PositiveNumber);
  select->add_option("--threads", select_args.threads, "Concurrent EM chains (0: all cores)")->check(CLI::NonNegativeNumber);

  StudyArgs study_args;
  auto* study = app.add_subcommand("study", "Monte Carlo study: simulate, select and score");
  study->add_option("--config", study_args.config, "DGP configuration (JSON)")->required()->check(CLI::ExistingFile);
  study->add_option("--gmax", study_args.g_max, "Largest number of groups")->capture_default_str()->check(CLI::PositiveNumber);
  study->add_option("--reps", study_args.reps, "Replications")->capture_default_str()->check(CLI::PositiveNumber);
  study->add_option("--out", study_args.out, "Output summary (JSON)")->required();
  study->add_option("--seed", study_args.seed, "Override the configuration seed");
  study->add_option("--restarts", study_args.restarts, "EM restarts per fit")->check(CLI::PositiveNumber);
  study->add_option("--threads", study_args.threads, "Concurrent replications (0: all cores)")->check(CLI::NonNegativeNumber);

  QuantileArgs q_args;
  auto* quantile = app.add_subcommand("quantile", "Conditional quantiles per cell as CSV on standard output");
  quantile->add_option("--report", q_args.report, "Fit or selection report")->required()->check(CLI::ExistingFile);
  quantile->add_option("--data", q_args.data, "Panel CSV")->required()->check(CLI::ExistingFile);
  auto* p_opt = quantile->add_option("--p", q_args.p, "Probability level");
  auto* s_opt = quantile->add_option("--return-period", q_args.return_period, "Return period S (level 1 - 1/S)");
  p_opt->excludes(s_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << EXPANEL_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim);
    if (fit->parsed()) return cmd_fit(fit_args, err);
    if (select->parsed()) return cmd_select(select_args, err);
    if (study->parsed()) return cmd_study(study_args);
    if (quantile->parsed()) return cmd_quantile(q_args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kComputeFailure;
  }
  return kUsage;
}

}  // namespace expanel
