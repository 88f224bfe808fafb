#pragma once

// Long-format panel CSV files, JSON model and simulation configurations, and
// JSON reports for fits, group-number sweeps and simulation studies.
//
// Reports write group labels 1-based and encode non-finite numbers as the
// strings "nan", "inf" and "-inf". Doubles are printed in shortest
// round-trip form, so reading a report back reproduces every value exactly.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "expanel/em.hpp"
#include "expanel/links.hpp"
#include "expanel/panel.hpp"
#include "expanel/selection.hpp"
#include "expanel/simulate.hpp"

namespace expanel {

using Json = nlohmann::ordered_json;

enum class Transform { None, Log };
enum class ModelMode { GevPanel, GpPanel };

std::string_view to_string(ModelMode mode);

struct ModelConfig {
  LinkKind mu_link = LinkKind::Identity;
  LinkKind sigma_link = LinkKind::Exp;
  LinkKind xi_link = LinkKind::Identity;
  // Covariate column names entering each predictor after the intercept.
  std::vector<std::string> mu_terms;
  std::vector<std::string> sigma_terms;
  std::vector<std::string> xi_terms;
  std::map<std::string, Transform> transforms;  // by column name; "y" allowed
  ModelMode mode = ModelMode::GevPanel;
  double p0 = 0.95;  // threshold level in gp-panel mode
  EmOptions em;
  int g_max = 6;

  void validate() const;
  /// Resolves term names against the panel's columns (ConfigError if absent).
  LinkSpec link_spec(const std::vector<std::string>& columns) const;
  Family family() const { return mode == ModelMode::GpPanel ? Family::Gp : Family::Gev; }
};

ModelConfig model_config_from_json(const Json& j);
Json to_json(const ModelConfig& config);
ModelConfig read_model_config(const std::string& path);

/// Header `id,time,y,<covariates...>`, one row per observed (id, time).
/// Empty or `NA` y marks a missing cell; (id, time) pairs absent from the
/// file are missing too. Individuals and periods are ordered by their labels
/// (numerically when every label is a number), so the panel does not depend
/// on the row order of the file.
PanelData parse_panel_csv(std::istream& in, const std::map<std::string, Transform>& transforms = {});
PanelData read_panel_csv(const std::string& path,
                         const std::map<std::string, Transform>& transforms = {});
PanelData read_panel_csv(const std::string& path, const ModelConfig& config);

void write_panel_csv(const PanelData& data, std::ostream& out);
void write_panel_csv(const PanelData& data, const std::string& path);

/// Keys: groups[{kappa0..2, gamma0..2, delta0}] (default: the four-group
/// design), covariates{omega, lambda, beta, nu_f, nu_i}, u_bounds[lo, hi],
/// copula{kind, rho | alpha}, N, T, seed.
DgpConfig dgp_config_from_json(const Json& j);
Json to_json(const DgpConfig& config);
DgpConfig read_dgp_config(const std::string& path);

Json to_json(const GroupCoefficients& coeffs);
Json to_json(const FitResult& result);
FitResult fit_result_from_json(const Json& j);
Json to_json(const EmTrace& trace);
EmTrace em_trace_from_json(const Json& j);
Json to_json(const EmFit& fit);
EmFit em_fit_from_json(const Json& j);
Json to_json(const SweepResult& sweep);
SweepResult sweep_result_from_json(const Json& j);
Json to_json(const StudySummary& summary);
StudySummary study_summary_from_json(const Json& j);

/// Everything a report carries besides the result itself.
struct ReportContext {
  std::uint64_t seed = 0;
  Json config = Json::object();  // echo of the inputs
  std::vector<std::string> individual_ids;
  std::vector<std::string> column_names;
  Json extra = Json::object();  // e.g. thresholds of a gp-panel fit
};

/// {software, kind, seed, config, columns, individual_ids, extra, result};
/// `result` may be null for a failed run.
Json make_report(std::string_view kind, Json result, const ReportContext& context);

void write_fit_report(const EmFit& fit, const std::string& path, const ReportContext& context = {});
void write_fit_report(const SweepResult& sweep, const std::string& path,
                      const ReportContext& context = {});
void write_fit_report(const StudySummary& summary, const std::string& path,
                      const ReportContext& context = {});

/// The report document as written.
Json read_report(const std::string& path);
EmFit read_fit_report(const std::string& path);
SweepResult read_sweep_report(const std::string& path);
StudySummary read_study_report(const std::string& path);

void write_json(const Json& j, const std::string& path);
Json read_json(const std::string& path);

/// Finite values as numbers, others as "nan" / "inf" / "-inf".
Json number(double value);
double to_double(const Json& j);

}  // namespace expanel
