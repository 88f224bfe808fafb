#include "expanel/gp_panel.hpp"

#include <algorithm>
#include <cmath>

#include "expanel/errors.hpp"

namespace expanel {

long ExceedancePanel::n_exceedances() const {
  long n = 0;
  for (const auto& e : exceedances) n += static_cast<long>(e.size());
  return n;
}

double empirical_quantile(std::vector<double> values, double p0) {
  if (!(p0 > 0 && p0 < 1)) throw DomainError("p0 must lie in (0, 1)");
  if (values.empty()) throw DomainError("empirical quantile of an empty series");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // Guard against p0 * n landing a rounding error above an integer.
  auto rank = static_cast<std::size_t>(std::ceil(p0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

ExceedancePanel extract_exceedances(const PanelData& raw, double p0) {
  if (!(p0 > 0 && p0 < 1)) throw DomainError("p0 must lie in (0, 1)");
  ExceedancePanel out;
  out.p0 = p0;
  out.n_periods = raw.n_periods();
  out.column_names = raw.column_names();
  for (int i = 0; i < raw.n_individuals(); ++i) {
    std::vector<double> series;
    for (int t = 0; t < raw.n_periods(); ++t)
      if (!raw.missing(i, t)) series.push_back(raw.y(i, t));
    const std::string& id = raw.individual_ids()[static_cast<std::size_t>(i)];
    if (series.empty()) {
      out.warnings.push_back("individual " + id + " has no observations and was excluded");
      continue;
    }
    const double threshold = empirical_quantile(series, p0);
    std::vector<Exceedance> above;
    for (int t = 0; t < raw.n_periods(); ++t) {
      if (raw.missing(i, t) || !(raw.y(i, t) > threshold)) continue;
      above.push_back({raw.y(i, t) - threshold, t, raw.covariate_row(i, t)});
    }
    if (above.empty()) {
      out.warnings.push_back("individual " + id + " has no exceedances above its " +
                             std::to_string(p0) + " quantile and was excluded");
      continue;
    }
    out.source_index.push_back(i);
    out.individual_ids.push_back(id);
    out.thresholds.push_back(threshold);
    out.exceedances.push_back(std::move(above));
  }
  return out;
}

ObservationSet gp_observations(const ExceedancePanel& panel, const LinkSpec& spec) {
  const int k = static_cast<int>(panel.column_names.size());
  spec.validate(k);
  std::vector<IndividualBlock> blocks;
  for (const auto& list : panel.exceedances) {
    const auto n = static_cast<Eigen::Index>(list.size());
    IndividualBlock b;
    b.response.resize(n);
    b.period.resize(n);
    b.sigma_design.resize(n, static_cast<Eigen::Index>(spec.sigma_terms.size()) + 1);
    b.xi_design.resize(n, static_cast<Eigen::Index>(spec.xi_terms.size()) + 1);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& e = list[static_cast<std::size_t>(r)];
      if (!(e.excess > 0) || !std::isfinite(e.excess)) throw DomainError("excesses must be finite and > 0");
      if (e.covariates.size() != k) throw ConfigError("exceedance covariate row has the wrong length");
      b.response(r) = e.excess;
      b.period(r) = e.period;
      b.sigma_design.row(r) = design_row(e.covariates, spec.sigma_terms).transpose();
      b.xi_design.row(r) = design_row(e.covariates, spec.xi_terms).transpose();
    }
    blocks.push_back(std::move(b));
  }
  return ObservationSet(Family::Gp, spec, std::max(panel.n_periods, 1), std::move(blocks));
}

EmFit em_fit_gp(const ExceedancePanel& panel, int n_groups, const LinkSpec& spec,
                const EmOptions& opts) {
  LinkSpec gp_spec = spec;
  gp_spec.mu_terms.clear();
  return em_fit(gp_observations(panel, gp_spec), n_groups, opts);
}

}  // namespace expanel
