#pragma once

// Grouped panel GP regression on threshold exceedances.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "expanel/em.hpp"
#include "expanel/observations.hpp"
#include "expanel/panel.hpp"

namespace expanel {

struct Exceedance {
  double excess;  // > 0
  int period;     // zero-based period of the raw observation
  Eigen::VectorXd covariates;
};

struct ExceedancePanel {
  double p0 = 0.95;
  int n_periods = 0;
  std::vector<std::string> column_names;
  // Kept individuals only; `source_index` maps back to rows of the raw panel.
  std::vector<int> source_index;
  std::vector<std::string> individual_ids;
  std::vector<double> thresholds;
  std::vector<std::vector<Exceedance>> exceedances;
  std::vector<std::string> warnings;

  int n_individuals() const { return static_cast<int>(exceedances.size()); }
  long n_exceedances() const;
};

/// Empirical p0-quantile of a series: the order statistic at rank
/// ceil(p0 * n) (1-based).
double empirical_quantile(std::vector<double> values, double p0);

/// Per-individual empirical thresholds and the strictly positive excesses
/// above them. Individuals without exceedances are dropped with a warning.
ExceedancePanel extract_exceedances(const PanelData& raw, double p0);

/// Likelihood engine for the GP family; the location part of `spec` is unused.
ObservationSet gp_observations(const ExceedancePanel& panel, const LinkSpec& spec);

EmFit em_fit_gp(const ExceedancePanel& panel, int n_groups, const LinkSpec& spec,
                const EmOptions& opts = {});

}  // namespace expanel
