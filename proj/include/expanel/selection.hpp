#pragma once

// Choosing the number of groups by BIC, and partition / quantile diagnostics.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "expanel/em.hpp"

namespace expanel {

/// -2 loglik + log(N T) * P * G.
double bic(double loglik, int n_groups, int n_parameters, long n_individuals, long n_periods);

struct SweepEntry {
  int n_groups = 0;   // requested G
  bool failed = false;
  std::string failure;
  EmFit fit;
  double bic = 0;
};

struct SweepResult {
  std::vector<SweepEntry> entries;  // G = 1..g_max in order
  int g_star = 0;

  const SweepEntry& entry(int n_groups) const;
  const SweepEntry& selected() const { return entry(g_star); }
};

SweepResult select_groups(const PanelData& data, const LinkSpec& spec, int g_max,
                          const EmOptions& opts = {});
SweepResult select_groups(const ObservationSet& obs, int g_max, const EmOptions& opts = {});

/// Fraction of unordered pairs on which the two partitions agree.
double rand_index(const GroupAssignment& a, const GroupAssignment& b);
double rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// Mean over cells of |estimate - truth| / |truth|. Cells where the truth is
/// zero or either value is non-finite are skipped; `skipped` receives their
/// count when given.
double mrae(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate, long* skipped = nullptr);

}  // namespace expanel
