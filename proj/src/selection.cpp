#include "expanel/selection.hpp"

#include <cmath>
#include <limits>

#include "expanel/errors.hpp"

namespace expanel {

double bic(double loglik, int n_groups, int n_parameters, long n_individuals, long n_periods) {
  return -2.0 * loglik + std::log(static_cast<double>(n_individuals) * static_cast<double>(n_periods)) *
                             static_cast<double>(n_parameters) * static_cast<double>(n_groups);
}

const SweepEntry& SweepResult::entry(int n_groups) const {
  for (const auto& e : entries)
    if (e.n_groups == n_groups) return e;
  throw ConfigError("no sweep entry for G = " + std::to_string(n_groups));
}

SweepResult select_groups(const ObservationSet& obs, int g_max, const EmOptions& opts) {
  if (g_max < 1 || g_max > obs.n_individuals())
    throw ConfigError("g_max must lie in [1, N]");
  SweepResult sweep;
  double best = std::numeric_limits<double>::infinity();
  for (int g = 1; g <= g_max; ++g) {
    SweepEntry e;
    e.n_groups = g;
    try {
      e.fit = em_fit(obs, g, opts);
      e.bic = bic(e.fit.result.loglik, e.fit.result.n_groups(), obs.n_parameters(),
                  obs.n_individuals(), obs.n_periods());
    } catch (const FitError& err) {
      e.failed = true;
      e.failure = err.what();
      e.bic = std::numeric_limits<double>::quiet_NaN();
    }
    // Strict comparison keeps the smaller G on ties.
    if (!e.failed && e.bic < best) {
      best = e.bic;
      sweep.g_star = g;
    }
    sweep.entries.push_back(std::move(e));
  }
  if (sweep.g_star == 0) throw FitError("every candidate number of groups failed to fit");
  return sweep;
}

SweepResult select_groups(const PanelData& data, const LinkSpec& spec, int g_max,
                          const EmOptions& opts) {
  return select_groups(ObservationSet::from_panel(data, spec), g_max, opts);
}

double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ConfigError("partitions have different lengths");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  long agree = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) agree += (a[i] == a[j]) == (b[i] == b[j]);
  return static_cast<double>(agree) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double rand_index(const GroupAssignment& a, const GroupAssignment& b) {
  return rand_index(a.labels, b.labels);
}

double mrae(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate, long* skipped) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
    throw ConfigError("quantile matrices differ in shape");
  double sum = 0.0;
  long used = 0, dropped = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (Eigen::Index t = 0; t < truth.cols(); ++t) {
      const double q = truth(i, t), e = estimate(i, t);
      if (q == 0.0 || !std::isfinite(q) || !std::isfinite(e)) {
        ++dropped;
        continue;
      }
      sum += std::abs(e - q) / std::abs(q);
      ++used;
    }
  }
  if (skipped) *skipped = dropped;
  return used > 0 ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace expanel
