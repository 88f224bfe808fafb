#pragma once

// Panel container, grouped panel log-likelihood, per-group QML fits and
// sandwich covariance estimation.

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "expanel/links.hpp"
#include "expanel/optim.hpp"

namespace expanel {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// N x T responses with missingness plus N x T x K covariates. Immutable.
class PanelData {
 public:
  PanelData() = default;

  /// `y` is N x T with NaN marking missing cells. `x[i]` is the T x K
  /// covariate matrix of individual i (row t = period t). Covariates of
  /// missing cells may be NaN.
  PanelData(Eigen::MatrixXd y, std::vector<Eigen::MatrixXd> x,
            std::vector<std::string> column_names = {});

  int n_individuals() const { return static_cast<int>(y_.rows()); }
  int n_periods() const { return static_cast<int>(y_.cols()); }
  int n_covariates() const { return n_covariates_; }

  const Eigen::MatrixXd& y() const { return y_; }
  double y(int i, int t) const { return y_(i, t); }
  bool missing(int i, int t) const { return missing_(i, t); }
  const BoolMatrix& missing_mask() const { return missing_; }
  long n_observed() const;

  const Eigen::MatrixXd& covariates(int i) const { return x_[static_cast<std::size_t>(i)]; }
  Eigen::VectorXd covariate_row(int i, int t) const { return x_[static_cast<std::size_t>(i)].row(t).transpose(); }

  const std::vector<std::string>& column_names() const { return column_names_; }
  /// Index of the named covariate column, or -1.
  int column_index(const std::string& name) const;

  // External labels kept from ingestion (defaults: "1".."N", "1".."T").
  const std::vector<std::string>& individual_ids() const { return individual_ids_; }
  const std::vector<std::string>& period_labels() const { return period_labels_; }
  void set_labels(std::vector<std::string> individual_ids, std::vector<std::string> period_labels);

  /// Panel with the given individuals only, in the given order.
  PanelData subset(std::span<const int> individuals) const;

 private:
  Eigen::MatrixXd y_;
  BoolMatrix missing_;
  std::vector<Eigen::MatrixXd> x_;
  int n_covariates_ = 0;
  std::vector<std::string> column_names_;
  std::vector<std::string> individual_ids_;
  std::vector<std::string> period_labels_;
};

/// Zero-based group labels: labels[i] in [0, n_groups).
struct GroupAssignment {
  std::vector<int> labels;
  int n_groups = 1;

  static GroupAssignment single(int n_individuals) {
    return {std::vector<int>(static_cast<std::size_t>(n_individuals), 0), 1};
  }
  void validate(int n_individuals) const;
  std::vector<int> members(int group) const;
  int size(int group) const;
  bool operator==(const GroupAssignment&) const = default;
};

struct FitResult {
  Family family = Family::Gev;
  LinkSpec spec;
  std::vector<GroupCoefficients> coefficients;
  GroupAssignment assignment;
  double loglik = 0;
  // Per-group P x P sandwich covariance; empty matrix if it could not be
  // computed (see diagnostics).
  std::vector<Eigen::MatrixXd> covariance;
  std::vector<Eigen::VectorXd> std_errors;
  int n_iterations = 0;
  bool converged = false;
  std::vector<std::string> diagnostics;

  int n_groups() const { return assignment.n_groups; }
};

struct QmlFit {
  GroupCoefficients coefficients;
  double loglik = 0;
  int iterations = 0;
  bool converged = false;
  // Quasi-Newton inverse Hessian of the per-observation negative
  // log-likelihood at the optimum; reusable as a warm-start seed.
  Eigen::MatrixXd inverse_hessian;
};

/// Sum of GEV log-densities over the non-missing cells, each individual using
/// its group's coefficients. -inf if any cell is off-support.
double panel_loglik(const PanelData& data, const std::vector<GroupCoefficients>& coeffs,
                    const GroupAssignment& tau, const LinkSpec& spec);

/// Heuristic starting point computed from the pooled member observations.
GroupCoefficients initial_coefficients(const PanelData& data, std::span<const int> members,
                                       const LinkSpec& spec);

/// QML fit of one group's coefficients over `members`. Without `init` the
/// heuristic start is used.
QmlFit fit_qml_group(const PanelData& data, std::span<const int> members, const LinkSpec& spec,
                     const std::optional<GroupCoefficients>& init = std::nullopt,
                     const OptimOptions& opts = {});

/// Gradient of the log-density of cell (i, t) with respect to the flattened
/// coefficients of individual i's group.
Eigen::VectorXd score_vector(const PanelData& data, const std::vector<GroupCoefficients>& coeffs,
                             const GroupAssignment& tau, const LinkSpec& spec, int i, int t);

struct SandwichParts {
  Eigen::MatrixXd hessian;     // observed Hessian of the group log-likelihood
  Eigen::MatrixXd meat;        // sum over periods of outer products of period-summed scores
  Eigen::MatrixXd covariance;  // H^-1 V H^-1
};

/// Per-group sandwich components. Throws NumericalRankError when a group's
/// Hessian is numerically singular.
std::vector<SandwichParts> sandwich_parts(const PanelData& data,
                                          const std::vector<GroupCoefficients>& coeffs,
                                          const GroupAssignment& tau, const LinkSpec& spec);

std::vector<Eigen::MatrixXd> sandwich_covariance(const PanelData& data,
                                                 const std::vector<GroupCoefficients>& coeffs,
                                                 const GroupAssignment& tau, const LinkSpec& spec);

/// Per-individual fraction of observed periods with y above the fitted
/// conditional p-quantile. NaN for individuals with no observed cell.
Eigen::VectorXd exceedance_rates(const PanelData& data,
                                 const std::vector<GroupCoefficients>& coeffs,
                                 const GroupAssignment& tau, const LinkSpec& spec, double p);

/// N x T matrix of fitted conditional p-quantiles (NaN where covariates are
/// missing).
Eigen::MatrixXd conditional_quantiles(const PanelData& data,
                                      const std::vector<GroupCoefficients>& coeffs,
                                      const GroupAssignment& tau, const LinkSpec& spec, double p);

}  // namespace expanel
