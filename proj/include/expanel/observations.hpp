#pragma once

// Likelihood engine shared by the GEV and GP panels.
//
// An ObservationSet holds, per individual, the observed responses together
// with the intercept-augmented design matrix of each linear predictor. All
// group-level computations (log-likelihood, gradient, cell scores, Hessian,
// sandwich) are expressed on the flattened coefficient vector theta.

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

#include "expanel/links.hpp"
#include "expanel/optim.hpp"
#include "expanel/panel.hpp"

namespace expanel {

struct IndividualBlock {
  Eigen::VectorXd response;  // y for GEV, excess z for GP
  Eigen::VectorXi period;    // zero-based time index of each response
  Eigen::MatrixXd mu_design;  // empty (0 columns) for GP
  Eigen::MatrixXd sigma_design;
  Eigen::MatrixXd xi_design;

  Eigen::Index size() const { return response.size(); }
};

class ObservationSet {
 public:
  ObservationSet(Family family, LinkSpec spec, int n_periods, std::vector<IndividualBlock> blocks);

  static ObservationSet from_panel(const PanelData& data, const LinkSpec& spec);

  Family family() const { return family_; }
  const LinkSpec& spec() const { return spec_; }
  int n_individuals() const { return static_cast<int>(blocks_.size()); }
  int n_periods() const { return n_periods_; }
  int n_parameters() const { return n_parameters_; }
  const IndividualBlock& block(int i) const { return blocks_[static_cast<std::size_t>(i)]; }
  long n_observations() const;
  long n_observations(std::span<const int> members) const;

  /// Log-likelihood of individual i at theta; adds its gradient to `grad`
  /// when given. Returns -inf if any response is off-support or a link
  /// yields an inadmissible parameter.
  double loglik(int i, const Eigen::VectorXd& theta, Eigen::VectorXd* grad = nullptr) const;
  double loglik(std::span<const int> members, const Eigen::VectorXd& theta,
                Eigen::VectorXd* grad = nullptr) const;

  /// Scores of every response of individual i (rows follow block(i)).
  /// Throws DomainError if a response is off-support.
  Eigen::MatrixXd cell_scores(int i, const Eigen::VectorXd& theta) const;

 private:
  Family family_;
  LinkSpec spec_;
  int n_periods_;
  int n_parameters_;
  std::vector<IndividualBlock> blocks_;
};

// Group-level routines on an ObservationSet.

GroupCoefficients heuristic_start(const ObservationSet& obs, std::span<const int> members);

/// `inverse_hessian` seeds the quasi-Newton stage when `init` is used as is.
QmlFit fit_group(const ObservationSet& obs, std::span<const int> members,
                 const std::optional<GroupCoefficients>& init, const OptimOptions& opts,
                 const Eigen::MatrixXd* inverse_hessian = nullptr);

/// Observed Hessian of the members' log-likelihood by central differences of
/// the analytic gradient, step 1e-5 * (1 + |theta_j|).
Eigen::MatrixXd numerical_hessian(const ObservationSet& obs, std::span<const int> members,
                                  const Eigen::VectorXd& theta);

SandwichParts group_sandwich(const ObservationSet& obs, std::span<const int> members,
                             const Eigen::VectorXd& theta);

/// Sum of per-group log-likelihoods under an assignment.
double total_loglik(const ObservationSet& obs, const std::vector<GroupCoefficients>& coeffs,
                    const GroupAssignment& tau);

/// N x G matrix of per-individual log-likelihoods under each group.
Eigen::MatrixXd individual_logliks(const ObservationSet& obs,
                                   const std::vector<GroupCoefficients>& coeffs);

}  // namespace expanel
