#pragma once

// Covariate rows and group coefficients -> conditional GEV/GP parameters.
//
// Each parameter has its own linear predictor built from an implicit
// intercept followed by a selection of covariate columns:
//   mu = e_mu(kappa' x~), sigma = e_sigma(gamma' x~), xi = e_xi(delta' x~).

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "expanel/gev.hpp"

namespace expanel {

enum class LinkKind { Identity, Exp };

// Which conditional distribution the linear predictors feed.
enum class Family { Gev, Gp };

std::string_view to_string(LinkKind kind);
LinkKind parse_link_kind(std::string_view name);
std::string_view to_string(Family family);

template <typename Scalar>
Scalar apply_link(LinkKind kind, Scalar eta) {
  return kind == LinkKind::Exp ? std::exp(eta) : eta;
}

/// d link / d eta, expressed through the link output.
template <typename Scalar>
Scalar link_slope(LinkKind kind, Scalar value) {
  return kind == LinkKind::Exp ? value : Scalar(1);
}

struct LinkSpec {
  LinkKind mu_link = LinkKind::Identity;
  LinkKind sigma_link = LinkKind::Exp;
  LinkKind xi_link = LinkKind::Identity;
  // Zero-based covariate columns entering each predictor after the intercept.
  std::vector<int> mu_terms;
  std::vector<int> sigma_terms;
  std::vector<int> xi_terms;

  /// Throws ConfigError if a term references a column outside [0, n_covariates).
  void validate(int n_covariates) const;

  bool operator==(const LinkSpec&) const = default;
};

struct GroupCoefficients {
  Eigen::VectorXd kappa;  // location; empty for the GP family
  Eigen::VectorXd gamma;  // scale
  Eigen::VectorXd delta;  // shape

  bool operator==(const GroupCoefficients& other) const {
    return kappa == other.kappa && gamma == other.gamma && delta == other.delta;
  }
};

/// P, the number of free coefficients of one group.
int coefficient_count(const LinkSpec& spec, Family family = Family::Gev);

/// All-zero coefficients with the lengths required by `spec`.
GroupCoefficients zero_coefficients(const LinkSpec& spec, Family family = Family::Gev);

/// Throws ConfigError unless the vector lengths match `spec`.
void check_dimensions(const GroupCoefficients& coeffs, const LinkSpec& spec,
                      Family family = Family::Gev);

/// (kappa, gamma, delta) stacked into one vector of length P.
Eigen::VectorXd flatten(const GroupCoefficients& coeffs);
GroupCoefficients unflatten(const Eigen::Ref<const Eigen::VectorXd>& theta,
                            const LinkSpec& spec, Family family = Family::Gev);

/// Conditional GEV parameters for one covariate row (length K).
GevParams<double> eval_params(const GroupCoefficients& coeffs,
                              const Eigen::Ref<const Eigen::VectorXd>& x_row,
                              const LinkSpec& spec);

/// Conditional GP parameters; the location part of `spec` is ignored.
GpParams<double> eval_gp_params(const GroupCoefficients& coeffs,
                                const Eigen::Ref<const Eigen::VectorXd>& x_row,
                                const LinkSpec& spec);

/// Intercept-augmented design row (1, x[terms...]).
Eigen::VectorXd design_row(const Eigen::Ref<const Eigen::VectorXd>& x_row,
                           const std::vector<int>& terms);

}  // namespace expanel
