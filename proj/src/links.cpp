#include "expanel/links.hpp"

#include "expanel/errors.hpp"

namespace expanel {

std::string_view to_string(LinkKind kind) {
  return kind == LinkKind::Exp ? "exp" : "identity";
}

LinkKind parse_link_kind(std::string_view name) {
  if (name == "identity") return LinkKind::Identity;
  if (name == "exp" || name == "log") return LinkKind::Exp;
  throw ConfigError("unknown link '" + std::string(name) + "' (expected identity or exp)");
}

std::string_view to_string(Family family) {
  return family == Family::Gp ? "gp-panel" : "gev-panel";
}

void LinkSpec::validate(int n_covariates) const {
  auto check = [n_covariates](const std::vector<int>& terms, const char* name) {
    for (int column : terms) {
      if (column < 0 || column >= n_covariates) {
        throw ConfigError(std::string(name) + " term references covariate column " +
                          std::to_string(column) + " but only " +
                          std::to_string(n_covariates) + " are available");
      }
    }
  };
  check(mu_terms, "mu");
  check(sigma_terms, "sigma");
  check(xi_terms, "xi");
}

int coefficient_count(const LinkSpec& spec, Family family) {
  const int location = family == Family::Gev ? static_cast<int>(spec.mu_terms.size()) + 1 : 0;
  return location + static_cast<int>(spec.sigma_terms.size()) + 1 +
         static_cast<int>(spec.xi_terms.size()) + 1;
}

GroupCoefficients zero_coefficients(const LinkSpec& spec, Family family) {
  GroupCoefficients c;
  c.kappa = Eigen::VectorXd::Zero(family == Family::Gev ? spec.mu_terms.size() + 1 : 0);
  c.gamma = Eigen::VectorXd::Zero(spec.sigma_terms.size() + 1);
  c.delta = Eigen::VectorXd::Zero(spec.xi_terms.size() + 1);
  return c;
}

void check_dimensions(const GroupCoefficients& coeffs, const LinkSpec& spec, Family family) {
  const auto expect = zero_coefficients(spec, family);
  if (coeffs.kappa.size() != expect.kappa.size() || coeffs.gamma.size() != expect.gamma.size() ||
      coeffs.delta.size() != expect.delta.size()) {
    throw ConfigError("coefficient lengths (" + std::to_string(coeffs.kappa.size()) + ", " +
                      std::to_string(coeffs.gamma.size()) + ", " +
                      std::to_string(coeffs.delta.size()) + ") do not match the link spec (" +
                      std::to_string(expect.kappa.size()) + ", " +
                      std::to_string(expect.gamma.size()) + ", " +
                      std::to_string(expect.delta.size()) + ")");
  }
}

Eigen::VectorXd flatten(const GroupCoefficients& coeffs) {
  Eigen::VectorXd theta(coeffs.kappa.size() + coeffs.gamma.size() + coeffs.delta.size());
  theta << coeffs.kappa, coeffs.gamma, coeffs.delta;
  return theta;
}

GroupCoefficients unflatten(const Eigen::Ref<const Eigen::VectorXd>& theta, const LinkSpec& spec,
                            Family family) {
  if (theta.size() != coefficient_count(spec, family)) {
    throw ConfigError("flattened coefficient vector has length " + std::to_string(theta.size()) +
                      ", expected " + std::to_string(coefficient_count(spec, family)));
  }
  GroupCoefficients c = zero_coefficients(spec, family);
  Eigen::Index at = 0;
  c.kappa = theta.segment(at, c.kappa.size());
  at += c.kappa.size();
  c.gamma = theta.segment(at, c.gamma.size());
  at += c.gamma.size();
  c.delta = theta.segment(at, c.delta.size());
  return c;
}

Eigen::VectorXd design_row(const Eigen::Ref<const Eigen::VectorXd>& x_row,
                           const std::vector<int>& terms) {
  Eigen::VectorXd row(terms.size() + 1);
  row(0) = 1.0;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    const int column = terms[j];
    if (column < 0 || column >= x_row.size()) {
      throw ConfigError("covariate column " + std::to_string(column) + " out of range for row of length " +
                        std::to_string(x_row.size()));
    }
    row(static_cast<Eigen::Index>(j) + 1) = x_row(column);
  }
  return row;
}

namespace {

double predictor(const Eigen::VectorXd& coeffs, const Eigen::Ref<const Eigen::VectorXd>& x_row,
                 const std::vector<int>& terms) {
  if (!x_row.allFinite()) throw DomainError("covariate row must be finite");
  return coeffs.dot(design_row(x_row, terms));
}

double positive_scale(LinkKind link, double eta) {
  const double sigma = apply_link(link, eta);
  if (!(sigma > 0) || !std::isfinite(sigma)) {
    throw InvalidParameterError("scale link produced a non-positive or non-finite sigma (" +
                                std::to_string(sigma) + ")");
  }
  return sigma;
}

}  // namespace

GevParams<double> eval_params(const GroupCoefficients& coeffs,
                              const Eigen::Ref<const Eigen::VectorXd>& x_row,
                              const LinkSpec& spec) {
  check_dimensions(coeffs, spec, Family::Gev);
  GevParams<double> p;
  p.mu = apply_link(spec.mu_link, predictor(coeffs.kappa, x_row, spec.mu_terms));
  p.sigma = positive_scale(spec.sigma_link, predictor(coeffs.gamma, x_row, spec.sigma_terms));
  p.xi = apply_link(spec.xi_link, predictor(coeffs.delta, x_row, spec.xi_terms));
  return p;
}

GpParams<double> eval_gp_params(const GroupCoefficients& coeffs,
                                const Eigen::Ref<const Eigen::VectorXd>& x_row,
                                const LinkSpec& spec) {
  check_dimensions(coeffs, spec, Family::Gp);
  GpParams<double> p;
  p.sigma = positive_scale(spec.sigma_link, predictor(coeffs.gamma, x_row, spec.sigma_terms));
  p.xi = apply_link(spec.xi_link, predictor(coeffs.delta, x_row, spec.xi_terms));
  return p;
}

}  // namespace expanel
