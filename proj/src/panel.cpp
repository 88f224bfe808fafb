#include "expanel/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "expanel/errors.hpp"
#include "expanel/observations.hpp"

namespace expanel {

PanelData::PanelData(Eigen::MatrixXd y, std::vector<Eigen::MatrixXd> x,
                     std::vector<std::string> column_names)
    : y_(std::move(y)), x_(std::move(x)), column_names_(std::move(column_names)) {
  const auto n = y_.rows();
  const auto t = y_.cols();
  if (n < 1 || t < 1) throw ConfigError("panel needs at least one individual and one period");
  if (static_cast<Eigen::Index>(x_.size()) != n)
    throw ConfigError("covariate array must have one T x K matrix per individual");
  n_covariates_ = static_cast<int>(x_.front().cols());
  for (const auto& xi : x_) {
    if (xi.rows() != t || xi.cols() != n_covariates_)
      throw ConfigError("covariate matrices must all be T x K");
  }
  if (column_names_.empty()) {
    for (int k = 0; k < n_covariates_; ++k) column_names_.push_back("x" + std::to_string(k + 1));
  }
  if (static_cast<int>(column_names_.size()) != n_covariates_)
    throw ConfigError("number of column names does not match K");

  missing_ = y_.array().isNaN();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index s = 0; s < t; ++s) {
      if (missing_(i, s)) continue;
      if (!std::isfinite(y_(i, s)))
        throw DomainError("non-missing response must be finite (individual " + std::to_string(i) + ")");
      if (!x_[static_cast<std::size_t>(i)].row(s).allFinite())
        throw DomainError("covariates of an observed cell must be finite (individual " +
                          std::to_string(i) + ", period " + std::to_string(s) + ")");
    }
  }
  std::vector<std::string> ids, periods;
  for (Eigen::Index i = 0; i < n; ++i) ids.push_back(std::to_string(i + 1));
  for (Eigen::Index s = 0; s < t; ++s) periods.push_back(std::to_string(s + 1));
  individual_ids_ = std::move(ids);
  period_labels_ = std::move(periods);
}

long PanelData::n_observed() const { return static_cast<long>((!missing_.array()).count()); }

int PanelData::column_index(const std::string& name) const {
  for (std::size_t k = 0; k < column_names_.size(); ++k)
    if (column_names_[k] == name) return static_cast<int>(k);
  return -1;
}

void PanelData::set_labels(std::vector<std::string> individual_ids,
                           std::vector<std::string> period_labels) {
  if (static_cast<int>(individual_ids.size()) != n_individuals() ||
      static_cast<int>(period_labels.size()) != n_periods())
    throw ConfigError("label vectors do not match the panel dimensions");
  individual_ids_ = std::move(individual_ids);
  period_labels_ = std::move(period_labels);
}

PanelData PanelData::subset(std::span<const int> individuals) const {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(individuals.size()), n_periods());
  std::vector<Eigen::MatrixXd> x;
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < individuals.size(); ++r) {
    const int i = individuals[r];
    if (i < 0 || i >= n_individuals()) throw ConfigError("subset index out of range");
    y.row(static_cast<Eigen::Index>(r)) = y_.row(i);
    x.push_back(x_[static_cast<std::size_t>(i)]);
    ids.push_back(individual_ids_[static_cast<std::size_t>(i)]);
  }
  PanelData out(std::move(y), std::move(x), column_names_);
  out.set_labels(std::move(ids), period_labels_);
  return out;
}

void GroupAssignment::validate(int n_individuals) const {
  if (n_groups < 1) throw ConfigError("number of groups must be at least 1");
  if (static_cast<int>(labels.size()) != n_individuals)
    throw ConfigError("assignment length " + std::to_string(labels.size()) +
                      " does not match N = " + std::to_string(n_individuals));
  for (int g : labels)
    if (g < 0 || g >= n_groups) throw ConfigError("group label out of range");
}

std::vector<int> GroupAssignment::members(int group) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == group) out.push_back(static_cast<int>(i));
  return out;
}

int GroupAssignment::size(int group) const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), group));
}

double panel_loglik(const PanelData& data, const std::vector<GroupCoefficients>& coeffs,
                    const GroupAssignment& tau, const LinkSpec& spec) {
  return total_loglik(ObservationSet::from_panel(data, spec), coeffs, tau);
}

GroupCoefficients initial_coefficients(const PanelData& data, std::span<const int> members,
                                       const LinkSpec& spec) {
  return heuristic_start(ObservationSet::from_panel(data, spec), members);
}

QmlFit fit_qml_group(const PanelData& data, std::span<const int> members, const LinkSpec& spec,
                     const std::optional<GroupCoefficients>& init, const OptimOptions& opts) {
  for (int i : members)
    if (i < 0 || i >= data.n_individuals()) throw ConfigError("member index out of range");
  return fit_group(ObservationSet::from_panel(data, spec), members, init, opts);
}

Eigen::VectorXd score_vector(const PanelData& data, const std::vector<GroupCoefficients>& coeffs,
                             const GroupAssignment& tau, const LinkSpec& spec, int i, int t) {
  tau.validate(data.n_individuals());
  if (t < 0 || t >= data.n_periods()) throw ConfigError("period index out of range");
  if (data.missing(i, t)) throw ConfigError("score requested for a missing cell");
  const auto& c = coeffs.at(static_cast<std::size_t>(tau.labels[static_cast<std::size_t>(i)]));
  check_dimensions(c, spec, Family::Gev);
  // Single-cell block: the same engine as the fits.
  IndividualBlock b;
  b.response = Eigen::VectorXd::Constant(1, data.y(i, t));
  b.period = Eigen::VectorXi::Constant(1, 0);
  const Eigen::VectorXd x = data.covariate_row(i, t);
  b.mu_design = design_row(x, spec.mu_terms).transpose();
  b.sigma_design = design_row(x, spec.sigma_terms).transpose();
  b.xi_design = design_row(x, spec.xi_terms).transpose();
  ObservationSet one(Family::Gev, spec, 1, {std::move(b)});
  return one.cell_scores(0, flatten(c)).row(0).transpose();
}

std::vector<SandwichParts> sandwich_parts(const PanelData& data,
                                          const std::vector<GroupCoefficients>& coeffs,
                                          const GroupAssignment& tau, const LinkSpec& spec) {
  tau.validate(data.n_individuals());
  const ObservationSet obs = ObservationSet::from_panel(data, spec);
  std::vector<SandwichParts> out;
  for (int g = 0; g < tau.n_groups; ++g) {
    const auto members = tau.members(g);
    check_dimensions(coeffs.at(static_cast<std::size_t>(g)), spec, Family::Gev);
    out.push_back(group_sandwich(obs, members, flatten(coeffs[static_cast<std::size_t>(g)])));
  }
  return out;
}

std::vector<Eigen::MatrixXd> sandwich_covariance(const PanelData& data,
                                                 const std::vector<GroupCoefficients>& coeffs,
                                                 const GroupAssignment& tau, const LinkSpec& spec) {
  std::vector<Eigen::MatrixXd> out;
  for (auto& parts : sandwich_parts(data, coeffs, tau, spec)) out.push_back(std::move(parts.covariance));
  return out;
}

Eigen::MatrixXd conditional_quantiles(const PanelData& data,
                                      const std::vector<GroupCoefficients>& coeffs,
                                      const GroupAssignment& tau, const LinkSpec& spec, double p) {
  tau.validate(data.n_individuals());
  Eigen::MatrixXd q(data.n_individuals(), data.n_periods());
  for (int i = 0; i < data.n_individuals(); ++i) {
    const auto& c = coeffs.at(static_cast<std::size_t>(tau.labels[static_cast<std::size_t>(i)]));
    for (int t = 0; t < data.n_periods(); ++t) {
      const Eigen::VectorXd x = data.covariate_row(i, t);
      q(i, t) = x.allFinite() ? gev_quantile(p, eval_params(c, x, spec))
                              : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return q;
}

Eigen::VectorXd exceedance_rates(const PanelData& data,
                                 const std::vector<GroupCoefficients>& coeffs,
                                 const GroupAssignment& tau, const LinkSpec& spec, double p) {
  const Eigen::MatrixXd q = conditional_quantiles(data, coeffs, tau, spec, p);
  Eigen::VectorXd rates(data.n_individuals());
  for (int i = 0; i < data.n_individuals(); ++i) {
    int observed = 0, above = 0;
    for (int t = 0; t < data.n_periods(); ++t) {
      if (data.missing(i, t)) continue;
      ++observed;
      if (data.y(i, t) > q(i, t)) ++above;
    }
    rates(i) = observed > 0 ? static_cast<double>(above) / observed
                            : std::numeric_limits<double>::quiet_NaN();
  }
  return rates;
}

}  // namespace expanel
