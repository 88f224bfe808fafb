#include "expanel/observations.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "expanel/errors.hpp"
#include "expanel/gev.hpp"

namespace expanel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::MatrixXd design_matrix(const Eigen::MatrixXd& x, const std::vector<int>& rows,
                              const std::vector<int>& terms) {
  Eigen::MatrixXd d(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(terms.size()) + 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    d(static_cast<Eigen::Index>(r), 0) = 1.0;
    for (std::size_t j = 0; j < terms.size(); ++j)
      d(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j) + 1) = x(rows[r], terms[j]);
  }
  return d;
}

// Per-response derivatives of the log-density with respect to the three
// linear predictors, filled by evaluate().
struct PredictorGradients {
  Eigen::VectorXd mu, sigma, xi;
};

// Shared worker: log-likelihood of one block, optionally with per-response
// derivatives along each linear predictor.
double evaluate(Family family, const LinkSpec& spec, const IndividualBlock& block,
                const Eigen::VectorXd& theta, PredictorGradients* out) {
  const Eigen::Index n = block.size();
  if (n == 0) return 0.0;
  const Eigen::Index km = block.mu_design.cols();
  const Eigen::Index kg = block.sigma_design.cols();
  const Eigen::Index kd = block.xi_design.cols();

  const Eigen::VectorXd eta_sigma = block.sigma_design * theta.segment(km, kg);
  const Eigen::VectorXd eta_xi = block.xi_design * theta.segment(km + kg, kd);
  Eigen::VectorXd eta_mu;
  if (family == Family::Gev) eta_mu = block.mu_design * theta.segment(0, km);

  if (out) {
    out->mu.resize(family == Family::Gev ? n : 0);
    out->sigma.resize(n);
    out->xi.resize(n);
  }

  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double sigma = apply_link(spec.sigma_link, eta_sigma(r));
    const double xi = apply_link(spec.xi_link, eta_xi(r));
    if (!(sigma > 0) || !std::isfinite(sigma) || !std::isfinite(xi)) return kNegInf;
    if (family == Family::Gev) {
      const double mu = apply_link(spec.mu_link, eta_mu(r));
      if (!std::isfinite(mu)) return kNegInf;
      const auto d = gev_logpdf_grad(block.response(r), GevParams<double>{mu, sigma, xi});
      if (!std::isfinite(d.value)) return kNegInf;
      total += d.value;
      if (out) {
        out->mu(r) = d.d_mu * link_slope(spec.mu_link, mu);
        out->sigma(r) = d.d_sigma * link_slope(spec.sigma_link, sigma);
        out->xi(r) = d.d_xi * link_slope(spec.xi_link, xi);
      }
    } else {
      const auto d = gp_logpdf_grad(block.response(r), GpParams<double>{sigma, xi});
      if (!std::isfinite(d.value)) return kNegInf;
      total += d.value;
      if (out) {
        out->sigma(r) = d.d_sigma * link_slope(spec.sigma_link, sigma);
        out->xi(r) = d.d_xi * link_slope(spec.xi_link, xi);
      }
    }
  }
  return total;
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

ObservationSet::ObservationSet(Family family, LinkSpec spec, int n_periods,
                               std::vector<IndividualBlock> blocks)
    : family_(family),
      spec_(std::move(spec)),
      n_periods_(n_periods),
      n_parameters_(coefficient_count(spec_, family)),
      blocks_(std::move(blocks)) {
  for (const auto& b : blocks_) {
    const bool ok = b.period.size() == b.size() && b.sigma_design.rows() == b.size() &&
                    b.xi_design.rows() == b.size() &&
                    b.sigma_design.cols() == static_cast<Eigen::Index>(spec_.sigma_terms.size()) + 1 &&
                    b.xi_design.cols() == static_cast<Eigen::Index>(spec_.xi_terms.size()) + 1 &&
                    (family_ == Family::Gp
                         ? b.mu_design.cols() == 0
                         : b.mu_design.rows() == b.size() &&
                               b.mu_design.cols() == static_cast<Eigen::Index>(spec_.mu_terms.size()) + 1);
    if (!ok) throw ConfigError("observation block dimensions do not match the link spec");
  }
}

ObservationSet ObservationSet::from_panel(const PanelData& data, const LinkSpec& spec) {
  spec.validate(data.n_covariates());
  std::vector<IndividualBlock> blocks;
  blocks.reserve(static_cast<std::size_t>(data.n_individuals()));
  for (int i = 0; i < data.n_individuals(); ++i) {
    std::vector<int> rows;
    for (int t = 0; t < data.n_periods(); ++t)
      if (!data.missing(i, t)) rows.push_back(t);
    IndividualBlock b;
    b.response.resize(static_cast<Eigen::Index>(rows.size()));
    b.period.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      b.response(static_cast<Eigen::Index>(r)) = data.y(i, rows[r]);
      b.period(static_cast<Eigen::Index>(r)) = rows[r];
    }
    const auto& x = data.covariates(i);
    b.mu_design = design_matrix(x, rows, spec.mu_terms);
    b.sigma_design = design_matrix(x, rows, spec.sigma_terms);
    b.xi_design = design_matrix(x, rows, spec.xi_terms);
    blocks.push_back(std::move(b));
  }
  return ObservationSet(Family::Gev, spec, data.n_periods(), std::move(blocks));
}

long ObservationSet::n_observations() const {
  long n = 0;
  for (const auto& b : blocks_) n += static_cast<long>(b.size());
  return n;
}

long ObservationSet::n_observations(std::span<const int> members) const {
  long n = 0;
  for (int i : members) n += static_cast<long>(block(i).size());
  return n;
}

double ObservationSet::loglik(int i, const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  const auto& b = block(i);
  if (!grad) return evaluate(family_, spec_, b, theta, nullptr);
  PredictorGradients d;
  const double value = evaluate(family_, spec_, b, theta, &d);
  if (!std::isfinite(value) || b.size() == 0) return value;
  const Eigen::Index km = b.mu_design.cols();
  const Eigen::Index kg = b.sigma_design.cols();
  const Eigen::Index kd = b.xi_design.cols();
  if (km > 0) grad->segment(0, km).noalias() += b.mu_design.transpose() * d.mu;
  grad->segment(km, kg).noalias() += b.sigma_design.transpose() * d.sigma;
  grad->segment(km + kg, kd).noalias() += b.xi_design.transpose() * d.xi;
  return value;
}

double ObservationSet::loglik(std::span<const int> members, const Eigen::VectorXd& theta,
                              Eigen::VectorXd* grad) const {
  if (grad) grad->setZero(n_parameters_);
  double total = 0.0;
  for (int i : members) {
    total += loglik(i, theta, grad);
    if (!std::isfinite(total)) return kNegInf;
  }
  return total;
}

Eigen::MatrixXd ObservationSet::cell_scores(int i, const Eigen::VectorXd& theta) const {
  const auto& b = block(i);
  PredictorGradients d;
  const double value = evaluate(family_, spec_, b, theta, &d);
  if (!std::isfinite(value)) {
    throw DomainError("score requested at a point where an observation of individual " +
                      std::to_string(i) + " has zero likelihood");
  }
  Eigen::MatrixXd scores(b.size(), n_parameters_);
  const Eigen::Index km = b.mu_design.cols();
  const Eigen::Index kg = b.sigma_design.cols();
  const Eigen::Index kd = b.xi_design.cols();
  if (km > 0) scores.leftCols(km) = b.mu_design.array().colwise() * d.mu.array();
  scores.middleCols(km, kg) = b.sigma_design.array().colwise() * d.sigma.array();
  scores.rightCols(kd) = b.xi_design.array().colwise() * d.xi.array();
  return scores;
}

GroupCoefficients heuristic_start(const ObservationSet& obs, std::span<const int> members) {
  std::vector<double> values;
  for (int i : members) {
    const auto& r = obs.block(i).response;
    values.insert(values.end(), r.data(), r.data() + r.size());
  }
  const LinkSpec& spec = obs.spec();
  GroupCoefficients c = zero_coefficients(spec, obs.family());
  if (values.empty()) return c;

  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  double sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  if (!(sd > 0)) sd = std::max(std::abs(mean), 1.0);

  double scale = 0.78 * sd;
  if (obs.family() == Family::Gev) {
    const double m = median(values);
    c.kappa(0) = spec.mu_link == LinkKind::Exp ? std::log(std::max(m, 1e-6)) : m;
  } else {
    // Exponential maximum likelihood for the excesses.
    scale = mean > 0 ? mean : scale;
  }
  c.gamma(0) = spec.sigma_link == LinkKind::Exp ? std::log(scale) : scale;
  c.delta(0) = spec.xi_link == LinkKind::Exp ? std::log(0.1) : 0.1;
  return c;
}

namespace {

// Shrink the shape toward zero and inflate the scale: the fallback sequence
// applied while the starting point has zero likelihood.
GroupCoefficients widen(GroupCoefficients c, const LinkSpec& spec) {
  if (spec.xi_link == LinkKind::Exp)
    c.delta(0) -= std::log(2.0);
  else
    c.delta(0) *= 0.5;
  if (spec.sigma_link == LinkKind::Exp)
    c.gamma(0) += std::log(2.0);
  else
    c.gamma(0) *= 2.0;
  return c;
}

std::optional<GroupCoefficients> feasible_start(const ObservationSet& obs,
                                                std::span<const int> members,
                                                GroupCoefficients start) {
  for (int attempt = 0; attempt <= 6; ++attempt) {
    if (std::isfinite(obs.loglik(members, flatten(start)))) return start;
    start = widen(std::move(start), obs.spec());
  }
  return std::nullopt;
}

}  // namespace

QmlFit fit_group(const ObservationSet& obs, std::span<const int> members,
                 const std::optional<GroupCoefficients>& init, const OptimOptions& opts,
                 const Eigen::MatrixXd* inverse_hessian) {
  const long n_obs = obs.n_observations(members);
  if (members.empty() || n_obs < obs.n_parameters()) {
    throw UnderdeterminedError("group has " + std::to_string(n_obs) +
                               " observations but needs at least " +
                               std::to_string(obs.n_parameters()));
  }

  std::optional<GroupCoefficients> start;
  OptimOptions run = opts;
  if (init) {
    check_dimensions(*init, obs.spec(), obs.family());
    if (std::isfinite(obs.loglik(members, flatten(*init)))) start = init;
  }
  if (!start) {
    inverse_hessian = nullptr;
    if (init) run.simplex_stage = true;
    start = feasible_start(obs, members, init ? *init : heuristic_start(obs, members));
    if (!start && init) start = feasible_start(obs, members, heuristic_start(obs, members));
  }
  if (!start) throw FitError("no starting point with positive likelihood was found");

  const double scale = 1.0 / static_cast<double>(n_obs);
  Objective objective = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
    const double ll = obs.loglik(members, theta, grad);
    if (grad) *grad *= -scale;
    return std::isfinite(ll) ? -ll * scale : std::numeric_limits<double>::infinity();
  };
  const OptimResult r = minimize(objective, flatten(*start), run, inverse_hessian);

  QmlFit fit;
  fit.coefficients = unflatten(r.x, obs.spec(), obs.family());
  fit.loglik = obs.loglik(members, r.x);
  fit.iterations = r.iterations;
  fit.converged = r.converged;
  fit.inverse_hessian = r.inverse_hessian;
  return fit;
}

Eigen::MatrixXd numerical_hessian(const ObservationSet& obs, std::span<const int> members,
                                  const Eigen::VectorXd& theta) {
  const int p = obs.n_parameters();
  Eigen::MatrixXd h(p, p);
  Eigen::VectorXd g0(p), gp(p), gm(p);
  const double f0 = obs.loglik(members, theta, &g0);
  if (!std::isfinite(f0)) throw DomainError("Hessian requested at a point of zero likelihood");
  for (int j = 0; j < p; ++j) {
    const double step = 1e-5 * (1.0 + std::abs(theta(j)));
    Eigen::VectorXd up = theta, down = theta;
    up(j) += step;
    down(j) -= step;
    const bool ok_up = std::isfinite(obs.loglik(members, up, &gp));
    const bool ok_down = std::isfinite(obs.loglik(members, down, &gm));
    if (ok_up && ok_down)
      h.col(j) = (gp - gm) / (2.0 * step);
    else if (ok_up)
      h.col(j) = (gp - g0) / step;
    else if (ok_down)
      h.col(j) = (g0 - gm) / step;
    else
      throw DomainError("Hessian stencil leaves the support in every direction");
  }
  return 0.5 * (h + h.transpose());
}

SandwichParts group_sandwich(const ObservationSet& obs, std::span<const int> members,
                             const Eigen::VectorXd& theta) {
  const int p = obs.n_parameters();
  SandwichParts parts;
  parts.hessian = numerical_hessian(obs, members, theta);

  // Scores are summed within each period before the outer product.
  Eigen::MatrixXd period_scores = Eigen::MatrixXd::Zero(obs.n_periods(), p);
  for (int i : members) {
    const Eigen::MatrixXd s = obs.cell_scores(i, theta);
    const auto& periods = obs.block(i).period;
    for (Eigen::Index r = 0; r < s.rows(); ++r) period_scores.row(periods(r)) += s.row(r);
  }
  parts.meat = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index t = 0; t < period_scores.rows(); ++t)
    parts.meat.noalias() += period_scores.row(t).transpose() * period_scores.row(t);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(parts.hessian);
  const Eigen::VectorXd magnitudes = eig.eigenvalues().cwiseAbs();
  const double largest = magnitudes.maxCoeff();
  const double smallest = magnitudes.minCoeff();
  const double condition = smallest > 0 ? largest / smallest : std::numeric_limits<double>::infinity();
  if (!std::isfinite(condition) || condition > 1e12) {
    throw NumericalRankError("group Hessian is numerically singular (condition number " +
                                 std::to_string(condition) + ")",
                             condition);
  }
  const Eigen::MatrixXd inverse = eig.eigenvectors() *
                                  eig.eigenvalues().cwiseInverse().asDiagonal() *
                                  eig.eigenvectors().transpose();
  parts.covariance = inverse * parts.meat * inverse;
  parts.covariance = 0.5 * (parts.covariance + parts.covariance.transpose()).eval();
  return parts;
}

double total_loglik(const ObservationSet& obs, const std::vector<GroupCoefficients>& coeffs,
                    const GroupAssignment& tau) {
  tau.validate(obs.n_individuals());
  if (static_cast<int>(coeffs.size()) < tau.n_groups)
    throw ConfigError("fewer coefficient sets than groups");
  std::vector<Eigen::VectorXd> thetas;
  for (const auto& c : coeffs) {
    check_dimensions(c, obs.spec(), obs.family());
    thetas.push_back(flatten(c));
  }
  double total = 0.0;
  for (int i = 0; i < obs.n_individuals(); ++i) {
    total += obs.loglik(i, thetas[static_cast<std::size_t>(tau.labels[static_cast<std::size_t>(i)])]);
    if (!std::isfinite(total)) return kNegInf;
  }
  return total;
}

Eigen::MatrixXd individual_logliks(const ObservationSet& obs,
                                   const std::vector<GroupCoefficients>& coeffs) {
  Eigen::MatrixXd out(obs.n_individuals(), static_cast<Eigen::Index>(coeffs.size()));
  for (std::size_t g = 0; g < coeffs.size(); ++g) {
    check_dimensions(coeffs[g], obs.spec(), obs.family());
    const Eigen::VectorXd theta = flatten(coeffs[g]);
    for (int i = 0; i < obs.n_individuals(); ++i)
      out(i, static_cast<Eigen::Index>(g)) = obs.loglik(i, theta);
  }
  return out;
}

}  // namespace expanel
