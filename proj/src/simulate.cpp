#include "expanel/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "expanel/errors.hpp"
#include "expanel/gev.hpp"
#include "expanel/parallel.hpp"
#include "expanel/selection.hpp"

namespace expanel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Positive stable variate with Laplace transform exp(-s^index), 0 < index <= 1
// (Kanter's representation).
double positive_stable(double index, Rng& rng) {
  if (index >= 1.0) return 1.0;
  const double v = std::numbers::pi * rng.uniform();
  const double e = rng.exponential();
  return std::sin(index * v) / std::pow(std::sin(v), 1.0 / index) *
         std::pow(std::sin((1.0 - index) * v) / e, (1.0 - index) / index);
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void CopulaSpec::validate() const {
  if (kind == Kind::Gaussian && !(rho >= 0.0 && rho < 1.0))
    throw ConfigError("Gaussian copula correlation must lie in [0, 1)");
  if (kind == Kind::Gumbel && !(alpha >= 1.0 && std::isfinite(alpha)))
    throw ConfigError("Gumbel copula parameter must be >= 1");
}

std::string CopulaSpec::name() const {
  switch (kind) {
    case Kind::Gaussian: return "gaussian";
    case Kind::Gumbel: return "gumbel";
    default: return "independence";
  }
}

void DgpConfig::validate() const {
  copula.validate();
  if (groups.empty()) throw ConfigError("DGP needs at least one group");
  if (n_individuals < n_groups()) throw ConfigError("DGP needs N >= number of groups");
  if (n_periods < 1) throw ConfigError("DGP needs T >= 1");
  if (!(covariates.nu_f > 0) || !(covariates.nu_i > 0))
    throw ConfigError("covariate variances must be positive");
  if (!(u_lower < u_upper)) throw ConfigError("uniform covariate bounds must satisfy lower < upper");
}

DgpConfig DgpConfig::benchmark(int n_periods, CopulaSpec copula, std::uint64_t seed) {
  DgpConfig c;
  c.groups = {
      {3.10, 2.40, 2.00, -0.05, 0.10, 0.17, 0.30},
      {3.40, 1.40, 1.00, -0.15, 0.06, 0.07, 0.27},
      {3.20, 1.10, 0.50, -0.20, 0.04, 0.02, 0.24},
      {3.10, 1.70, 1.50, -0.10, 0.08, 0.12, 0.20},
  };
  c.copula = copula;
  c.n_periods = n_periods;
  c.seed = seed;
  return c;
}

LinkSpec dgp_link_spec() {
  LinkSpec spec;
  spec.mu_link = LinkKind::Identity;
  spec.sigma_link = LinkKind::Exp;
  spec.xi_link = LinkKind::Identity;
  spec.mu_terms = {0, 1};
  spec.sigma_terms = {0, 1};
  return spec;
}

GroupAssignment dgp_assignment(const DgpConfig& config) {
  config.validate();
  const int g0 = config.n_groups();
  const int block = config.n_individuals / g0;
  GroupAssignment tau{std::vector<int>(static_cast<std::size_t>(config.n_individuals)), g0};
  for (int i = 0; i < config.n_individuals; ++i)
    tau.labels[static_cast<std::size_t>(i)] = std::min(i / block, g0 - 1);
  return tau;
}

std::vector<GroupCoefficients> dgp_coefficients(const DgpConfig& config) {
  std::vector<GroupCoefficients> out;
  for (const auto& g : config.groups) {
    GroupCoefficients c;
    c.kappa = Eigen::Vector3d(g.kappa0, g.kappa1, g.kappa2);
    c.gamma = Eigen::Vector3d(g.gamma0, g.gamma1, g.gamma2);
    c.delta = Eigen::VectorXd::Constant(1, g.delta0);
    out.push_back(std::move(c));
  }
  return out;
}

Eigen::VectorXd sample_copula(const CopulaSpec& spec, int n, Rng& rng) {
  spec.validate();
  Eigen::VectorXd u(n);
  switch (spec.kind) {
    case CopulaSpec::Kind::Independence:
      for (int i = 0; i < n; ++i) u(i) = rng.uniform();
      break;
    case CopulaSpec::Kind::Gaussian: {
      // One-factor form of the equicorrelated normal.
      const double common = std::sqrt(spec.rho) * rng.normal();
      const double own = std::sqrt(1.0 - spec.rho);
      for (int i = 0; i < n; ++i) u(i) = normal_cdf(common + own * rng.normal());
      break;
    }
    case CopulaSpec::Kind::Gumbel: {
      const double index = 1.0 / spec.alpha;
      const double s = positive_stable(index, rng);
      for (int i = 0; i < n; ++i) u(i) = std::exp(-std::pow(rng.exponential() / s, index));
      break;
    }
  }
  // Keep draws strictly inside (0, 1) for the quantile transform.
  constexpr double lo = std::numeric_limits<double>::min();
  return u.cwiseMax(lo).cwiseMin(1.0 - std::numeric_limits<double>::epsilon() / 2);
}

std::vector<Eigen::MatrixXd> simulate_covariates(const DgpConfig& config, Rng& rng) {
  config.validate();
  const int n = config.n_individuals;
  const int t_len = config.n_periods;
  const auto& cp = config.covariates;
  const double trend = cp.lambda / t_len;
  const double sd_f = std::sqrt(cp.nu_f);
  const double sd_i = std::sqrt(cp.nu_i);

  Eigen::VectorXd factor(t_len);
  for (int t = 0; t < t_len; ++t) factor(t) = sd_f * rng.normal();

  std::vector<Eigen::MatrixXd> x(static_cast<std::size_t>(n), Eigen::MatrixXd(t_len, 2));
  for (int i = 0; i < n; ++i) {
    auto& xi = x[static_cast<std::size_t>(i)];
    for (int t = 0; t < t_len; ++t)
      xi(t, 0) = cp.omega + trend * (t + 1) + cp.beta * factor(t) + sd_i * rng.normal();
  }
  for (int i = 0; i < n; ++i)
    x[static_cast<std::size_t>(i)].col(1).setConstant(rng.uniform(config.u_lower, config.u_upper));
  return x;
}

SimulatedPanel simulate_panel(const DgpConfig& config, Rng& rng) {
  config.validate();
  const int n = config.n_individuals;
  const int t_len = config.n_periods;
  SimulatedPanel out;
  out.assignment = dgp_assignment(config);
  out.coefficients = dgp_coefficients(config);
  const LinkSpec spec = dgp_link_spec();

  std::vector<Eigen::MatrixXd> x = simulate_covariates(config, rng);
  Eigen::MatrixXd y(n, t_len);
  out.true_q99.resize(n, t_len);
  for (int t = 0; t < t_len; ++t) {
    const Eigen::VectorXd u = sample_copula(config.copula, n, rng);
    for (int i = 0; i < n; ++i) {
      const auto& c = out.coefficients[static_cast<std::size_t>(out.assignment.labels[static_cast<std::size_t>(i)])];
      const GevParams<double> p = eval_params(c, x[static_cast<std::size_t>(i)].row(t).transpose(), spec);
      y(i, t) = gev_quantile(u(i), p);
      out.true_q99(i, t) = gev_quantile(0.99, p);
    }
  }
  out.data = PanelData(std::move(y), std::move(x), {"x1", "x2"});
  return out;
}

SimulatedPanel simulate_panel(const DgpConfig& config) {
  Rng rng(config.seed);
  return simulate_panel(config, rng);
}

StudySummary run_study(const DgpConfig& config, int g_max, int n_reps, const EmOptions& opts,
                       int threads) {
  config.validate();
  if (n_reps < 1) throw ConfigError("number of replications must be >= 1");
  if (g_max < 1 || g_max > config.n_individuals) throw ConfigError("g_max must lie in [1, N]");
  const int g0 = config.n_groups();
  const LinkSpec spec = dgp_link_spec();

  StudySummary summary;
  summary.config = config;
  summary.g_max = g_max;
  summary.n_replications = n_reps;
  summary.replications.resize(static_cast<std::size_t>(n_reps));

  parallel_for(n_reps, threads, [&](int r) {
    ReplicationRecord& rec = summary.replications[static_cast<std::size_t>(r)];
    rec.replication = r;
    rec.bic.assign(static_cast<std::size_t>(g_max), kNaN);
    rec.mrae.assign(static_cast<std::size_t>(g_max), kNaN);
    rec.rand_at_true_g = kNaN;
    rec.mrae_selected = kNaN;
    try {
      Rng rng(config.seed, static_cast<std::uint64_t>(r));
      const SimulatedPanel sim = simulate_panel(config, rng);
      EmOptions rep_opts = opts;
      rep_opts.seed = mix(opts.seed ^ mix(config.seed + static_cast<std::uint64_t>(r)));
      rep_opts.threads = 1;
      rep_opts.compute_covariance = false;
      const SweepResult sweep = select_groups(sim.data, spec, g_max, rep_opts);
      rec.g_star = sweep.g_star;
      for (const auto& e : sweep.entries) {
        if (e.failed) continue;
        const auto k = static_cast<std::size_t>(e.n_groups - 1);
        rec.bic[k] = e.bic;
        const Eigen::MatrixXd q = conditional_quantiles(sim.data, e.fit.result.coefficients,
                                                        e.fit.result.assignment, spec, 0.99);
        rec.mrae[k] = mrae(sim.true_q99, q);
        if (e.n_groups == g0) rec.rand_at_true_g = rand_index(e.fit.result.assignment, sim.assignment);
      }
      rec.mrae_selected = rec.mrae[static_cast<std::size_t>(sweep.g_star - 1)];
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.failure = e.what();
    }
  });

  summary.selection_fraction.assign(static_cast<std::size_t>(g_max), 0.0);
  std::vector<std::vector<double>> per_g(static_cast<std::size_t>(g_max));
  std::vector<double> selected, rands;
  int ok = 0;
  for (const auto& rec : summary.replications) {
    if (rec.failed) {
      ++summary.n_failed;
      continue;
    }
    ++ok;
    summary.selection_fraction[static_cast<std::size_t>(rec.g_star - 1)] += 1.0;
    for (int g = 0; g < g_max; ++g) per_g[static_cast<std::size_t>(g)].push_back(rec.mrae[static_cast<std::size_t>(g)]);
    selected.push_back(rec.mrae_selected);
    if (!std::isnan(rec.rand_at_true_g)) rands.push_back(rec.rand_at_true_g);
  }
  for (auto& f : summary.selection_fraction) f = ok > 0 ? f / ok : kNaN;
  summary.fraction_selecting_true_g =
      g0 <= g_max ? summary.selection_fraction[static_cast<std::size_t>(g0 - 1)] : 0.0;
  summary.mean_rand = rands.empty() ? kNaN : [&] {
    double s = 0.0;
    for (double v : rands) s += v;
    return s / static_cast<double>(rands.size());
  }();
  for (const auto& v : per_g) summary.median_mrae.push_back(median(v));
  summary.median_mrae_selected = median(selected);
  return summary;
}

}  // namespace expanel
