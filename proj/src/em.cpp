#include "expanel/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "expanel/errors.hpp"
#include "expanel/parallel.hpp"
#include "expanel/random.hpp"

namespace expanel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct ChainOutcome {
  EmTrace trace;
  std::vector<GroupCoefficients> coefficients;
  GroupAssignment assignment;
  double loglik = kNegInf;
  int iterations = 0;
  bool converged = false;
};

GroupAssignment random_assignment(int n, int g, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  GroupAssignment tau{std::vector<int>(static_cast<std::size_t>(n), 0), g};
  for (int k = 0; k < n; ++k) {
    const int i = order[static_cast<std::size_t>(k)];
    tau.labels[static_cast<std::size_t>(i)] = k < g ? k : rng.uniform_int(g);
  }
  return tau;
}

int count_changes(const GroupAssignment& a, const GroupAssignment& b) {
  int changes = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) changes += a.labels[i] != b.labels[i];
  return changes;
}

// Removes group `g`, shifting higher labels down.
void drop_group(int g, GroupAssignment& tau, std::vector<GroupCoefficients>& coeffs,
                std::vector<Eigen::MatrixXd>& hessians, std::vector<int>& reseeds) {
  for (int& label : tau.labels)
    if (label > g) --label;
  coeffs.erase(coeffs.begin() + g);
  hessians.erase(hessians.begin() + g);
  reseeds.erase(reseeds.begin() + g);
  --tau.n_groups;
}

// Empty groups take the worst-fitting individual of a group with at least two
// members, inheriting that group's coefficients so the objective is unchanged.
// A group that empties a second time is dropped.
void repair_empty_groups(const ObservationSet& obs, GroupAssignment& tau,
                         std::vector<GroupCoefficients>& coeffs,
                         std::vector<Eigen::MatrixXd>& hessians, std::vector<int>& reseeds,
                         EmTrace& trace) {
  for (int g = 0; g < tau.n_groups;) {
    if (tau.size(g) > 0) {
      ++g;
      continue;
    }
    int donor_individual = -1;
    double worst = std::numeric_limits<double>::infinity();
    if (reseeds[static_cast<std::size_t>(g)] == 0) {
      for (int i = 0; i < obs.n_individuals(); ++i) {
        const int h = tau.labels[static_cast<std::size_t>(i)];
        if (tau.size(h) < 2) continue;
        const double ll = obs.loglik(i, flatten(coeffs[static_cast<std::size_t>(h)]));
        if (ll < worst) {
          worst = ll;
          donor_individual = i;
        }
      }
    }
    if (donor_individual < 0) {
      trace.notes.push_back("group " + std::to_string(g + 1) + " emptied and was dropped");
      drop_group(g, tau, coeffs, hessians, reseeds);
      continue;
    }
    const int donor_group = tau.labels[static_cast<std::size_t>(donor_individual)];
    tau.labels[static_cast<std::size_t>(donor_individual)] = g;
    coeffs[static_cast<std::size_t>(g)] = coeffs[static_cast<std::size_t>(donor_group)];
    hessians[static_cast<std::size_t>(g)] = hessians[static_cast<std::size_t>(donor_group)];
    ++reseeds[static_cast<std::size_t>(g)];
    trace.notes.push_back("group " + std::to_string(g + 1) + " reseeded with individual " +
                          std::to_string(donor_individual + 1));
    ++g;
  }
}

// The previous coefficients, unless the heuristic start already fits the
// current members better.
std::optional<GroupCoefficients> m_step_start(const ObservationSet& obs, std::span<const int> members,
                                              const std::optional<GroupCoefficients>& previous) {
  if (!previous) return std::nullopt;
  const double cold = obs.loglik(members, flatten(heuristic_start(obs, members)));
  if (cold > obs.loglik(members, flatten(*previous))) return std::nullopt;
  return previous;
}

ChainOutcome run_chain(const ObservationSet& obs, int n_groups, const EmOptions& opts, int chain) {
  ChainOutcome out;
  Rng rng(opts.seed, static_cast<std::uint64_t>(chain));
  GroupAssignment tau = random_assignment(obs.n_individuals(), n_groups, rng);
  std::vector<std::optional<GroupCoefficients>> warm(static_cast<std::size_t>(n_groups));
  std::vector<Eigen::MatrixXd> hessians(static_cast<std::size_t>(n_groups));
  std::vector<int> reseeds(static_cast<std::size_t>(n_groups), 0);
  double previous = kNegInf;

  try {
    for (int iter = 1; iter <= opts.max_em_iterations; ++iter) {
      out.iterations = iter;
      std::vector<GroupCoefficients> coeffs;
      OptimOptions optim = opts.optim;
      for (int g = 0; g < tau.n_groups; ++g) {
        const auto members = tau.members(g);
        const auto start = m_step_start(obs, members, warm[static_cast<std::size_t>(g)]);
        optim.simplex_stage = start ? false : opts.optim.simplex_stage;
        QmlFit f = fit_group(obs, members, start, optim,
                             start ? &hessians[static_cast<std::size_t>(g)] : nullptr);
        coeffs.push_back(std::move(f.coefficients));
        hessians[static_cast<std::size_t>(g)] = std::move(f.inverse_hessian);
      }

      std::vector<int> unassignable;
      GroupAssignment next = assign_groups(obs, coeffs, &unassignable);
      for (int i : unassignable)
        out.trace.notes.push_back("iteration " + std::to_string(iter) + ": individual " +
                                  std::to_string(i + 1) + " has zero likelihood under every group");
      repair_empty_groups(obs, next, coeffs, hessians, reseeds, out.trace);

      const double ll = total_loglik(obs, coeffs, next);
      const int changes =
          next.n_groups == tau.n_groups ? count_changes(tau, next) : obs.n_individuals();
      out.trace.loglik.push_back(ll);
      out.trace.assignment_changes.push_back(changes);
      out.coefficients = coeffs;
      out.assignment = next;
      out.loglik = ll;
      tau = next;
      warm.assign(coeffs.begin(), coeffs.end());

      if (changes == 0 || ll - previous < opts.loglik_tolerance) {
        out.converged = true;
        break;
      }
      previous = ll;
    }
  } catch (const std::exception& e) {
    out.trace.failed = true;
    out.trace.failure = e.what();
    out.loglik = kNegInf;
  }
  if (!out.trace.failed && !std::isfinite(out.loglik)) {
    out.trace.failed = true;
    out.trace.failure = "chain ended with zero likelihood";
  }
  return out;
}

}  // namespace

void EmOptions::validate() const {
  if (max_em_iterations < 1) throw ConfigError("max_em_iterations must be >= 1");
  if (n_restarts < 1) throw ConfigError("n_restarts must be >= 1");
  if (!(loglik_tolerance >= 0)) throw ConfigError("loglik_tolerance must be >= 0");
}

GroupAssignment assign_groups(const ObservationSet& obs, const std::vector<GroupCoefficients>& coeffs,
                              std::vector<int>* unassignable) {
  if (coeffs.empty()) throw ConfigError("assign_groups needs at least one group");
  const Eigen::MatrixXd ll = individual_logliks(obs, coeffs);
  GroupAssignment tau{std::vector<int>(static_cast<std::size_t>(obs.n_individuals()), 0),
                      static_cast<int>(coeffs.size())};
  for (int i = 0; i < obs.n_individuals(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index g = 1; g < ll.cols(); ++g)
      if (ll(i, g) > ll(i, best)) best = g;
    if (std::isfinite(ll(i, best))) {
      tau.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
      continue;
    }
    // Zero likelihood everywhere: fall back to the group covering most cells.
    const auto& block = obs.block(i);
    int best_group = 0;
    long best_count = -1;
    for (std::size_t g = 0; g < coeffs.size(); ++g) {
      const Eigen::VectorXd theta = flatten(coeffs[g]);
      long count = 0;
      for (Eigen::Index r = 0; r < block.size(); ++r) {
        IndividualBlock cell;
        cell.response = block.response.segment(r, 1);
        cell.period = block.period.segment(r, 1);
        if (obs.family() == Family::Gev) cell.mu_design = block.mu_design.middleRows(r, 1);
        cell.sigma_design = block.sigma_design.middleRows(r, 1);
        cell.xi_design = block.xi_design.middleRows(r, 1);
        const ObservationSet one(obs.family(), obs.spec(), 1, {cell});
        count += std::isfinite(one.loglik(0, theta));
      }
      if (count > best_count) {
        best_count = count;
        best_group = static_cast<int>(g);
      }
    }
    tau.labels[static_cast<std::size_t>(i)] = best_group;
    if (unassignable) unassignable->push_back(i);
  }
  return tau;
}

GroupAssignment assign_groups(const PanelData& data, const std::vector<GroupCoefficients>& coeffs,
                              const LinkSpec& spec) {
  return assign_groups(ObservationSet::from_panel(data, spec), coeffs);
}

EmStep em_step(const ObservationSet& obs, const std::vector<GroupCoefficients>& coeffs,
               const GroupAssignment& tau, const OptimOptions& optim) {
  tau.validate(obs.n_individuals());
  OptimOptions warm = optim;
  warm.simplex_stage = false;
  EmStep step;
  for (int g = 0; g < tau.n_groups; ++g) {
    const auto members = tau.members(g);
    const auto start = m_step_start(obs, members, coeffs.at(static_cast<std::size_t>(g)));
    step.coefficients.push_back(fit_group(obs, members, start, start ? warm : optim).coefficients);
  }
  step.assignment = assign_groups(obs, step.coefficients);
  step.loglik = total_loglik(obs, step.coefficients, step.assignment);
  step.assignment_changes = count_changes(tau, step.assignment);
  return step;
}

FitResult canonicalize_labels(const FitResult& result) {
  const int g = result.assignment.n_groups;
  std::vector<int> first(static_cast<std::size_t>(g), std::numeric_limits<int>::max());
  for (std::size_t i = 0; i < result.assignment.labels.size(); ++i) {
    int& f = first[static_cast<std::size_t>(result.assignment.labels[i])];
    f = std::min(f, static_cast<int>(i));
  }
  std::vector<int> order(static_cast<std::size_t>(g));  // order[new] = old
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return first[static_cast<std::size_t>(a)] < first[static_cast<std::size_t>(b)];
  });
  std::vector<int> relabel(static_cast<std::size_t>(g));  // relabel[old] = new
  for (int k = 0; k < g; ++k) relabel[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = k;

  FitResult out = result;
  for (std::size_t i = 0; i < out.assignment.labels.size(); ++i)
    out.assignment.labels[i] = relabel[static_cast<std::size_t>(result.assignment.labels[i])];
  auto permute = [&](auto& target, const auto& source) {
    if (source.size() != static_cast<std::size_t>(g)) return;
    for (int k = 0; k < g; ++k)
      target[static_cast<std::size_t>(k)] = source[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
  };
  permute(out.coefficients, result.coefficients);
  permute(out.covariance, result.covariance);
  permute(out.std_errors, result.std_errors);
  return out;
}

void attach_covariance(const ObservationSet& obs, FitResult& result) {
  result.covariance.assign(static_cast<std::size_t>(result.n_groups()), Eigen::MatrixXd());
  result.std_errors.assign(static_cast<std::size_t>(result.n_groups()), Eigen::VectorXd());
  for (int g = 0; g < result.n_groups(); ++g) {
    const auto members = result.assignment.members(g);
    try {
      const SandwichParts parts =
          group_sandwich(obs, members, flatten(result.coefficients[static_cast<std::size_t>(g)]));
      result.covariance[static_cast<std::size_t>(g)] = parts.covariance;
      result.std_errors[static_cast<std::size_t>(g)] = parts.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    } catch (const std::exception& e) {
      result.diagnostics.push_back("group " + std::to_string(g + 1) + ": covariance unavailable: " +
                                   e.what());
    }
  }
}

EmFit em_fit(const ObservationSet& obs, int n_groups, const EmOptions& opts) {
  opts.validate();
  if (n_groups < 1) throw ConfigError("number of groups must be >= 1");
  if (n_groups > obs.n_individuals())
    throw ConfigError("number of groups (" + std::to_string(n_groups) +
                      ") exceeds the number of individuals (" + std::to_string(obs.n_individuals()) + ")");

  // With one group every restart would run the same deterministic fit.
  const int chains = n_groups == 1 ? 1 : opts.n_restarts;
  std::vector<ChainOutcome> outcomes(static_cast<std::size_t>(chains));
  parallel_for(chains, opts.threads, [&](int c) {
    outcomes[static_cast<std::size_t>(c)] = run_chain(obs, n_groups, opts, c);
  });

  int best = -1;
  for (int c = 0; c < chains; ++c) {
    const auto& o = outcomes[static_cast<std::size_t>(c)];
    if (o.trace.failed) continue;
    if (best < 0 || o.loglik > outcomes[static_cast<std::size_t>(best)].loglik) best = c;
  }
  if (best < 0) {
    throw FitError("all " + std::to_string(chains) + " EM chains failed; first failure: " +
                   outcomes.front().trace.failure);
  }

  const auto& winner = outcomes[static_cast<std::size_t>(best)];
  EmFit fit;
  fit.best_chain = best;
  fit.result.family = obs.family();
  fit.result.spec = obs.spec();
  fit.result.coefficients = winner.coefficients;
  fit.result.assignment = winner.assignment;
  fit.result.loglik = winner.loglik;
  fit.result.n_iterations = winner.iterations;
  fit.result.converged = winner.converged;
  fit.result.diagnostics = winner.trace.notes;
  if (winner.assignment.n_groups < n_groups) {
    fit.result.diagnostics.push_back("realized " + std::to_string(winner.assignment.n_groups) +
                                     " non-empty groups of " + std::to_string(n_groups) + " requested");
  }
  if (opts.compute_covariance) attach_covariance(obs, fit.result);
  fit.result = canonicalize_labels(fit.result);
  fit.trace = winner.trace;
  for (auto& o : outcomes) fit.chains.push_back(std::move(o.trace));
  return fit;
}

EmFit em_fit(const PanelData& data, int n_groups, const LinkSpec& spec, const EmOptions& opts) {
  return em_fit(ObservationSet::from_panel(data, spec), n_groups, opts);
}

}  // namespace expanel
