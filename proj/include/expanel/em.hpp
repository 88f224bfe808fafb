#pragma once

// Hard-assignment EM for the grouped panel model: alternate per-group QML
// fits (maximization) with reassignment of each individual to the group
// under which its data are most likely, over several random restarts.

#include <cstdint>
#include <string>
#include <vector>

#include "expanel/observations.hpp"
#include "expanel/optim.hpp"
#include "expanel/panel.hpp"

namespace expanel {

struct EmOptions {
  int max_em_iterations = 100;
  int n_restarts = 100;
  std::uint64_t seed = 0;
  double loglik_tolerance = 1e-6;
  // Cold M-steps start from a heuristic point; the quasi-Newton stage alone
  // is enough there and keeps restarts cheap.
  OptimOptions optim{.simplex_stage = false};
  int threads = 1;  // concurrent restart chains
  bool compute_covariance = true;

  void validate() const;
};

/// One restart chain. loglik[j] is the objective after maximization and
/// reassignment at iteration j.
struct EmTrace {
  std::vector<double> loglik;
  std::vector<int> assignment_changes;
  std::vector<std::string> notes;  // reseeded groups, unassignable individuals
  bool failed = false;
  std::string failure;
};

struct EmFit {
  FitResult result;
  EmTrace trace;                // trace of the winning chain
  std::vector<EmTrace> chains;  // every chain, in chain order
  int best_chain = 0;
};

EmFit em_fit(const PanelData& data, int n_groups, const LinkSpec& spec, const EmOptions& opts = {});

/// Family-agnostic entry point used by both the GEV and GP panels.
EmFit em_fit(const ObservationSet& obs, int n_groups, const EmOptions& opts);

/// tau_i = argmax_g loglik_i(group g), ties to the smallest label. Individuals
/// with zero likelihood under every group go to the group with most
/// in-support cells and are listed in `unassignable` when given.
GroupAssignment assign_groups(const ObservationSet& obs, const std::vector<GroupCoefficients>& coeffs,
                              std::vector<int>* unassignable = nullptr);
GroupAssignment assign_groups(const PanelData& data, const std::vector<GroupCoefficients>& coeffs,
                              const LinkSpec& spec);

struct EmStep {
  std::vector<GroupCoefficients> coefficients;
  GroupAssignment assignment;
  double loglik = 0;  // after reassignment
  int assignment_changes = 0;
};

/// One maximization + reassignment pass warm-started at `coeffs`, or at the
/// heuristic start for a group whose members it fits better.
EmStep em_step(const ObservationSet& obs, const std::vector<GroupCoefficients>& coeffs,
               const GroupAssignment& tau, const OptimOptions& optim = {});

/// Relabel groups by increasing index of their first member, permuting
/// coefficients and covariances to match.
FitResult canonicalize_labels(const FitResult& result);

/// Fill covariance and standard errors from the sandwich estimator; groups
/// where it fails get an empty matrix and a diagnostic.
void attach_covariance(const ObservationSet& obs, FitResult& result);

}  // namespace expanel
