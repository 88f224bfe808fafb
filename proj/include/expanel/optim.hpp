#pragma once

// Unconstrained minimizers used by the QML fits. Objectives may return
// +infinity to mark infeasible points; both methods treat that as a barrier.

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace expanel {

struct OptimOptions {
  // Run a Nelder-Mead stage before the quasi-Newton stage. Fits started from a
  // heuristic point use it; warm starts inside EM skip it.
  bool simplex_stage = true;
  int max_iterations = 2000;  // per stage
  // Simplex stage stops when the spread of objective values over the simplex
  // falls below this, relative to the best value.
  double relative_tolerance = 1e-8;
  // Quasi-Newton stage stops when the largest gradient component falls below
  // this. Objectives in this library are per-observation averages.
  double gradient_tolerance = 1e-8;
};

// Value-and-gradient callback. `grad` may be null, in which case only the
// value is needed. Return +inf for infeasible points.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;
  Eigen::MatrixXd inverse_hessian;  // final quasi-Newton approximation
};

OptimResult minimize_nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                                 const OptimOptions& opts);

/// `inverse_hessian`, when given, seeds the quasi-Newton matrix in place of
/// a scaled identity.
OptimResult minimize_bfgs(const Objective& f, const Eigen::VectorXd& x0, const OptimOptions& opts,
                          const Eigen::MatrixXd* inverse_hessian = nullptr);

/// Simplex stage (if enabled) followed by the quasi-Newton polish. The result
/// is never worse than the starting point.
OptimResult minimize(const Objective& f, const Eigen::VectorXd& x0, const OptimOptions& opts,
                     const Eigen::MatrixXd* inverse_hessian = nullptr);

}  // namespace expanel
