#include "expanel/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace expanel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sanitize(double v) { return std::isnan(v) ? kInf : v; }

}  // namespace

OptimResult minimize_nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                                 const OptimOptions& opts) {
  const Eigen::Index n = x0.size();
  OptimResult out;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++out.evaluations;
    return sanitize(f(x, nullptr));
  };

  std::vector<Eigen::VectorXd> simplex(n + 1, x0);
  std::vector<double> values(n + 1);
  values[0] = eval(x0);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = x0(j) != 0.0 ? 0.1 * std::abs(x0(j)) + 0.05 : 0.1;
    simplex[j + 1](j) += step;
    values[j + 1] = eval(simplex[j + 1]);
    if (!std::isfinite(values[j + 1])) {
      // Try the other direction before accepting an infeasible vertex.
      simplex[j + 1](j) = x0(j) - step;
      values[j + 1] = eval(simplex[j + 1]);
    }
  }

  std::vector<int> order(n + 1);
  for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return values[a] < values[b]; });
    const int best = order.front();
    const int worst = order.back();
    const int second_worst = order[n - 1];
    const double spread = values[worst] - values[best];
    if (std::isfinite(spread) &&
        spread <= opts.relative_tolerance * (std::abs(values[best]) + 1e-12)) {
      out.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int k = 0; k <= n; ++k)
      if (k != worst) centroid += simplex[k];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + (centroid - simplex[worst]);
    const double f_reflected = eval(reflected);
    if (f_reflected < values[best]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double f_expanded = eval(expanded);
      if (f_expanded < f_reflected) {
        simplex[worst] = expanded;
        values[worst] = f_expanded;
      } else {
        simplex[worst] = reflected;
        values[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < values[second_worst]) {
      simplex[worst] = reflected;
      values[worst] = f_reflected;
      continue;
    }
    const bool outside = f_reflected < values[worst];
    const Eigen::VectorXd contracted = outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                                               : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
    const double f_contracted = eval(contracted);
    if (f_contracted < (outside ? f_reflected : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = f_contracted;
      continue;
    }
    for (int k = 0; k <= n; ++k) {
      if (k == best) continue;
      simplex[k] = simplex[best] + 0.5 * (simplex[k] - simplex[best]);
      values[k] = eval(simplex[k]);
    }
  }

  const auto best = std::min_element(values.begin(), values.end()) - values.begin();
  out.x = simplex[best];
  out.value = values[best];
  out.status = out.converged ? "converged" : "iteration limit";
  return out;
}

OptimResult minimize_bfgs(const Objective& f, const Eigen::VectorXd& x0, const OptimOptions& opts,
                          const Eigen::MatrixXd* inverse_hessian) {
  const Eigen::Index n = x0.size();
  OptimResult out;
  out.x = x0;
  Eigen::VectorXd g(n);
  ++out.evaluations;
  out.value = sanitize(f(out.x, &g));
  if (!std::isfinite(out.value)) {
    out.status = "infeasible start";
    return out;
  }

  const bool seeded = inverse_hessian && inverse_hessian->rows() == n &&
                      inverse_hessian->cols() == n && inverse_hessian->allFinite();
  Eigen::MatrixXd inv_hessian = seeded ? *inverse_hessian : Eigen::MatrixXd::Identity(n, n);
  bool scaled = seeded;
  int failures = 0;
  Eigen::VectorXd g_new(n);

  for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      out.converged = true;
      out.status = "converged";
      out.inverse_hessian = inv_hessian;
      return out;
    }
    Eigen::VectorXd direction = -inv_hessian * g;
    double slope = g.dot(direction);
    if (!(slope < 0)) {
      inv_hessian.setIdentity();
      scaled = false;
      direction = -g;
      slope = g.dot(direction);
    }
    // Keep trial steps bounded so the first probes stay near the support.
    const double length = direction.norm();
    const double max_length = 10.0 * (1.0 + out.x.norm());
    if (length > max_length) {
      direction *= max_length / length;
      slope *= max_length / length;
    }

    double step = 1.0;
    double trial_value = kInf;
    Eigen::VectorXd trial(n);
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      trial = out.x + step * direction;
      ++out.evaluations;
      trial_value = sanitize(f(trial, &g_new));
      if (std::isfinite(trial_value) && trial_value <= out.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= std::isfinite(trial_value) ? 0.5 : 0.25;
    }
    if (!accepted || !(trial_value <= out.value)) {
      if (++failures >= 2) {
        // No descent along the gradient either; treat as stationary up to
        // rounding if the objective no longer changes measurably.
        out.converged = g.lpNorm<Eigen::Infinity>() <= 1e3 * opts.gradient_tolerance;
        out.status = out.converged ? "converged (rounding limited)" : "line search failed";
        out.inverse_hessian = inv_hessian;
        return out;
      }
      inv_hessian.setIdentity();
      scaled = false;
      continue;
    }
    failures = 0;

    const Eigen::VectorXd s = trial - out.x;
    const Eigen::VectorXd y = g_new - g;
    const double previous = out.value;
    out.x = trial;
    out.value = trial_value;
    g = g_new;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        inv_hessian *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_hessian * y;
      inv_hessian += (rho * rho * y.dot(hy) + rho) * s * s.transpose() -
                     rho * (hy * s.transpose() + s * hy.transpose());
    }
    if (previous - out.value <= 1e-15 * (std::abs(out.value) + 1.0) &&
        g.lpNorm<Eigen::Infinity>() <= 1e3 * opts.gradient_tolerance) {
      out.converged = true;
      out.status = "converged (no progress)";
      out.inverse_hessian = inv_hessian;
      return out;
    }
  }
  out.inverse_hessian = inv_hessian;
  out.status = "iteration limit";
  return out;
}

OptimResult minimize(const Objective& f, const Eigen::VectorXd& x0, const OptimOptions& opts,
                     const Eigen::MatrixXd* inverse_hessian) {
  Eigen::VectorXd start = x0;
  int iterations = 0;
  int evaluations = 0;
  if (opts.simplex_stage) {
    OptimResult simplex = minimize_nelder_mead(f, x0, opts);
    iterations += simplex.iterations;
    evaluations += simplex.evaluations;
    if (std::isfinite(simplex.value)) start = simplex.x;
  }
  // A curvature seed only describes the original start.
  OptimResult polished =
      minimize_bfgs(f, start, opts, opts.simplex_stage ? nullptr : inverse_hessian);
  polished.iterations += iterations;
  polished.evaluations += evaluations;
  return polished;
}

}  // namespace expanel
