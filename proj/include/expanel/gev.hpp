#pragma once

// Generalized extreme value (GEV) and generalized Pareto (GP) kernels.
//
// Everything here is a pure function of its arguments and is templated on the
// floating point type. Points outside the support have log-density -infinity
// so that optimizers probing infeasible parameters are pushed back.

#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "expanel/errors.hpp"

namespace expanel {

// Below this |xi| the Gumbel (GEV) and exponential (GP) formulas are used.
inline constexpr double kXiEps = 1e-8;

template <typename Scalar>
struct GevParams {
  static_assert(std::is_floating_point_v<Scalar>);
  Scalar mu{0};
  Scalar sigma{1};
  Scalar xi{0};
};

template <typename Scalar>
struct GpParams {
  static_assert(std::is_floating_point_v<Scalar>);
  Scalar sigma{1};
  Scalar xi{0};
};

// Log-density together with its partial derivatives in (mu, sigma, xi).
// The derivatives are zero when the value is -infinity.
template <typename Scalar>
struct GevLogDensity {
  Scalar value;
  Scalar d_mu;
  Scalar d_sigma;
  Scalar d_xi;
};

template <typename Scalar>
struct GpLogDensity {
  Scalar value;
  Scalar d_sigma;
  Scalar d_xi;
};

namespace detail {

template <typename Scalar>
constexpr Scalar neg_inf() {
  return -std::numeric_limits<Scalar>::infinity();
}

template <typename Scalar>
bool small_shape(Scalar xi) {
  return std::abs(xi) < static_cast<Scalar>(kXiEps);
}

template <typename Scalar>
void check_finite(Scalar v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string(what) + " must be finite");
}

template <typename Scalar>
void check_params(const GevParams<Scalar>& p) {
  if (!std::isfinite(p.mu) || !std::isfinite(p.sigma) || !std::isfinite(p.xi) ||
      !(p.sigma > 0)) {
    throw DomainError("invalid GEV parameters: require finite mu, xi and sigma > 0");
  }
}

template <typename Scalar>
void check_params(const GpParams<Scalar>& p) {
  if (!std::isfinite(p.sigma) || !std::isfinite(p.xi) || !(p.sigma > 0)) {
    throw DomainError("invalid GP parameters: require finite xi and sigma > 0");
  }
}

// (log1p(a) - a / (1 + a)) / xi^2 with a = xi * z. This is the term of the
// shape derivative that cancels catastrophically for small a, so it switches to
// the power series sum_{m>=2} (-1)^m xi^(m-2) z^m (1 - 1/m) there.
template <typename Scalar>
Scalar shape_derivative_term(Scalar xi, Scalar z) {
  const Scalar a = xi * z;
  if (std::abs(a) < Scalar(1e-3)) {
    Scalar sum = 0;
    Scalar power = z * z;  // xi^(m-2) z^m for m = 2
    Scalar sign = 1;
    for (int m = 2; m < 12; ++m) {
      sum += sign * power * (Scalar(1) - Scalar(1) / Scalar(m));
      power *= a;
      sign = -sign;
    }
    return sum;
  }
  return (std::log1p(a) - a / (Scalar(1) + a)) / (xi * xi);
}

}  // namespace detail

/// Log-density of the GEV distribution at y.
template <typename Scalar>
Scalar gev_logpdf(Scalar y, const GevParams<Scalar>& p) {
  detail::check_finite(y, "y");
  detail::check_params(p);
  const Scalar z = (y - p.mu) / p.sigma;
  if (detail::small_shape(p.xi)) return -std::log(p.sigma) - z - std::exp(-z);
  const Scalar a = p.xi * z;
  if (!(Scalar(1) + a > 0)) return detail::neg_inf<Scalar>();
  const Scalar log_w = std::log1p(a);
  const Scalar value =
      -std::log(p.sigma) - (Scalar(1) + Scalar(1) / p.xi) * log_w - std::exp(-log_w / p.xi);
  return std::isnan(value) ? detail::neg_inf<Scalar>() : value;
}

/// Log-density and its gradient with respect to (mu, sigma, xi).
template <typename Scalar>
GevLogDensity<Scalar> gev_logpdf_grad(Scalar y, const GevParams<Scalar>& p) {
  detail::check_finite(y, "y");
  detail::check_params(p);
  const Scalar z = (y - p.mu) / p.sigma;
  const Scalar log_sigma = std::log(p.sigma);
  if (detail::small_shape(p.xi)) {
    const Scalar e = std::exp(-z);
    return {-log_sigma - z - e, (Scalar(1) - e) / p.sigma,
            (-Scalar(1) + z * (Scalar(1) - e)) / p.sigma,
            (Scalar(1) - e) * z * z / Scalar(2) - z};
  }
  const Scalar a = p.xi * z;
  const Scalar w = Scalar(1) + a;
  if (!(w > 0)) return {detail::neg_inf<Scalar>(), 0, 0, 0};
  const Scalar log_w = std::log1p(a);
  const Scalar t = std::exp(-log_w / p.xi);
  const Scalar value = -log_sigma - (Scalar(1) + Scalar(1) / p.xi) * log_w - t;
  if (!std::isfinite(value)) return {detail::neg_inf<Scalar>(), 0, 0, 0};
  const Scalar dz = ((Scalar(1) + p.xi) - t) / w;  // d/dmu times sigma
  return {value, dz / p.sigma, (-Scalar(1) + z * dz) / p.sigma,
          (Scalar(1) - t) * detail::shape_derivative_term(p.xi, z) - z / w};
}

/// GEV distribution function. 0 below the lower endpoint (xi > 0), 1 above the
/// upper endpoint (xi < 0).
template <typename Scalar>
Scalar gev_cdf(Scalar y, const GevParams<Scalar>& p) {
  detail::check_finite(y, "y");
  detail::check_params(p);
  const Scalar z = (y - p.mu) / p.sigma;
  if (detail::small_shape(p.xi)) return std::exp(-std::exp(-z));
  const Scalar a = p.xi * z;
  if (!(Scalar(1) + a > 0)) return p.xi > 0 ? Scalar(0) : Scalar(1);
  return std::exp(-std::exp(-std::log1p(a) / p.xi));
}

/// Closed-form GEV quantile at probability level prob in (0, 1).
template <typename Scalar>
Scalar gev_quantile(Scalar prob, const GevParams<Scalar>& p) {
  if (!(prob > 0 && prob < 1)) throw DomainError("probability must lie in (0, 1)");
  detail::check_params(p);
  const Scalar log_lp = std::log(-std::log(prob));
  if (detail::small_shape(p.xi)) return p.mu - p.sigma * log_lp;
  // mu - sigma/xi * (1 - (-log p)^(-xi)), written with expm1 for small xi.
  return p.mu + p.sigma * std::expm1(-p.xi * log_lp) / p.xi;
}

/// Level exceeded on average once every `period` blocks.
template <typename Scalar>
Scalar return_level(Scalar period, const GevParams<Scalar>& p) {
  if (!(period > 1) || !std::isfinite(period)) {
    throw DomainError("return period must be a finite value > 1");
  }
  return gev_quantile(Scalar(1) - Scalar(1) / period, p);
}

/// Log-density of the GP distribution for an excess z >= 0.
template <typename Scalar>
Scalar gp_logpdf(Scalar z, const GpParams<Scalar>& p) {
  detail::check_finite(z, "z");
  detail::check_params(p);
  if (z < 0) return detail::neg_inf<Scalar>();
  const Scalar x = z / p.sigma;
  if (detail::small_shape(p.xi)) return -std::log(p.sigma) - x;
  const Scalar a = p.xi * x;
  if (!(Scalar(1) + a > 0)) return detail::neg_inf<Scalar>();
  return -std::log(p.sigma) - (Scalar(1) + Scalar(1) / p.xi) * std::log1p(a);
}

template <typename Scalar>
GpLogDensity<Scalar> gp_logpdf_grad(Scalar z, const GpParams<Scalar>& p) {
  detail::check_finite(z, "z");
  detail::check_params(p);
  if (z < 0) return {detail::neg_inf<Scalar>(), 0, 0};
  const Scalar x = z / p.sigma;
  const Scalar log_sigma = std::log(p.sigma);
  if (detail::small_shape(p.xi)) {
    return {-log_sigma - x, (x - Scalar(1)) / p.sigma, x * x / Scalar(2) - x};
  }
  const Scalar a = p.xi * x;
  const Scalar w = Scalar(1) + a;
  if (!(w > 0)) return {detail::neg_inf<Scalar>(), 0, 0};
  const Scalar value = -log_sigma - (Scalar(1) + Scalar(1) / p.xi) * std::log1p(a);
  return {value, (-Scalar(1) + (Scalar(1) + p.xi) * x / w) / p.sigma,
          detail::shape_derivative_term(p.xi, x) - x / w};
}

template <typename Scalar>
Scalar gp_cdf(Scalar z, const GpParams<Scalar>& p) {
  detail::check_finite(z, "z");
  detail::check_params(p);
  if (z <= 0) return Scalar(0);
  const Scalar x = z / p.sigma;
  if (detail::small_shape(p.xi)) return -std::expm1(-x);
  const Scalar a = p.xi * x;
  if (!(Scalar(1) + a > 0)) return Scalar(1);
  return -std::expm1(-std::log1p(a) / p.xi);
}

template <typename Scalar>
Scalar gp_quantile(Scalar prob, const GpParams<Scalar>& p) {
  if (!(prob >= 0 && prob < 1)) throw DomainError("probability must lie in [0, 1)");
  detail::check_params(p);
  const Scalar log_tail = std::log1p(-prob);
  if (detail::small_shape(p.xi)) return -p.sigma * log_tail;
  return p.sigma * std::expm1(-p.xi * log_tail) / p.xi;
}

}  // namespace expanel
