#pragma once

#include <cmath>
#include <limits>

#include "phidiv/errors.hpp"

namespace phidiv {

// Power-divergence (Cressie-Read) family
//
//   phi_lambda(x) = (x^{lambda+1} - x - lambda*(x - 1)) / (lambda*(lambda+1))
//
// normalised so that phi(1) = phi'(1) = 0 and phi''(1) = 1.  lambda = 0 is the
// Kullback-Leibler member x*log(x) - x + 1, taken as the analytic limit.
// Members with lambda <= -1 lose the phi(0) < infinity property this library
// relies on and are rejected.

namespace detail {
inline constexpr double kLambdaZeroTol = 1e-9;
}

inline void check_lambda(double lambda) {
  if (!(lambda > -1.0)) {
    throw DomainError("unsupported lambda " + std::to_string(lambda) +
                      ": the family is defined here for lambda > -1");
  }
}

inline bool lambda_is_zero(double lambda) {
  return std::fabs(lambda) < detail::kLambdaZeroTol;
}

inline double phi(double lambda, double x) {
  check_lambda(lambda);
  if (!(x >= 0.0)) {
    throw DomainError("phi argument must be nonnegative, got " +
                      std::to_string(x));
  }
  if (lambda_is_zero(lambda)) {
    if (x == 0.0) return 1.0;
    return x * std::log(x) - x + 1.0;
  }
  if (x == 0.0) return 1.0 / (1.0 + lambda);
  return (std::pow(x, lambda + 1.0) - x - lambda * (x - 1.0)) /
         (lambda * (lambda + 1.0));
}

inline double phi_prime(double lambda, double x) {
  check_lambda(lambda);
  if (!(x > 0.0)) {
    throw DomainError("phi_prime argument must be positive, got " +
                      std::to_string(x));
  }
  if (lambda_is_zero(lambda)) return std::log(x);
  return (std::pow(x, lambda) - 1.0) / lambda;
}

inline double phi_double_prime(double lambda, double x) {
  check_lambda(lambda);
  if (!(x > 0.0)) {
    throw DomainError("phi_double_prime argument must be positive, got " +
                      std::to_string(x));
  }
  return std::pow(x, lambda - 1.0);
}

// g(u) = u*phi'(u) - phi(u) = (u^{lambda+1} - 1) / (lambda + 1), the function
// the score stacks per category; g_{-1}(u) = log(u) as the limit.  Accepts
// u = 0 whenever lambda > -1.
inline double score_g(double lambda, double u) {
  if (std::fabs(lambda + 1.0) < detail::kLambdaZeroTol) {
    if (!(u > 0.0)) {
      throw DomainError("score_g at lambda = -1 requires positive argument");
    }
    return std::log(u);
  }
  if (!(u >= 0.0)) {
    throw DomainError("score_g argument must be nonnegative");
  }
  return (std::pow(u, lambda + 1.0) - 1.0) / (lambda + 1.0);
}

// Convenience value-type bundling a family member.
struct PhiFamilyMember {
  double lambda = 0.0;
  double operator()(double x) const { return phi(lambda, x); }
  double prime(double x) const { return phi_prime(lambda, x); }
  double double_prime(double x) const { return phi_double_prime(lambda, x); }
};

}  // namespace phidiv
