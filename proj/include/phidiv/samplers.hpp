#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "phidiv/errors.hpp"

namespace phidiv {

enum class Family { kDirichletMultinomial, kRandomClumped, kMInflated };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::kDirichletMultinomial: return "dm";
    case Family::kRandomClumped: return "rc";
    case Family::kMInflated: return "m_inflated";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "dm" || s == "dirichlet_multinomial") {
    return Family::kDirichletMultinomial;
  }
  if (s == "rc" || s == "random_clumped") return Family::kRandomClumped;
  if (s == "mi" || s == "m-i" || s == "m_inflated") return Family::kMInflated;
  throw ConfigError("unknown family '" + s +
                    "' (expected dm, rc or m_inflated)");
}

// Overdispersed multinomial target: E = m pi, V = (1 + rho2 (m-1)) m Delta(pi).
struct OverdispersionSpec {
  Eigen::VectorXd pi;
  double rho2 = 0.0;
  int m = 1;
  Family family = Family::kDirichletMultinomial;
};

namespace rngdetail {

// splitmix64 finalizer; used to derive well-separated streams.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double next_uniform(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline int draw_categorical(std::mt19937_64& g, const Eigen::VectorXd& pi) {
  const double u = next_uniform(g);
  double c = 0.0;
  for (int s = 0; s + 1 < pi.size(); ++s) {
    c += pi[s];
    if (u < c) return s;
  }
  return static_cast<int>(pi.size()) - 1;
}

inline int draw_binomial(std::mt19937_64& g, int m, double p) {
  int n = 0;
  for (int t = 0; t < m; ++t) n += next_uniform(g) < p ? 1 : 0;
  return n;
}

inline Eigen::VectorXi draw_multinomial(std::mt19937_64& g, int m,
                                        const Eigen::VectorXd& pi) {
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(pi.size());
  for (int t = 0; t < m; ++t) ++counts[draw_categorical(g, pi)];
  return counts;
}

inline Eigen::VectorXd draw_dirichlet(std::mt19937_64& g,
                                      const Eigen::VectorXd& alpha) {
  Eigen::VectorXd y(alpha.size());
  for (int s = 0; s < alpha.size(); ++s) {
    if (alpha[s] == 0.0) {
      y[s] = 0.0;
    } else {
      std::gamma_distribution<double> gamma(alpha[s], 1.0);
      y[s] = gamma(g);
    }
  }
  const double total = y.sum();
  if (!(total > 0.0)) {  // astronomically unlikely; keep a valid simplex
    return alpha / alpha.sum();
  }
  return y / total;
}

}  // namespace rngdetail

inline void validate_spec(const OverdispersionSpec& spec) {
  if (spec.m < 1) throw DomainError("sampler needs m >= 1");
  if (spec.pi.size() < 2 || spec.pi.minCoeff() < 0.0 ||
      std::fabs(spec.pi.sum() - 1.0) > 1e-9) {
    throw DomainError("pi must be a probability vector of length >= 2");
  }
  const bool allow_one = spec.family != Family::kDirichletMultinomial;
  if (spec.rho2 < 0.0 || spec.rho2 > 1.0 ||
      (spec.rho2 == 1.0 && !allow_one)) {
    throw DomainError("rho2 must lie in [0,1); 1 is allowed only for the "
                      "random_clumped / m_inflated degenerate cases");
  }
}

// One draw from the requested family (validation left to the caller).
inline Eigen::VectorXi draw_one(const OverdispersionSpec& spec,
                               std::mt19937_64& g) {
  using namespace rngdetail;
  switch (spec.family) {
    case Family::kDirichletMultinomial: {
      if (spec.rho2 == 0.0) return draw_multinomial(g, spec.m, spec.pi);
      const double conc = (1.0 - spec.rho2) / spec.rho2;
      const Eigen::VectorXd p = draw_dirichlet(g, (conc * spec.pi).eval());
      return draw_multinomial(g, spec.m, p);
    }
    case Family::kRandomClumped: {
      const int u = draw_categorical(g, spec.pi);
      const int n = draw_binomial(g, spec.m, std::sqrt(spec.rho2));
      Eigen::VectorXi counts = draw_multinomial(g, spec.m - n, spec.pi);
      counts[u] += n;
      return counts;
    }
    case Family::kMInflated: {
      if (next_uniform(g) < spec.rho2) {
        Eigen::VectorXi counts = Eigen::VectorXi::Zero(spec.pi.size());
        counts[draw_categorical(g, spec.pi)] = spec.m;
        return counts;
      }
      return draw_multinomial(g, spec.m, spec.pi);
    }
  }
  throw Error("unreachable family");
}

inline std::vector<Eigen::VectorXi> sample(const OverdispersionSpec& spec,
                                           std::uint64_t seed, int n_draws) {
  validate_spec(spec);
  if (n_draws < 0) throw DomainError("n_draws must be nonnegative");
  std::mt19937_64 g(seed);
  std::vector<Eigen::VectorXi> out;
  out.reserve(n_draws);
  for (int i = 0; i < n_draws; ++i) out.push_back(draw_one(spec, g));
  return out;
}

}  // namespace phidiv
