#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "phidiv/cressie_read.hpp"
#include "phidiv/divergence.hpp"
#include "phidiv/errors.hpp"
#include "phidiv/survey_model.hpp"

namespace phidiv {

using ScoreVector = Eigen::VectorXd;

namespace detail {

// phi extended with the lambda = -1 limit x - 1 - log(x) (positive x only);
// kept private so the public family stays on lambda > -1.
inline double phi_ext(double lambda, double x) {
  if (std::fabs(lambda + 1.0) < kLambdaZeroTol) {
    if (!(x > 0.0)) return std::numeric_limits<double>::infinity();
    return x - 1.0 - std::log(x);
  }
  return phi(lambda, x);
}

// Unnormalised objective sum_hi w_hi b_hi sum_s pi_s phi(y_s / (b_hi pi_s))
// with b_hi chosen by the size convention.  divergence() is this over tau.
inline double objective_raw(const SurveyDataset& data, const Coefficients& beta,
                            double lambda, SizeConvention sc) {
  double total = 0.0;
  for (const auto& r : data.records()) {
    const double b = convention_size(data, r, sc);
    const Eigen::VectorXd pi = link_probabilities(r.x, beta, data.d());
    double cluster = 0.0;
    for (int s = 0; s < data.num_categories(); ++s) {
      cluster += pi[s] * phi_ext(lambda, r.counts[s] / (b * pi[s]));
      if (!std::isfinite(cluster)) return cluster;
    }
    total += r.weight * b * cluster;
  }
  return total;
}

// Adds a * (T kron x) to u, category-major layout.
inline void add_kron(ScoreVector& u, double a, const Eigen::VectorXd& T,
                     const Eigen::VectorXd& x) {
  const int d = static_cast<int>(T.size());
  const int k = static_cast<int>(x.size());
  for (int r = 0; r < d; ++r) u.segment(r * k, k) += (a * T[r]) * x;
}

// General score with per-cluster scale a_hi = w_hi * b_hi and divisor b_hi:
//   u = sum_hi a_hi [ pi_r (g_r - sum_s pi_s g_s) ]_{r<=d} kron x_hi,
// g_s = g_lambda(y_s / (b_hi pi_s)) over all d+1 categories.  The sum over
// the full simplex (baseline included) is what makes this the exact gradient
// -d(objective)/d(beta).
inline ScoreVector general_score(const SurveyDataset& data,
                                 const Coefficients& beta, double lambda,
                                 SizeConvention sc) {
  const int d = data.d();
  const int dp1 = d + 1;
  ScoreVector u = ScoreVector::Zero(static_cast<Eigen::Index>(d) * data.k());
  const bool log_member = std::fabs(lambda + 1.0) < kLambdaZeroTol;
  Eigen::VectorXd g(dp1), T(d);
  for (const auto& r : data.records()) {
    const double b = convention_size(data, r, sc);
    const Eigen::VectorXd pi = link_probabilities(r.x, beta, data.d());
    double gbar = 0.0;
    for (int s = 0; s < dp1; ++s) {
      const double ratio = r.counts[s] / (b * pi[s]);
      if (log_member && !(ratio > 0.0)) {
        throw DomainError("lambda = -1 score needs positive counts "
                          "(log of zero count in cluster " + r.cluster_label +
                          ")");
      }
      g[s] = score_g(lambda, ratio);
      gbar += pi[s] * g[s];
    }
    for (int s = 0; s < d; ++s) T[s] = pi[s] * (g[s] - gbar);
    add_kron(u, r.weight * b, T, r.x);
  }
  return u;
}

// Exact Hessian of objective_raw, category-major kron layout.  Per cluster,
// with u_s = y_s/(b pi_s), g_s = g_lambda(u_s) and q_s = u_s^{lambda+1}
// (= u_s^2 phi''(u_s)), the (t, r) eta-block is
//   -w b [ pi_t (delta_tr - pi_r)(g_t - gbar - q_t)
//          - pi_t pi_r (g_r - gbar) + pi_t pi_r (q_r - qbar) ]  kron  x x'.
// At lambda = 0 this collapses to w m Delta(pi*) kron xx' and at the model
// (all u_s = 1) to the Th1 metric w b Delta(pi*) kron xx'.
inline Eigen::MatrixXd objective_hessian(const SurveyDataset& data,
                                         const Coefficients& beta,
                                         double lambda, SizeConvention sc) {
  const int d = data.d();
  const int k = data.k();
  const int dp1 = d + 1;
  const int dk = d * k;
  const bool log_member = std::fabs(lambda + 1.0) < kLambdaZeroTol;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dk, dk);
  Eigen::VectorXd g(dp1), q(dp1);
  for (const auto& r : data.records()) {
    const double b = convention_size(data, r, sc);
    const Eigen::VectorXd pi = link_probabilities(r.x, beta, d);
    double gbar = 0.0, qbar = 0.0;
    for (int s = 0; s < dp1; ++s) {
      const double u = r.counts[s] / (b * pi[s]);
      if (log_member && !(u > 0.0)) {
        throw DomainError("lambda = -1 Hessian needs positive counts "
                          "(cluster " + r.cluster_label + ")");
      }
      g[s] = score_g(lambda, u);
      q[s] = std::pow(u, lambda + 1.0);
      gbar += pi[s] * g[s];
      qbar += pi[s] * q[s];
    }
    const Eigen::MatrixXd xxt = r.x * r.x.transpose();
    for (int tt = 0; tt < d; ++tt) {
      for (int rr = 0; rr < d; ++rr) {
        const double delta = tt == rr ? 1.0 : 0.0;
        const double c =
            pi[tt] * (delta - pi[rr]) * (g[tt] - gbar - q[tt]) -
            pi[tt] * pi[rr] * (g[rr] - gbar) +
            pi[tt] * pi[rr] * (q[rr] - qbar);
        H.block(tt * k, rr * k, k, k) += (-r.weight * b * c) * xxt;
      }
    }
  }
  return 0.5 * (H + H.transpose());  // symmetric by construction; tidy rounding
}

// Gauss-Newton metric sum_hi w_hi b_hi Delta(pi*_hi) kron x x' (the
// Fisher-type matrix up to the 1/n factor, sizes per convention).
inline Eigen::MatrixXd fit_metric(const SurveyDataset& data,
                                  const Coefficients& beta,
                                  SizeConvention sc) {
  const int d = data.d();
  const int k = data.k();
  const int dk = d * k;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dk, dk);
  for (const auto& r : data.records()) {
    const double b = convention_size(data, r, sc);
    const Eigen::VectorXd pi = link_probabilities(r.x, beta, d);
    const Eigen::VectorXd pis = pi.head(d);
    const Eigen::MatrixXd delta =
        Eigen::MatrixXd(pis.asDiagonal()) - pis * pis.transpose();
    const Eigen::MatrixXd xxt = r.x * r.x.transpose();
    for (int rr = 0; rr < d; ++rr)
      for (int ss = 0; ss < d; ++ss)
        M.block(rr * k, ss * k, k, k) += (r.weight * b * delta(rr, ss)) * xxt;
  }
  return M;
}

}  // namespace detail

// Score in the f-term (general phi) form, per-cluster sizes.  Equals
// -tau/phi''(1) times the gradient of divergence(data, ., lambda).
inline ScoreVector score_general(const SurveyDataset& data,
                                 const Coefficients& beta, double lambda) {
  if (!(lambda >= -1.0 - detail::kLambdaZeroTol)) {
    throw DomainError("score requires lambda >= -1");
  }
  return detail::general_score(data, beta, lambda,
                               SizeConvention::kPerCluster);
}

// Cressie-Read closed-form score.  lambda = 0 uses the linear form
// sum w (y* - m pi*) kron x; lambda in (-1,0) falls back to the general form
// (the eps^lambda factors are undefined at zero counts); lambda = -1 is the
// logarithmic limit and needs positive counts.
inline ScoreVector score_cressie_read(const SurveyDataset& data,
                                      const Coefficients& beta,
                                      double lambda) {
  if (!(lambda >= -1.0 - detail::kLambdaZeroTol)) {
    throw DomainError("score requires lambda >= -1");
  }
  const int d = data.d();
  const int dp1 = d + 1;
  ScoreVector u = ScoreVector::Zero(static_cast<Eigen::Index>(d) * data.k());

  if (lambda_is_zero(lambda)) {
    Eigen::VectorXd T(d);
    for (const auto& r : data.records()) {
      const Eigen::VectorXd pi = link_probabilities(r.x, beta, d);
      for (int s = 0; s < d; ++s) T[s] = r.counts[s] - r.size * pi[s];
      detail::add_kron(u, r.weight, T, r.x);
    }
    return u;
  }
  if (lambda < 0.0) {
    // -1 < lambda < 0: the eps^lambda closed form is undefined at zero
    // counts, so use the equivalent general form; lambda = -1 likewise goes
    // through the general form, whose g_{-1} = log gives the limit
    // w m Delta(pi*) log(y*/(m pi*)) kron x.
    return detail::general_score(data, beta, lambda,
                                 SizeConvention::kPerCluster);
  }

  Eigen::VectorXd p(dp1), T(d);
  for (const auto& r : data.records()) {
    const Eigen::VectorXd pi = link_probabilities(r.x, beta, d);
    double S = 0.0;
    for (int s = 0; s < dp1; ++s) {
      p[s] = r.counts[s] == 0.0
                 ? 0.0
                 : std::pow(r.counts[s], lambda + 1.0) * std::pow(pi[s], -lambda);
      S += p[s];
    }
    for (int s = 0; s < d; ++s) T[s] = p[s] - S * pi[s];
    const double scale =
        r.weight / ((lambda + 1.0) * std::pow(static_cast<double>(r.size), lambda));
    detail::add_kron(u, scale, T, r.x);
  }
  return u;
}

struct FitOptions {
  double tol = 1e-8;                 // on the max-abs score entry
  int max_iterations = 100;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-12;
  double rel_decrease_tol = 1e-12;   // stall detection on the objective
  double condition_limit = 1e12;     // beyond this, take a gradient step
  SizeConvention convention = SizeConvention::kCommon;
  std::optional<Coefficients> initial;  // overrides the default start
};

struct IterationRecord {
  double divergence = 0.0;   // objective / tau after the accepted step
  double step_norm = 0.0;
  bool gradient_step = false;
};

struct FitResult {
  Coefficients beta_hat;
  double lambda = 0.0;
  double divergence_value = 0.0;  // objective / tau at beta_hat
  double score_inf_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> trace;
};

namespace detail {

inline FitResult newton_minimise(const SurveyDataset& data, double lambda,
                                 const FitOptions& opts,
                                 const Coefficients& start) {
  const SizeConvention sc = opts.convention;
  FitResult res;
  res.lambda = lambda;
  Coefficients beta = start;

  double f = objective_raw(data, beta, lambda, sc);
  ScoreVector u = general_score(data, beta, lambda, sc);
  double unorm = u.lpNorm<Eigen::Infinity>();

  while (res.iterations < opts.max_iterations && unorm > opts.tol) {
    // Direction.  Primary: the exact Hessian, made positive definite the
    // saddle-free way (eigenvalues replaced by max(|ev|, floor)); at
    // lambda = 0 this is exactly the count-free Fisher/Th1 form, and
    // off-model it keeps the quadratic local rate the Th1 surrogate loses.
    // Fallbacks: the Th1 metric, then a scaled gradient step.
    Eigen::VectorXd dir;
    bool gradient_step = false;
    bool have_dir = false;
    {
      Eigen::MatrixXd H;
      bool have_h = true;
      try {
        H = objective_hessian(data, beta, lambda, sc);
      } catch (const Error&) {
        have_h = false;
      }
      if (have_h && H.allFinite()) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
        const double ev_max = es.eigenvalues().cwiseAbs().maxCoeff();
        if (ev_max > 0.0) {
          Eigen::VectorXd evs = es.eigenvalues().cwiseAbs();
          const double floor = 1e-10 * ev_max;
          for (Eigen::Index i = 0; i < evs.size(); ++i)
            evs[i] = std::max(evs[i], floor);
          dir = es.eigenvectors() *
                (es.eigenvectors().transpose() * u).cwiseQuotient(evs);
          have_dir = true;
        }
      }
    }
    if (!have_dir) {
      const Eigen::MatrixXd M = fit_metric(data, beta, sc);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
      const double ev_min = es.eigenvalues().minCoeff();
      const double ev_max = es.eigenvalues().maxCoeff();
      if (ev_min > 0.0 && ev_max / ev_min <= opts.condition_limit) {
        dir = es.eigenvectors() *
              (es.eigenvectors().transpose() * u).cwiseQuotient(
                  es.eigenvalues());
      } else {
        gradient_step = true;
        dir = ev_max > 0.0 ? (u / ev_max).eval() : u;
      }
    }
    const double slope = u.dot(dir);  // positive for a descent direction
    if (!(slope > 0.0)) break;

    // Armijo backtracking on the objective.  Near the optimum the demanded
    // decrement falls below one ulp of the objective, where Armijo turns
    // into a rounding lottery that favours truncated steps; once in that
    // regime (and whenever Armijo fails outright) accept on a score-norm
    // decrease instead, trying the full Newton step first.
    const bool sub_rounding =
        opts.armijo_c * slope <=
        opts.rel_decrease_tol * std::max(1.0, std::fabs(f));
    double t = 1.0;
    bool accepted = false;
    bool by_score = false;
    double f_new = f;
    Coefficients cand;
    while (!sub_rounding && t >= opts.min_step) {
      cand = beta + t * dir;
      f_new = objective_raw(data, cand, lambda, sc);
      if (std::isfinite(f_new) && f_new <= f - opts.armijo_c * t * slope) {
        accepted = true;
        break;
      }
      t *= opts.backtrack;
    }
    if (!accepted) {
      t = 1.0;
      while (t >= opts.min_step) {
        cand = beta + t * dir;
        f_new = objective_raw(data, cand, lambda, sc);
        // Accept while the score norm shrinks and the objective does not
        // move above rounding.
        if (std::isfinite(f_new) &&
            f_new <=
                f + opts.rel_decrease_tol * std::max(1.0, std::fabs(f))) {
          const ScoreVector u_new = general_score(data, cand, lambda, sc);
          if (u_new.lpNorm<Eigen::Infinity>() < unorm) {
            accepted = true;
            by_score = true;
            u = u_new;
            break;
          }
        }
        t *= opts.backtrack;
      }
    }
    if (!accepted) break;  // stalled: no certifiable progress in any sense

    beta = cand;
    f = f_new;
    if (!by_score) u = general_score(data, beta, lambda, sc);
    unorm = u.lpNorm<Eigen::Infinity>();
    ++res.iterations;
    res.trace.push_back({f / data.tau(), t * dir.norm(), gradient_step});
  }

  res.beta_hat = beta;
  res.divergence_value = f / data.tau();
  res.score_inf_norm = unorm;
  res.converged = unorm <= opts.tol;
  return res;
}

}  // namespace detail

// Pseudo minimum phi-divergence fit.  lambda = 0 starts at beta = 0; other
// lambdas warm-start from the lambda = 0 solution (unless options.initial is
// given).  Damped Newton on the exact Hessian (saddle-free), Armijo
// backtracking on the objective with a score-norm acceptance once decrements
// fall below rounding; Th1-metric and gradient steps as fallbacks.
// "converged" means the final score inf-norm met the tolerance.
inline FitResult fit(const SurveyDataset& data, double lambda,
                     FitOptions opts = {}) {
  if (!(lambda >= -1.0 - detail::kLambdaZeroTol)) {
    throw DomainError("fit requires lambda >= -1");
  }
  const Eigen::VectorXd totals = data.category_totals();
  for (int s = 0; s < data.num_categories(); ++s) {
    if (totals[s] == 0.0) throw SeparationError(s + 1);
  }
  if (std::fabs(lambda + 1.0) < detail::kLambdaZeroTol) {
    for (const auto& r : data.records()) {
      if (r.counts.minCoeff() == 0.0) {
        throw DomainError("fit at lambda = -1 requires positive counts in "
                          "every cell (cluster " + r.cluster_label + ")");
      }
    }
  }

  const int dk = data.d() * data.k();
  Coefficients start;
  if (opts.initial) {
    if (opts.initial->size() != dk) {
      throw DataError("initial coefficients have wrong length");
    }
    start = *opts.initial;
  } else if (lambda_is_zero(lambda)) {
    start = Coefficients::Zero(dk);
  } else {
    FitOptions base = opts;
    base.initial.reset();
    start = detail::newton_minimise(data, 0.0, base, Coefficients::Zero(dk))
                .beta_hat;
  }
  return detail::newton_minimise(data, lambda, opts, start);
}

// Fits every lambda in the list, sharing one lambda = 0 warm start.
inline std::vector<FitResult> fit_family(const SurveyDataset& data,
                                         const std::vector<double>& lambdas,
                                         FitOptions opts = {}) {
  std::vector<FitResult> out;
  out.reserve(lambdas.size());
  std::optional<FitResult> base;
  auto base_fit = [&]() -> const FitResult& {
    if (!base) {
      FitOptions b = opts;
      b.initial.reset();
      base = fit(data, 0.0, b);
    }
    return *base;
  };
  for (double lam : lambdas) {
    if (opts.initial) {
      out.push_back(fit(data, lam, opts));
    } else if (lambda_is_zero(lam)) {
      out.push_back(base_fit());
    } else {
      FitOptions o = opts;
      o.initial = base_fit().beta_hat;
      out.push_back(fit(data, lam, o));
    }
  }
  return out;
}

}  // namespace phidiv
