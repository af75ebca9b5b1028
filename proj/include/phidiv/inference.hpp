#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "phidiv/errors.hpp"
#include "phidiv/estimation.hpp"
#include "phidiv/survey_model.hpp"

namespace phidiv {

// Fisher-type information matrix H_n = (1/n) sum w_hi m_hi Delta(pi*) kron xx'.
inline Eigen::MatrixXd information_matrix(const SurveyDataset& data,
                                          const Coefficients& beta) {
  return detail::fit_metric(data, beta, SizeConvention::kPerCluster) /
         static_cast<double>(data.n_clusters());
}

namespace detail {

// Per-cluster lambda = 0 score contribution w (y* - m pi*) kron x.
inline Eigen::VectorXd cluster_score_term(const SurveyDataset& data,
                                          const ClusterRecord& r,
                                          const Coefficients& beta,
                                          bool weighted) {
  const int d = data.d();
  const int k = data.k();
  const Eigen::VectorXd pi = link_probabilities(r.x, beta, d);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d) * k);
  for (int s = 0; s < d; ++s) {
    v.segment(s * k, k) = (r.counts[s] - r.size * pi[s]) * r.x;
  }
  return weighted ? (r.weight * v).eval() : v;
}

inline std::string coefficient_name(int index, int k) {
  const int r = index / k + 1;
  const int j = index % k + 1;
  return "beta_" + std::to_string(r) + std::to_string(j);
}

// Inverts a symmetric PSD matrix; condition number above the limit (or a
// non-positive eigenvalue) raises NumericError naming the null directions.
inline Eigen::MatrixXd invert_spd(const Eigen::MatrixXd& M, int k,
                                  const std::string& what,
                                  double condition_limit = 1e12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  const auto& ev = es.eigenvalues();
  const double ev_max = ev.maxCoeff();
  if (!(ev.minCoeff() > 0.0) || ev_max / ev.minCoeff() > condition_limit) {
    std::string dirs;
    for (int i = 0; i < ev.size(); ++i) {
      if (ev[i] <= 0.0 || ev_max / ev[i] > condition_limit) {
        int worst = 0;
        es.eigenvectors().col(i).cwiseAbs().maxCoeff(&worst);
        if (!dirs.empty()) dirs += ", ";
        dirs += coefficient_name(worst, k);
      }
    }
    throw NumericError(what + " is numerically singular; null directions "
                       "dominated by: " + dirs);
  }
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

// Centered empirical variability matrix (the lambda = 0 score terms are used
// regardless of which lambda produced beta_hat; at the pseudo-MLE the center
// u/n vanishes and this reduces to the uncentered form).
inline Eigen::MatrixXd variability_matrix(const SurveyDataset& data,
                                          const Coefficients& beta_hat) {
  const int dk = data.d() * data.k();
  const int n = data.n_clusters();
  std::vector<Eigen::VectorXd> terms;
  terms.reserve(n);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dk);
  for (const auto& r : data.records()) {
    terms.push_back(detail::cluster_score_term(data, r, beta_hat, true));
    mean += terms.back();
  }
  mean /= static_cast<double>(n);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(dk, dk);
  for (const auto& t : terms) {
    const Eigen::VectorXd c = t - mean;
    G.noalias() += c * c.transpose();
  }
  return G / static_cast<double>(n);
}

struct SandwichComponents {
  Eigen::MatrixXd H_n;
  Eigen::MatrixXd G_n_hat;
  Eigen::MatrixXd design_effect_matrix;  // H_n^{-1} G_n_hat
  Eigen::MatrixXd covariance;            // H^{-1} G H^{-1} / n
  int n_clusters = 0;
};

inline SandwichComponents sandwich_covariance(const SurveyDataset& data,
                                              const Coefficients& beta_hat) {
  SandwichComponents out;
  out.n_clusters = data.n_clusters();
  out.H_n = information_matrix(data, beta_hat);
  out.G_n_hat = variability_matrix(data, beta_hat);
  const Eigen::MatrixXd Hinv =
      detail::invert_spd(out.H_n, data.k(), "information matrix H_n");
  out.design_effect_matrix = Hinv * out.G_n_hat;
  Eigen::MatrixXd cov =
      Hinv * out.G_n_hat * Hinv / static_cast<double>(out.n_clusters);
  out.covariance = 0.5 * (cov + cov.transpose());  // enforce exact symmetry
  return out;
}

// nu_hat = trace(H_n^{-1} G_n_hat) / (d k).
inline double design_effect(const SurveyDataset& data,
                            const Coefficients& beta_hat) {
  const SandwichComponents sc = sandwich_covariance(data, beta_hat);
  return sc.design_effect_matrix.trace() /
         static_cast<double>(data.d() * data.k());
}

enum class RhoMethod { kBinder, kMoments };

struct OverdispersionEstimate {
  int stratum = 0;
  std::string stratum_label;
  RhoMethod method = RhoMethod::kBinder;
  double nu_hat = 0.0;
  double rho2_hat = 0.0;
  int m_h = 0;
  bool out_of_range = false;  // rho2 outside [0, 1], reported unclipped
};

struct RhoEligibility {
  bool eligible = false;
  std::string reason;  // empty when eligible
};

// Theorems behind the rho^2 estimators assume a common cluster size within
// the stratum (and a common weight for the Binder version).
inline RhoEligibility stratum_rho2_eligibility(const SurveyDataset& data,
                                               int stratum) {
  const auto& members = data.stratum_members(stratum);
  const int m0 = data.records()[members.front()].size;
  for (int i : members) {
    if (data.records()[i].size != m0) {
      std::string sizes;
      for (int j : members) {
        if (!sizes.empty()) sizes += ",";
        sizes += std::to_string(data.records()[j].size);
      }
      return {false, "unequal cluster sizes (" + sizes + ")"};
    }
  }
  if (m0 < 2) return {false, "cluster size must be at least 2"};
  return {true, ""};
}

namespace detail {
inline int common_stratum_size(const SurveyDataset& data, int stratum,
                               const char* who) {
  const RhoEligibility e = stratum_rho2_eligibility(data, stratum);
  if (!e.eligible) {
    throw DataError(std::string(who) + ": stratum " +
                    data.stratum_labels()[stratum] + " ineligible: " +
                    e.reason);
  }
  return data.records()[data.stratum_members(stratum).front()].size;
}
}  // namespace detail

// Linearization (Binder) estimator of the within-stratum design effect:
//   nu_hat = (1/dk) trace([sum_i m_h Delta(pi*_hi) kron x x']^{-1}
//                         sum_i (v_i - vbar)(v_i - vbar)')
// with v_i = (y*_i - m_h pi*_i) kron x_i, weight-free, so at fixed beta_hat
// the result is invariant to rescaling the stratum weights.
inline OverdispersionEstimate rho2_binder(const SurveyDataset& data,
                                          int stratum,
                                          const Coefficients& beta_hat) {
  const int m_h = detail::common_stratum_size(data, stratum, "rho2_binder");
  const auto& members = data.stratum_members(stratum);
  const double w0 = data.records()[members.front()].weight;
  for (int i : members) {
    if (data.records()[i].weight != w0) {
      throw DataError("rho2_binder: stratum " +
                      data.stratum_labels()[stratum] +
                      " has unequal weights");
    }
  }
  const int d = data.d();
  const int k = data.k();
  const int dk = d * k;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dk, dk);
  std::vector<Eigen::VectorXd> v;
  v.reserve(members.size());
  Eigen::VectorXd vbar = Eigen::VectorXd::Zero(dk);
  for (int i : members) {
    const auto& r = data.records()[i];
    const Eigen::VectorXd pi = link_probabilities(r.x, beta_hat, d);
    const Eigen::VectorXd pis = pi.head(d);
    const Eigen::MatrixXd delta =
        Eigen::MatrixXd(pis.asDiagonal()) - pis * pis.transpose();
    const Eigen::MatrixXd xxt = r.x * r.x.transpose();
    for (int rr = 0; rr < d; ++rr)
      for (int ss = 0; ss < d; ++ss)
        A.block(rr * k, ss * k, k, k) += (m_h * delta(rr, ss)) * xxt;
    v.push_back(detail::cluster_score_term(data, r, beta_hat, false));
    vbar += v.back();
  }
  vbar /= static_cast<double>(members.size());
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(dk, dk);
  for (const auto& vi : v) {
    const Eigen::VectorXd c = vi - vbar;
    B.noalias() += c * c.transpose();
  }
  const Eigen::MatrixXd Ainv =
      detail::invert_spd(A, k, "stratum information matrix");
  OverdispersionEstimate out;
  out.stratum = stratum;
  out.stratum_label = data.stratum_labels()[stratum];
  out.method = RhoMethod::kBinder;
  out.m_h = m_h;
  out.nu_hat = (Ainv * B).trace() / static_cast<double>(dk);
  out.rho2_hat = (out.nu_hat - 1.0) / static_cast<double>(m_h - 1);
  out.out_of_range = out.rho2_hat < 0.0 || out.rho2_hat > 1.0;
  return out;
}

// Method-of-moments (Pearson) estimator:
//   nu_tilde = (1/(n_h d)) sum_i sum_{s=1}^{d+1} (y_his - m_h pi_his)^2 /
//              (m_h pi_his),  rho2 = (nu_tilde - 1)/(m_h - 1).
inline OverdispersionEstimate rho2_moments(const SurveyDataset& data,
                                           int stratum,
                                           const Coefficients& beta_hat) {
  const int m_h = detail::common_stratum_size(data, stratum, "rho2_moments");
  const auto& members = data.stratum_members(stratum);
  const int d = data.d();
  double total = 0.0;
  for (int i : members) {
    const auto& r = data.records()[i];
    const Eigen::VectorXd pi = link_probabilities(r.x, beta_hat, d);
    for (int s = 0; s <= d; ++s) {
      const double e = m_h * pi[s];
      if (!(e > 1e-300)) {
        throw NumericError("rho2_moments: fitted probability numerically "
                           "zero in stratum " +
                           data.stratum_labels()[stratum]);
      }
      const double diff = r.counts[s] - e;
      total += diff * diff / e;
    }
  }
  OverdispersionEstimate out;
  out.stratum = stratum;
  out.stratum_label = data.stratum_labels()[stratum];
  out.method = RhoMethod::kMoments;
  out.m_h = m_h;
  out.nu_hat = total / static_cast<double>(members.size() * d);
  out.rho2_hat = (out.nu_hat - 1.0) / static_cast<double>(m_h - 1);
  out.out_of_range = out.rho2_hat < 0.0 || out.rho2_hat > 1.0;
  return out;
}

// Per-stratum design effect including the weight: nu^{(h)} = w_h * nu_hat.
inline double stratum_design_effect(const SurveyDataset& data, int stratum,
                                    const Coefficients& beta_hat) {
  const auto est = rho2_binder(data, stratum, beta_hat);
  const double w_h =
      data.records()[data.stratum_members(stratum).front()].weight;
  return w_h * est.nu_hat;
}

}  // namespace phidiv
