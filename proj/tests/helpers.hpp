#pragma once

#include <catch2/catch_amalgamated.hpp>
#include <phidiv/phidiv.hpp>

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

// Shared fixtures and independent oracles for the test suite.
namespace th {

using namespace phidiv;

inline std::string data_path(const std::string& name) {
  return std::string(PHIDIV_DATA_DIR) + "/" + name;
}

inline SurveyDataset load_unc() { return read_survey_csv(data_path("unc.csv")); }

inline ClusterRecord cluster(int stratum, std::string label, double w, int m,
                             std::vector<double> counts,
                             std::vector<double> x) {
  ClusterRecord r;
  r.stratum = stratum;
  r.stratum_label = "stratum_" + std::to_string(stratum + 1);
  r.cluster_label = std::move(label);
  r.weight = w;
  r.size = m;
  r.counts = Eigen::Map<Eigen::VectorXd>(counts.data(),
                                         static_cast<Eigen::Index>(counts.size()));
  r.x = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return r;
}

// Two-cluster, two-category toy dataset used by several hand computations.
inline SurveyDataset tiny_dataset() {
  std::vector<ClusterRecord> recs;
  recs.push_back(cluster(0, "c1", 1.5, 10, {3, 7}, {1.0, 0.2}));
  recs.push_back(cluster(0, "c2", 0.5, 8, {5, 3}, {1.0, -0.4}));
  return SurveyDataset(std::move(recs), 2, 2);
}

struct RandomInstance {
  SurveyDataset data;
  Coefficients beta_true;
};

// Random survey dataset: multinomial counts at a random truth, covariates
// N(0,1) plus intercept, random weights, optionally a common cluster size.
// Regenerates until every category has a positive total (so fits are
// well-posed).
inline RandomInstance random_instance(std::mt19937_64& g, int n, int d, int k,
                                      int m_lo, int m_hi,
                                      bool equal_sizes = false,
                                      bool unit_weights = false) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> ub(-0.8, 0.8);
  std::uniform_real_distribution<double> uw(0.5, 2.5);
  std::uniform_int_distribution<int> um(m_lo, m_hi);

  Coefficients beta(d * k);
  for (int i = 0; i < beta.size(); ++i) beta[i] = ub(g);

  const int m_common = um(g);
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<ClusterRecord> recs;
    recs.reserve(n);
    for (int i = 0; i < n; ++i) {
      ClusterRecord r;
      r.stratum = i % 2 == 0 || n < 4 ? 0 : 1;
      r.stratum_label = r.stratum == 0 ? "A" : "B";
      r.cluster_label = "c" + std::to_string(i + 1);
      r.weight = unit_weights ? 1.0 : uw(g);
      r.size = equal_sizes ? m_common : um(g);
      r.x.resize(k);
      r.x[0] = 1.0;
      for (int j = 1; j < k; ++j) r.x[j] = gauss(g);
      const Eigen::VectorXd pi = link_probabilities(r.x, beta, d);
      r.counts = rngdetail::draw_multinomial(g, r.size, pi).cast<double>();
      recs.push_back(std::move(r));
    }
    SurveyDataset data(std::move(recs), d + 1, k);
    if (data.category_totals().minCoeff() > 0.0) {
      return RandomInstance{std::move(data), beta};
    }
  }
  throw std::runtime_error("random_instance: could not avoid empty categories");
}

// Central finite-difference gradient of divergence(data, ., lambda, sc).
inline Eigen::VectorXd fd_gradient(const SurveyDataset& data,
                                   const Coefficients& beta, double lambda,
                                   SizeConvention sc, double h = 1e-5) {
  Eigen::VectorXd grad(beta.size());
  Coefficients b = beta;
  for (int j = 0; j < beta.size(); ++j) {
    const double hj = h * std::max(1.0, std::fabs(beta[j]));
    b[j] = beta[j] + hj;
    const double up = divergence(data, b, lambda, sc);
    b[j] = beta[j] - hj;
    const double dn = divergence(data, b, lambda, sc);
    b[j] = beta[j];
    grad[j] = (up - dn) / (2.0 * hj);
  }
  return grad;
}

// Independent pseudo maximum-likelihood fit: textbook Newton with step
// halving on  l(beta) = sum_hi w_hi sum_s y_his log pi_s(x_hi).  Uses its own
// softmax; shares nothing with the library's fitting path.
inline Eigen::VectorXd independent_pml(const SurveyDataset& data,
                                       double tol = 1e-12,
                                       int max_iter = 200) {
  const int d = data.d();
  const int k = data.k();
  const int dk = d * k;

  auto softmax = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(d + 1);
    for (int r = 0; r < d; ++r)
      for (int j = 0; j < k; ++j) eta[r] += beta[r * k + j] * x[j];
    const double mx = eta.maxCoeff();
    Eigen::VectorXd p = (eta.array() - mx).exp();
    return Eigen::VectorXd(p / p.sum());
  };
  auto loglik = [&](const Eigen::VectorXd& beta) {
    double ll = 0.0;
    for (const auto& r : data.records()) {
      const Eigen::VectorXd pi = softmax(r.x, beta);
      for (int s = 0; s <= d; ++s)
        if (r.counts[s] > 0.0) ll += r.weight * r.counts[s] * std::log(pi[s]);
    }
    return ll;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(dk);
  double ll = loglik(beta);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dk);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dk, dk);
    for (const auto& r : data.records()) {
      const Eigen::VectorXd pi = softmax(r.x, beta);
      for (int s = 0; s < d; ++s) {
        const double res = r.counts[s] - r.size * pi[s];
        for (int j = 0; j < k; ++j) grad[s * k + j] += r.weight * res * r.x[j];
      }
      for (int s = 0; s < d; ++s) {
        for (int t = 0; t < d; ++t) {
          const double del =
              r.size * (pi[s] * ((s == t ? 1.0 : 0.0) - pi[t]));
          for (int j = 0; j < k; ++j)
            for (int l = 0; l < k; ++l)
              hess(s * k + j, t * k + l) += r.weight * del * r.x[j] * r.x[l];
        }
      }
    }
    if (grad.lpNorm<Eigen::Infinity>() < tol) break;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    double scale = 1.0;
    for (int half = 0; half < 60; ++half) {
      const double cand = loglik(beta + scale * step);
      if (cand >= ll - 1e-14 * std::fabs(ll)) {
        beta += scale * step;
        ll = cand;
        break;
      }
      scale *= 0.5;
    }
  }
  return beta;
}

}  // namespace th
