#pragma once

#include <Eigen/Dense>

#include "phidiv/cressie_read.hpp"
#include "phidiv/survey_model.hpp"

namespace phidiv {

// How cluster sizes enter the divergence.
//
// kPerCluster evaluates each cluster's discrepancy at its own size m_hi:
//   d_phi = (1/tau) * sum_hi w_hi m_hi sum_s pi_s phi(y_his / (m_hi pi_s)).
// kCommon replaces every m_hi by the weighted mean size mbar = tau / sum(w),
// so raw counts are compared on one common scale:
//   d_phi = (1/tau) * sum_hi w_hi mbar sum_s pi_s phi(y_his / (mbar pi_s)).
// For the Cressie-Read family the kCommon minimiser does not depend on the
// common value chosen, and the two conventions have identical minimisers
// whenever all cluster sizes are equal (and always at lambda = 0).  kCommon is
// the convention under which the bundled unc.csv example reproduces its
// reference coefficient table at every lambda.
enum class SizeConvention { kPerCluster, kCommon };

namespace detail {
// Per-cluster divisor b_hi under the given convention.
inline double convention_size(const SurveyDataset& data,
                              const ClusterRecord& r, SizeConvention sc) {
  return sc == SizeConvention::kPerCluster ? static_cast<double>(r.size)
                                           : data.common_size();
}
}  // namespace detail

// Weighted pseudo phi-divergence between observed proportions and the model.
inline double divergence(const SurveyDataset& data, const Coefficients& beta,
                         double lambda,
                         SizeConvention sc = SizeConvention::kPerCluster) {
  check_lambda(lambda);
  double total = 0.0;
  for (const auto& r : data.records()) {
    const double b = detail::convention_size(data, r, sc);
    const Eigen::VectorXd pi = link_probabilities(r.x, beta, data.d());
    double cluster = 0.0;
    for (int s = 0; s < data.num_categories(); ++s) {
      cluster += pi[s] * phi(lambda, r.counts[s] / (b * pi[s]));
    }
    total += r.weight * b * cluster;
  }
  return total / data.tau();
}

}  // namespace phidiv
