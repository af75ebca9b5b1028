#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "phidiv/errors.hpp"

namespace phidiv {

// Stacked coefficient vector, category-major: beta = (beta_1', ..., beta_d')'
// with beta_r of length k; the last category (d+1) is the baseline with a
// fixed zero block that is not stored.
using Coefficients = Eigen::VectorXd;

// One cluster: integer category counts plus a shared covariate vector.
struct ClusterRecord {
  std::string stratum_label;
  std::string cluster_label;
  int stratum = 0;          // dense 0-based stratum index
  double weight = 1.0;      // w_hi > 0
  int size = 0;             // m_hi = sum of counts
  Eigen::VectorXd counts;   // length d+1, nonnegative integers
  Eigen::VectorXd x;        // length k
};

// Multinomial logistic link.  Returns all d+1 probabilities; the baseline
// category has linear predictor 0.  Stabilised by subtracting the max linear
// predictor, entries clamped away from exact zero so downstream ratios stay
// well defined.
inline Eigen::VectorXd link_probabilities(const Eigen::VectorXd& x,
                                          const Coefficients& beta, int d) {
  const int k = static_cast<int>(x.size());
  if (beta.size() != static_cast<Eigen::Index>(d) * k) {
    throw DataError("coefficient length " + std::to_string(beta.size()) +
                    " does not match d*k = " + std::to_string(d * k));
  }
  Eigen::VectorXd eta(d + 1);
  for (int r = 0; r < d; ++r) eta[r] = beta.segment(r * k, k).dot(x);
  eta[d] = 0.0;
  const double eta_max = eta.maxCoeff();
  Eigen::VectorXd p = (eta.array() - eta_max).exp();
  p /= p.sum();
  const double tiny = std::numeric_limits<double>::min();
  for (int s = 0; s <= d; ++s) p[s] = std::max(p[s], tiny);
  return p;
}

// Validated collection of clusters grouped by stratum.
class SurveyDataset {
 public:
  SurveyDataset(std::vector<ClusterRecord> records, int num_categories,
                int num_covariates)
      : records_(std::move(records)),
        d_(num_categories - 1),
        k_(num_covariates) {
    validate();
  }

  const std::vector<ClusterRecord>& records() const { return records_; }
  int d() const { return d_; }                       // free categories
  int num_categories() const { return d_ + 1; }
  int k() const { return k_; }
  int n_clusters() const { return static_cast<int>(records_.size()); }
  int n_strata() const { return static_cast<int>(stratum_labels_.size()); }
  const std::vector<std::string>& stratum_labels() const {
    return stratum_labels_;
  }
  // Cluster indices belonging to stratum h.
  const std::vector<int>& stratum_members(int h) const {
    return stratum_members_.at(h);
  }
  // tau = sum of w_hi * m_hi, the weighted total observation count.
  double tau() const { return tau_; }
  double weight_total() const { return weight_total_; }
  // Weighted mean cluster size tau / sum(w); the common size used by
  // SizeConvention::kCommon.  Equals the shared m when all sizes are equal.
  double common_size() const { return tau_ / weight_total_; }
  bool equal_sizes() const { return equal_sizes_; }

  // Total count per category over the whole dataset (separation check).
  Eigen::VectorXd category_totals() const {
    Eigen::VectorXd t = Eigen::VectorXd::Zero(d_ + 1);
    for (const auto& r : records_) t += r.counts;
    return t;
  }

 private:
  void validate() {
    if (records_.empty()) throw DataError("dataset has no clusters");
    if (d_ < 1) throw DataError("need at least two response categories");
    if (k_ < 1) throw DataError("need at least one covariate");
    tau_ = 0.0;
    weight_total_ = 0.0;
    stratum_labels_.clear();
    stratum_members_.clear();
    equal_sizes_ = true;
    const int m0 = records_.front().size;
    for (int i = 0; i < static_cast<int>(records_.size()); ++i) {
      auto& r = records_[i];
      if (r.counts.size() != d_ + 1) {
        throw DataError("cluster " + r.cluster_label + ": expected " +
                        std::to_string(d_ + 1) + " counts, got " +
                        std::to_string(r.counts.size()));
      }
      if (r.x.size() != k_) {
        throw DataError("cluster " + r.cluster_label + ": expected " +
                        std::to_string(k_) + " covariates");
      }
      if (!(r.weight > 0.0) || !std::isfinite(r.weight)) {
        throw DataError("cluster " + r.cluster_label +
                        ": weight must be positive and finite");
      }
      double total = 0.0;
      for (int s = 0; s <= d_; ++s) {
        const double c = r.counts[s];
        if (!(c >= 0.0) || c != std::floor(c)) {
          throw DataError("cluster " + r.cluster_label +
                          ": counts must be nonnegative integers");
        }
        total += c;
      }
      if (r.size <= 0) r.size = static_cast<int>(total);
      if (static_cast<double>(r.size) != total) {
        throw DataError("cluster " + r.cluster_label + ": declared size " +
                        std::to_string(r.size) + " != count total " +
                        std::to_string(static_cast<int>(total)));
      }
      if (r.size < 1) {
        throw DataError("cluster " + r.cluster_label + ": empty cluster");
      }
      if (r.size != m0) equal_sizes_ = false;
      if (r.stratum < 0) throw DataError("negative stratum index");
      while (static_cast<int>(stratum_labels_.size()) <= r.stratum) {
        stratum_labels_.push_back("");
        stratum_members_.emplace_back();
      }
      if (!r.stratum_label.empty()) stratum_labels_[r.stratum] = r.stratum_label;
      stratum_members_[r.stratum].push_back(i);
      tau_ += r.weight * r.size;
      weight_total_ += r.weight;
    }
    for (int h = 0; h < static_cast<int>(stratum_members_.size()); ++h) {
      if (stratum_members_[h].empty()) {
        throw DataError("stratum index " + std::to_string(h) +
                        " has no clusters");
      }
      if (stratum_labels_[h].empty()) {
        stratum_labels_[h] = "stratum_" + std::to_string(h + 1);
      }
    }
  }

  std::vector<ClusterRecord> records_;
  int d_;
  int k_;
  double tau_ = 0.0;
  double weight_total_ = 0.0;
  bool equal_sizes_ = true;
  std::vector<std::string> stratum_labels_;
  std::vector<std::vector<int>> stratum_members_;
};

// Stacked theoretical probability vector: blocks (w_hi m_hi / tau) *
// pi(x_hi, beta) over clusters, length n_clusters * (d+1).
inline Eigen::VectorXd stacked_model_probabilities(const SurveyDataset& data,
                                                   const Coefficients& beta) {
  const int dp1 = data.num_categories();
  Eigen::VectorXd out(static_cast<Eigen::Index>(data.n_clusters()) * dp1);
  int i = 0;
  for (const auto& r : data.records()) {
    out.segment(i * dp1, dp1) =
        (r.weight * r.size / data.tau()) *
        link_probabilities(r.x, beta, data.d());
    ++i;
  }
  return out;
}

// Stacked empirical vector: blocks (w_hi / tau) * counts_hi.
inline Eigen::VectorXd stacked_empirical_proportions(const SurveyDataset& data) {
  const int dp1 = data.num_categories();
  Eigen::VectorXd out(static_cast<Eigen::Index>(data.n_clusters()) * dp1);
  int i = 0;
  for (const auto& r : data.records()) {
    out.segment(i * dp1, dp1) = (r.weight / data.tau()) * r.counts;
    ++i;
  }
  return out;
}

}  // namespace phidiv
