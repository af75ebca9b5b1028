#include "golden_unc.hpp"
#include "helpers.hpp"

using Catch::Approx;
using namespace phidiv;

namespace {

// Scenario-style generator shared with the simulation tests: one stratum,
// unit weights, covariates (1, N(mu_j, sigma_j^2)).
SurveyDataset generate_clusters(std::mt19937_64& g, Family family, int n,
                                int m, double rho2,
                                const Coefficients& beta_true,
                                const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& sigma) {
  const int k = static_cast<int>(mu.size());
  const int d = static_cast<int>(beta_true.size()) / k;
  std::vector<ClusterRecord> recs(n);
  std::normal_distribution<double> gauss;
  OverdispersionSpec spec;
  spec.rho2 = rho2;
  spec.m = m;
  spec.family = family;
  for (int i = 0; i < n; ++i) {
    auto& r = recs[i];
    r.stratum = 0;
    r.stratum_label = "s1";
    r.cluster_label = "c" + std::to_string(i + 1);
    r.weight = 1.0;
    r.size = m;
    r.x.resize(k);
    for (int j = 0; j < k; ++j) r.x[j] = mu[j] + sigma[j] * gauss(g);
    spec.pi = link_probabilities(r.x, beta_true, d);
    r.counts = draw_one(spec, g).cast<double>();
  }
  return SurveyDataset(std::move(recs), d + 1, k);
}

const double kScenarioBeta[12] = {-0.3, -0.1, 0.1, 0.2,  0.2, -0.2,
                                  -0.2, 0.1,  -0.1, 0.3, -0.3, 0.1};

}  // namespace

TEST_CASE("information matrix matches its definition", "[inference]") {
  const SurveyDataset data = th::tiny_dataset();
  Coefficients beta(2);
  beta << 0.4, -0.2;
  const Eigen::MatrixXd H = information_matrix(data, beta);
  REQUIRE(H.rows() == 2);

  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(2, 2);
  for (const auto& r : data.records()) {
    const Eigen::VectorXd pi = link_probabilities(r.x, beta, 1);
    const double delta = pi[0] * (1.0 - pi[0]);  // d = 1
    expect += r.weight * r.size * delta * r.x * r.x.transpose();
  }
  expect /= data.n_clusters();
  CHECK((H - expect).lpNorm<Eigen::Infinity>() < 1e-14);
  // Symmetric positive definite here.
  CHECK(H(0, 1) == Approx(H(1, 0)));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("variability matrix is the centred score second moment",
          "[inference]") {
  const SurveyDataset data = th::load_unc();
  const FitResult fr = fit(data, 0.0);
  REQUIRE(fr.converged);
  const int dk = data.d() * data.k();

  std::vector<Eigen::VectorXd> u;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dk);
  for (const auto& r : data.records()) {
    const Eigen::VectorXd pi = link_probabilities(r.x, fr.beta_hat, data.d());
    Eigen::VectorXd v(dk);
    for (int s = 0; s < data.d(); ++s) {
      v.segment(s * data.k(), data.k()) =
          (r.counts[s] - r.size * pi[s]) * r.x;
    }
    u.push_back(r.weight * v);
    mean += u.back();
  }
  mean /= data.n_clusters();
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(dk, dk);
  for (const auto& t : u) expect += (t - mean) * (t - mean).transpose();
  expect /= data.n_clusters();

  const Eigen::MatrixXd G = variability_matrix(data, fr.beta_hat);
  CHECK((G - expect).lpNorm<Eigen::Infinity>() <
        1e-12 * expect.lpNorm<Eigen::Infinity>());
}

TEST_CASE("sandwich pieces fit together", "[inference]") {
  const SurveyDataset data = th::load_unc();
  const FitResult fr = fit(data, 2.0 / 3.0);
  REQUIRE(fr.converged);
  const SandwichComponents sc = sandwich_covariance(data, fr.beta_hat);
  const int dk = data.d() * data.k();

  REQUIRE(sc.covariance.rows() == dk);
  CHECK(sc.n_clusters == 12);
  // covariance = H^{-1} G H^{-1} / n, symmetric PSD.
  const Eigen::MatrixXd direct = sc.H_n.inverse() * sc.G_n_hat *
                                 sc.H_n.inverse() / sc.n_clusters;
  CHECK((sc.covariance - direct).lpNorm<Eigen::Infinity>() <
        1e-10 * direct.lpNorm<Eigen::Infinity>());
  CHECK((sc.covariance - sc.covariance.transpose()).lpNorm<Eigen::Infinity>() ==
        0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sc.covariance);
  CHECK(es.eigenvalues().minCoeff() >= -1e-15);
  // design_effect() is trace(H^{-1} G)/dk.
  CHECK(design_effect(data, fr.beta_hat) ==
        Approx(sc.design_effect_matrix.trace() / dk));
  CHECK(design_effect(data, fr.beta_hat) ==
        Approx((sc.H_n.inverse() * sc.G_n_hat).trace() / dk).epsilon(1e-10));
}

TEST_CASE("rho2 eligibility reflects within-stratum size balance",
          "[inference]") {
  const SurveyDataset data = th::load_unc();
  // Strata 1 and 4 (labels Freshman, Senior) have one deviating size.
  const auto e0 = stratum_rho2_eligibility(data, 0);
  CHECK_FALSE(e0.eligible);
  CHECK_THAT(e0.reason, Catch::Matchers::ContainsSubstring("90"));
  const auto e3 = stratum_rho2_eligibility(data, 3);
  CHECK_FALSE(e3.eligible);
  CHECK_THAT(e3.reason, Catch::Matchers::ContainsSubstring("97"));
  CHECK(stratum_rho2_eligibility(data, 1).eligible);
  CHECK(stratum_rho2_eligibility(data, 2).eligible);

  const FitResult fr = fit(data, 0.0);
  CHECK_THROWS_AS(rho2_binder(data, 0, fr.beta_hat), DataError);
  CHECK_THROWS_AS(rho2_moments(data, 3, fr.beta_hat), DataError);
}

TEST_CASE("rho2 estimators reproduce an independent oracle on unc",
          "[inference]") {
  const SurveyDataset data = th::load_unc();
  const std::vector<double> lams(golden::kLambdas,
                                 golden::kLambdas + golden::kNumLambdas);
  const auto fits = fit_family(data, lams);
  for (int li = 0; li < golden::kNumLambdas; ++li) {
    REQUIRE(fits[li].converged);
    for (int srow = 0; srow < 2; ++srow) {
      const int stratum = srow + 1;  // strata 2 and 3 are the eligible ones
      CAPTURE(lams[li], stratum);
      const auto rb = rho2_binder(data, stratum, fits[li].beta_hat);
      const auto rm = rho2_moments(data, stratum, fits[li].beta_hat);
      CHECK(rb.rho2_hat ==
            Approx(golden::kOracleRhoBinder[srow][li]).margin(2e-6));
      CHECK(rm.rho2_hat ==
            Approx(golden::kOracleRhoMoments[srow][li]).margin(2e-6));
      CHECK(rb.m_h == 100);
      CHECK(rm.m_h == 100);
      CHECK(rb.method == RhoMethod::kBinder);
      CHECK(rm.method == RhoMethod::kMoments);
      CHECK(rb.nu_hat == Approx(1.0 + 99.0 * rb.rho2_hat));
      CHECK_FALSE(rb.out_of_range);
      CHECK_FALSE(rm.out_of_range);
    }
  }
}

TEST_CASE("structural identity: scaled Binder trace equals Pearson on a "
          "diagonal design", "[inference]") {
  // With indicator covariates (each cluster loading one design column) and a
  // common size, A is block diagonal and the two estimators are tied by a
  // fixed n_h/(n_h - 1) centring factor when the residual means are small.
  // Here we only pin the exact identity between the *uncentred* Binder trace
  // and the Pearson statistic, which holds algebraically.
  const SurveyDataset data = th::load_unc();
  const FitResult fr = fit(data, 0.0);
  for (int stratum : {1, 2}) {
    const auto& members = data.stratum_members(stratum);
    const int dk = data.d() * data.k();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dk, dk);
    Eigen::MatrixXd B0 = Eigen::MatrixXd::Zero(dk, dk);
    double pearson = 0.0;
    const double m = 100.0;
    for (int i : members) {
      const auto& r = data.records()[i];
      const Eigen::VectorXd pi = link_probabilities(r.x, fr.beta_hat, data.d());
      Eigen::MatrixXd delta =
          pi.head(data.d()).asDiagonal().toDenseMatrix() -
          pi.head(data.d()) * pi.head(data.d()).transpose();
      Eigen::MatrixXd xxt = r.x * r.x.transpose();
      for (int s = 0; s < data.d(); ++s)
        for (int t = 0; t < data.d(); ++t)
          A.block(s * data.k(), t * data.k(), data.k(), data.k()) +=
              m * delta(s, t) * xxt;
      Eigen::VectorXd v(dk);
      for (int s = 0; s < data.d(); ++s)
        v.segment(s * data.k(), data.k()) =
            (r.counts[s] - m * pi[s]) * r.x;
      B0 += v * v.transpose();
      for (int s = 0; s <= data.d(); ++s) {
        const double e = m * pi[s];
        pearson += (r.counts[s] - e) * (r.counts[s] - e) / e;
      }
    }
    const double trace = (A.ldlt().solve(B0)).trace();
    CAPTURE(stratum);
    CHECK(trace == Approx(pearson).epsilon(1e-9));
  }
}

TEST_CASE("rho2 values are invariant to rescaling all weights", "[inference]") {
  const SurveyDataset base = th::load_unc();
  std::vector<ClusterRecord> recs = base.records();
  for (auto& r : recs) r.weight *= 7.25;
  const SurveyDataset scaled(std::move(recs), base.num_categories(), base.k());

  const FitResult f1 = fit(base, 1.5);
  const FitResult f2 = fit(scaled, 1.5);
  REQUIRE(f1.converged);
  REQUIRE(f2.converged);
  CHECK((f1.beta_hat - f2.beta_hat).lpNorm<Eigen::Infinity>() < 1e-7);
  for (int stratum : {1, 2}) {
    CHECK(rho2_binder(base, stratum, f1.beta_hat).rho2_hat ==
          Approx(rho2_binder(scaled, stratum, f2.beta_hat).rho2_hat)
              .margin(1e-9));
    CHECK(rho2_moments(base, stratum, f1.beta_hat).rho2_hat ==
          Approx(rho2_moments(scaled, stratum, f2.beta_hat).rho2_hat)
              .margin(1e-9));
  }
}

TEST_CASE("rho2_binder requires equal weights within the stratum",
          "[inference]") {
  std::vector<ClusterRecord> recs;
  recs.push_back(th::cluster(0, "c1", 1.0, 10, {4, 6}, {1.0}));
  recs.push_back(th::cluster(0, "c2", 2.0, 10, {5, 5}, {1.0}));
  recs.push_back(th::cluster(0, "c3", 1.0, 10, {6, 4}, {1.0}));
  const SurveyDataset data(std::move(recs), 2, 1);
  const FitResult fr = fit(data, 0.0);
  CHECK_THROWS_AS(rho2_binder(data, 0, fr.beta_hat), DataError);
  CHECK_NOTHROW(rho2_moments(data, 0, fr.beta_hat));  // weight-free
}

TEST_CASE("underdispersed strata report out-of-range rho2", "[inference]") {
  // Identical clusters: zero between-cluster variability, nu < 1.
  std::vector<ClusterRecord> recs;
  for (int i = 0; i < 3; ++i) {
    recs.push_back(th::cluster(0, "c" + std::to_string(i + 1), 1.0, 10,
                               {5, 5}, {1.0}));
  }
  const SurveyDataset data(std::move(recs), 2, 1);
  const FitResult fr = fit(data, 0.0);
  const auto rb = rho2_binder(data, 0, fr.beta_hat);
  const auto rm = rho2_moments(data, 0, fr.beta_hat);
  CHECK(rb.nu_hat == Approx(0.0).margin(1e-12));
  CHECK(rb.rho2_hat < 0.0);
  CHECK(rb.out_of_range);
  CHECK(rm.rho2_hat < 0.0);
  CHECK(rm.out_of_range);
}

TEST_CASE("stratum design effect is w_h times the Binder nu", "[inference]") {
  const SurveyDataset data = th::load_unc();
  const FitResult fr = fit(data, 0.0);
  for (int stratum : {1, 2}) {
    const auto rb = rho2_binder(data, stratum, fr.beta_hat);
    const double w_h =
        data.records()[data.stratum_members(stratum).front()].weight;
    CHECK(stratum_design_effect(data, stratum, fr.beta_hat) ==
          Approx(w_h * rb.nu_hat));
  }
}

TEST_CASE("rho2_moments guards against vanishing fitted probabilities",
          "[inference]") {
  std::vector<ClusterRecord> recs;
  recs.push_back(th::cluster(0, "c1", 1.0, 10, {10, 0}, {1.0}));
  recs.push_back(th::cluster(0, "c2", 1.0, 10, {10, 0}, {1.0}));
  const SurveyDataset data(std::move(recs), 2, 1);
  Coefficients wild(1);
  wild << 780.0;  // pi_2 underflows to the clamp value
  CHECK_THROWS_AS(rho2_moments(data, 0, wild), NumericError);
}

TEST_CASE("singular designs raise NumericError naming a direction",
          "[inference]") {
  std::vector<ClusterRecord> recs;
  recs.push_back(th::cluster(0, "c1", 1.0, 10, {4, 6}, {1.0, 1.0}));
  recs.push_back(th::cluster(0, "c2", 1.0, 10, {5, 5}, {1.0, 1.0}));
  const SurveyDataset data(std::move(recs), 2, 2);
  const Coefficients beta = Coefficients::Zero(2);
  try {
    sandwich_covariance(data, beta);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("beta_"));
  }
}

TEST_CASE("design effect is near 1 for true multinomial sampling",
          "[inference]") {
  std::mt19937_64 g(930713);
  Coefficients beta(12);
  for (int i = 0; i < 12; ++i) beta[i] = kScenarioBeta[i];
  Eigen::VectorXd mu(4), sigma(4);
  mu << 1, -2, 1, 5;
  sigma << 0, 5, 5, 5;
  const SurveyDataset data = generate_clusters(
      g, Family::kMInflated, 150, 21, /*rho2=*/0.0, beta, mu, sigma);
  const FitResult fr = fit(data, 0.0);
  REQUIRE(fr.converged);
  const double nu = design_effect(data, fr.beta_hat);
  CHECK(nu > 0.8);
  CHECK(nu < 1.2);
}

TEST_CASE("design effect tracks 1 + rho2 (m - 1) under random clumping",
          "[inference]") {
  std::mt19937_64 g(481516);
  Coefficients beta(12);
  for (int i = 0; i < 12; ++i) beta[i] = kScenarioBeta[i];
  Eigen::VectorXd mu(4), sigma(4);
  mu << 1, -2, 1, 5;
  sigma << 0, 5, 5, 5;
  const SurveyDataset data = generate_clusters(
      g, Family::kRandomClumped, 150, 21, /*rho2=*/0.25, beta, mu, sigma);
  const FitResult fr = fit(data, 0.0);
  REQUIRE(fr.converged);
  const double nu = design_effect(data, fr.beta_hat);  // truth: 6
  CHECK(nu > 4.5);
  CHECK(nu < 7.5);
}
