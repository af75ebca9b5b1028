#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "phidiv/errors.hpp"
#include "phidiv/csv.hpp"
#include "phidiv/estimation.hpp"
#include "phidiv/inference.hpp"
#include "phidiv/samplers.hpp"
#include "phidiv/survey_model.hpp"

namespace phidiv {

// Accepts decimals and exact rationals like "2/3".
inline double parse_lambda_token(const std::string& raw) {
  const std::string s = detail::trim(raw);
  if (s.empty()) throw ConfigError("empty lambda token");
  try {
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
      const std::string ns = s.substr(0, slash);
      const std::string ds = s.substr(slash + 1);
      std::size_t np = 0, dp = 0;
      const double num = std::stod(ns, &np);
      const double den = std::stod(ds, &dp);
      if (np != ns.size() || dp != ds.size() || den == 0.0) {
        throw ConfigError("bad lambda token '" + s + "'");
      }
      return num / den;
    }
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw ConfigError("bad lambda token '" + s + "'");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("bad lambda token '" + s + "'");
  }
}

struct CovariateLaw {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma_diag;  // variances; first entry 0 gives the intercept
};

struct ScenarioConfig {
  std::vector<Family> families;
  std::vector<int> n_clusters;
  std::vector<int> m_values;
  std::vector<double> rho2_values;
  std::vector<double> lambdas = {0.0, 2.0 / 3.0, 1.0, 1.5, 2.0, 2.5};
  int replicates = 500;
  std::uint64_t seed = 0;
  Coefficients true_beta;
  CovariateLaw covariate_law;
};

struct RmseRecord {
  Family family = Family::kDirichletMultinomial;
  int n = 0;
  int m = 0;
  double rho2 = 0.0;
  double lambda = 0.0;
  double rmse_beta = 0.0;
  double rmse_rho2_binder = 0.0;
  double rmse_rho2_moments = 0.0;
  int replicates_used = 0;
  int failures = 0;
};

inline void validate_config(const ScenarioConfig& cfg) {
  if (cfg.families.empty() || cfg.n_clusters.empty() || cfg.m_values.empty() ||
      cfg.rho2_values.empty() || cfg.lambdas.empty()) {
    throw ConfigError("scenario grids must be non-empty");
  }
  if (cfg.replicates < 1) throw ConfigError("replicates must be >= 1");
  const int k = static_cast<int>(cfg.covariate_law.mu.size());
  if (k < 1 || cfg.covariate_law.sigma_diag.size() != k) {
    throw ConfigError("mu and sigma_diag must be non-empty and equal length");
  }
  if (cfg.covariate_law.sigma_diag.minCoeff() < 0.0) {
    throw ConfigError("sigma_diag entries must be nonnegative");
  }
  if (cfg.true_beta.size() == 0 || cfg.true_beta.size() % k != 0) {
    throw ConfigError("true_beta length must be a positive multiple of the "
                      "covariate dimension");
  }
  for (int n : cfg.n_clusters)
    if (n < 1) throw ConfigError("n must be >= 1");
  for (int m : cfg.m_values)
    if (m < 1) throw ConfigError("m must be >= 1");
  for (double r : cfg.rho2_values)
    if (r < 0.0 || r >= 1.0) throw ConfigError("rho2 must lie in [0,1)");
  for (double l : cfg.lambdas) {
    if (!(l > -1.0)) {
      throw ConfigError("lambda " + std::to_string(l) +
                        " unsupported: the family needs lambda > -1");
    }
  }
}

// Flat key = value config, '#' comments, arrays comma-separated.
inline ScenarioConfig parse_scenario_config(std::istream& in) {
  ScenarioConfig cfg;
  auto split_list = [](const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(detail::trim(tok));
    return out;
  };
  auto to_doubles = [&](const std::string& v, const char* what) {
    std::vector<double> out;
    for (const auto& t : split_list(v)) {
      try {
        out.push_back(std::stod(t));
      } catch (const std::exception&) {
        throw ConfigError(std::string("bad ") + what + " value '" + t + "'");
      }
    }
    return out;
  };
  auto to_ints = [&](const std::string& v, const char* what) {
    std::vector<int> out;
    for (double x : to_doubles(v, what)) {
      if (x != std::floor(x)) {
        throw ConfigError(std::string(what) + " values must be integers");
      }
      out.push_back(static_cast<int>(x));
    }
    return out;
  };
  auto to_vec = [&](const std::string& v, const char* what) {
    const auto xs = to_doubles(v, what);
    Eigen::VectorXd out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i];
    return out;
  };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "family" || key == "families") {
      cfg.families.clear();
      for (const auto& t : split_list(val)) {
        cfg.families.push_back(family_from_string(t));
      }
    } else if (key == "n" || key == "n_clusters") {
      cfg.n_clusters = to_ints(val, "n");
    } else if (key == "m") {
      cfg.m_values = to_ints(val, "m");
    } else if (key == "rho2") {
      cfg.rho2_values = to_doubles(val, "rho2");
    } else if (key == "lambda" || key == "lambdas") {
      cfg.lambdas.clear();
      for (const auto& t : split_list(val)) {
        cfg.lambdas.push_back(parse_lambda_token(t));
      }
    } else if (key == "replicates") {
      const auto v = to_ints(val, "replicates");
      if (v.size() != 1) throw ConfigError("replicates must be a single value");
      cfg.replicates = v[0];
    } else if (key == "seed") {
      try {
        cfg.seed = std::stoull(detail::trim(val));
      } catch (const std::exception&) {
        throw ConfigError("bad seed '" + val + "'");
      }
    } else if (key == "beta" || key == "true_beta") {
      cfg.true_beta = to_vec(val, "beta");
    } else if (key == "mu") {
      cfg.covariate_law.mu = to_vec(val, "mu");
    } else if (key == "sigma_diag" || key == "sigma") {
      cfg.covariate_law.sigma_diag = to_vec(val, "sigma_diag");
    } else {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

inline ScenarioConfig parse_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_scenario_config(in);
}

namespace simdetail {

inline double next_gauss(std::mt19937_64& g) {
  const double u1 = rngdetail::next_uniform(g);
  const double u2 = rngdetail::next_uniform(g);
  return std::sqrt(-2.0 * std::log(1.0 - u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t cell,
                                   std::uint64_t replicate) {
  std::uint64_t s = rngdetail::mix64(seed ^ 0xA076'1D64'78BD'642FULL);
  s = rngdetail::mix64(s ^ (cell + 1));
  s = rngdetail::mix64(s ^ ((replicate + 1) << 1));
  return s;
}

inline int thread_cap() {
  if (const char* env = std::getenv("PHIDIV_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

struct LambdaOutcome {
  bool ok = false;
  double beta_sq = 0.0;
  double binder_sq = 0.0;
  double moments_sq = 0.0;
};

}  // namespace simdetail

// Runs the full grid.  One stratum, unit weights; covariates redrawn per
// replicate; every replicate derives its generator stream from
// (seed, cell index, replicate index), so results do not depend on thread
// scheduling.  A replicate whose lambda = 0 warm-start fit fails (or whose
// sampled data drop a category entirely) counts as a failure for every
// lambda; otherwise failures are tallied per lambda row.
inline std::vector<RmseRecord> run_scenario(const ScenarioConfig& cfg) {
  validate_config(cfg);
  const int k = static_cast<int>(cfg.covariate_law.mu.size());
  const int d = static_cast<int>(cfg.true_beta.size()) / k;
  const int L = static_cast<int>(cfg.lambdas.size());
  const int R = cfg.replicates;
  const Eigen::VectorXd sigma =
      cfg.covariate_law.sigma_diag.array().sqrt().matrix();

  std::vector<RmseRecord> out;
  std::uint64_t cell_id = 0;
  for (Family family : cfg.families) {
    for (int n : cfg.n_clusters) {
      for (int m : cfg.m_values) {
        for (double rho2 : cfg.rho2_values) {
          std::vector<std::vector<simdetail::LambdaOutcome>> slots(
              R, std::vector<simdetail::LambdaOutcome>(L));

          auto run_replicate = [&](int rep) {
            std::mt19937_64 g(
                simdetail::derive_stream(cfg.seed, cell_id, rep));
            std::vector<ClusterRecord> recs(n);
            OverdispersionSpec spec;
            spec.rho2 = rho2;
            spec.m = m;
            spec.family = family;
            for (int i = 0; i < n; ++i) {
              ClusterRecord& r = recs[i];
              r.stratum = 0;
              r.stratum_label = "s1";
              r.cluster_label = "c" + std::to_string(i + 1);
              r.weight = 1.0;
              r.size = m;
              r.x.resize(k);
              for (int j = 0; j < k; ++j) {
                r.x[j] = cfg.covariate_law.mu[j] +
                         sigma[j] * simdetail::next_gauss(g);
              }
              spec.pi = link_probabilities(r.x, cfg.true_beta, d);
              r.counts = draw_one(spec, g).cast<double>();
            }
            SurveyDataset data(std::move(recs), d + 1, k);

            FitOptions base_opts;
            FitResult base;
            try {
              base = fit(data, 0.0, base_opts);
            } catch (const Error&) {
              return;  // all lambdas fail for this replicate
            }
            if (!base.converged) return;

            for (int li = 0; li < L; ++li) {
              const double lam = cfg.lambdas[li];
              try {
                FitResult fr;
                if (lambda_is_zero(lam)) {
                  fr = base;
                } else {
                  FitOptions o = base_opts;
                  o.initial = base.beta_hat;
                  fr = fit(data, lam, o);
                }
                if (!fr.converged) continue;
                const auto rb = rho2_binder(data, 0, fr.beta_hat);
                const auto rm = rho2_moments(data, 0, fr.beta_hat);
                auto& slot = slots[rep][li];
                slot.ok = true;
                slot.beta_sq = (fr.beta_hat - cfg.true_beta).squaredNorm();
                slot.binder_sq = (rb.rho2_hat - rho2) * (rb.rho2_hat - rho2);
                slot.moments_sq = (rm.rho2_hat - rho2) * (rm.rho2_hat - rho2);
              } catch (const Error&) {
                // per-lambda failure; slot stays !ok
              }
            }
          };

          const int workers = std::min(simdetail::thread_cap(), R);
          if (workers <= 1) {
            for (int rep = 0; rep < R; ++rep) run_replicate(rep);
          } else {
            std::atomic<int> next{0};
            std::vector<std::thread> pool;
            pool.reserve(workers);
            for (int t = 0; t < workers; ++t) {
              pool.emplace_back([&]() {
                for (int rep = next.fetch_add(1); rep < R;
                     rep = next.fetch_add(1)) {
                  run_replicate(rep);
                }
              });
            }
            for (auto& th : pool) th.join();
          }

          for (int li = 0; li < L; ++li) {
            RmseRecord rec;
            rec.family = family;
            rec.n = n;
            rec.m = m;
            rec.rho2 = rho2;
            rec.lambda = cfg.lambdas[li];
            double sb = 0.0, sr = 0.0, sm = 0.0;
            int used = 0;
            for (int rep = 0; rep < R; ++rep) {
              const auto& slot = slots[rep][li];
              if (!slot.ok) continue;
              ++used;
              sb += slot.beta_sq;
              sr += slot.binder_sq;
              sm += slot.moments_sq;
            }
            rec.replicates_used = used;
            rec.failures = R - used;
            rec.rmse_beta = used ? std::sqrt(sb / used) : 0.0;
            rec.rmse_rho2_binder = used ? std::sqrt(sr / used) : 0.0;
            rec.rmse_rho2_moments = used ? std::sqrt(sm / used) : 0.0;
            out.push_back(rec);
          }
          ++cell_id;
        }
      }
    }
  }
  return out;
}

// CSV with a stable column order and %.6g formatting; byte-identical for
// identical (config, seed).
inline void emit_results(const std::vector<RmseRecord>& records,
                         std::ostream& out) {
  if (records.empty()) throw ConfigError("no records to emit");
  out << "family,n,m,rho2,lambda,rmse_beta,rmse_rho2_binder,"
         "rmse_rho2_moments,replicates,failures\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%.6g,%.6g,%.6g,%.6g,%.6g,%d,%d",
                  family_name(r.family).c_str(), r.n, r.m, r.rho2, r.lambda,
                  r.rmse_beta, r.rmse_rho2_binder, r.rmse_rho2_moments,
                  r.replicates_used, r.failures);
    out << buf << "\n";
  }
  if (!out) throw Error("I/O failure while writing results");
}

}  // namespace phidiv
