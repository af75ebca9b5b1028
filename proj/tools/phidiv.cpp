// phidiv: fit survey-weighted multinomial logit models by minimum
// phi-divergence, report design effects and intra-cluster correlations, and
// run the simulation harness.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phidiv/phidiv.hpp"

namespace {

using namespace phidiv;

std::vector<double> parse_lambda_list(const std::string& arg) {
  std::vector<double> out;
  std::stringstream ss(arg);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_lambda_token(tok));
  if (out.empty()) throw ConfigError("--lambda list is empty");
  return out;
}

SizeConvention parse_convention(const std::string& s) {
  if (s == "common") return SizeConvention::kCommon;
  if (s == "per-cluster") return SizeConvention::kPerCluster;
  throw ConfigError("--size-convention must be 'common' or 'per-cluster'");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Report {
  FitResult fit;
  SandwichComponents sandwich;
  double nu_hat = 0.0;
  struct StratumRow {
    std::string label;
    RhoEligibility eligibility;
    OverdispersionEstimate binder;
    OverdispersionEstimate moments;
  };
  std::vector<StratumRow> strata;
};

Report build_report(const SurveyDataset& data, const FitResult& fr) {
  Report rep;
  rep.fit = fr;
  rep.sandwich = sandwich_covariance(data, fr.beta_hat);
  rep.nu_hat = rep.sandwich.design_effect_matrix.trace() /
               static_cast<double>(data.d() * data.k());
  for (int h = 0; h < data.n_strata(); ++h) {
    Report::StratumRow row;
    row.label = data.stratum_labels()[h];
    row.eligibility = stratum_rho2_eligibility(data, h);
    if (row.eligibility.eligible) {
      row.binder = rho2_binder(data, h, fr.beta_hat);
      row.moments = rho2_moments(data, h, fr.beta_hat);
    }
    rep.strata.push_back(std::move(row));
  }
  return rep;
}

void print_human(const SurveyDataset& data, const Report& rep,
                 std::ostream& out, bool deff_focus) {
  const auto& fr = rep.fit;
  out << "lambda = " << fmt("%.6g", fr.lambda) << "\n";
  out << "  converged: " << (fr.converged ? "yes" : "NO") << " ("
      << fr.iterations << " iterations), divergence = "
      << fmt("%.6g", fr.divergence_value)
      << ", score inf-norm = " << fmt("%.3g", fr.score_inf_norm) << "\n";
  const int k = data.k();
  if (!deff_focus) {
    out << "  coefficient   estimate   std.error\n";
    for (int i = 0; i < fr.beta_hat.size(); ++i) {
      const double se =
          std::sqrt(std::max(0.0, rep.sandwich.covariance(i, i)));
      char line[128];
      std::snprintf(line, sizeof line, "  %-12s %10.4f %11.4f\n",
                    detail::coefficient_name(i, k).c_str(), fr.beta_hat[i],
                    se);
      out << line;
    }
  }
  out << "  design effect nu_hat = " << fmt("%.4f", rep.nu_hat) << "\n";
  out << "  stratum rho^2 (binder, moments):\n";
  for (const auto& row : rep.strata) {
    out << "    " << row.label << ": ";
    if (!row.eligibility.eligible) {
      out << "ineligible: " << row.eligibility.reason << "\n";
      continue;
    }
    if (deff_focus) {
      out << "m_h = " << row.binder.m_h
          << ", nu_hat = " << fmt("%.4f", row.binder.nu_hat)
          << ", nu_tilde = " << fmt("%.4f", row.moments.nu_hat) << ", ";
    }
    out << fmt("%.4f", row.binder.rho2_hat) << "  "
        << fmt("%.4f", row.moments.rho2_hat);
    if (row.binder.out_of_range || row.moments.out_of_range) {
      out << "  [outside [0,1]]";
    }
    out << "\n";
  }
}

void print_csv(const SurveyDataset& data, const Report& rep,
               std::ostream& out, bool header) {
  if (header) out << "lambda,record,label,value\n";
  const std::string lam = fmt("%.17g", rep.fit.lambda);
  auto row = [&](const std::string& record, const std::string& label,
                 const std::string& value) {
    out << lam << ',' << record << ',' << label << ',' << value << "\n";
  };
  const int k = data.k();
  for (int i = 0; i < rep.fit.beta_hat.size(); ++i) {
    row("beta", detail::coefficient_name(i, k),
        fmt("%.17g", rep.fit.beta_hat[i]));
  }
  for (int i = 0; i < rep.fit.beta_hat.size(); ++i) {
    row("se", detail::coefficient_name(i, k),
        fmt("%.17g",
            std::sqrt(std::max(0.0, rep.sandwich.covariance(i, i)))));
  }
  row("fit", "divergence", fmt("%.17g", rep.fit.divergence_value));
  row("fit", "score_inf_norm", fmt("%.17g", rep.fit.score_inf_norm));
  row("fit", "iterations", std::to_string(rep.fit.iterations));
  row("fit", "converged", rep.fit.converged ? "1" : "0");
  row("deff", "nu_hat", fmt("%.17g", rep.nu_hat));
  for (const auto& srow : rep.strata) {
    row("rho2_eligible", srow.label, srow.eligibility.eligible ? "1" : "0");
    if (!srow.eligibility.eligible) continue;
    row("nu_binder", srow.label, fmt("%.17g", srow.binder.nu_hat));
    row("nu_moments", srow.label, fmt("%.17g", srow.moments.nu_hat));
    row("rho2_binder", srow.label, fmt("%.17g", srow.binder.rho2_hat));
    row("rho2_moments", srow.label, fmt("%.17g", srow.moments.rho2_hat));
  }
}

int run_fit_like(const std::string& data_path, const std::string& lambda_arg,
                 const std::string& format, const std::string& out_path,
                 const std::string& convention, bool deff_focus) {
  const std::vector<double> lambdas = parse_lambda_list(lambda_arg);
  SurveyDataset data = read_survey_csv(data_path);
  FitOptions opts;
  opts.convention = parse_convention(convention);
  const std::vector<FitResult> fits = fit_family(data, lambdas, opts);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw DataError("cannot open output '" + out_path + "'");
    out = &file;
  }

  bool all_converged = true;
  bool first = true;
  for (const auto& fr : fits) {
    const Report rep = build_report(data, fr);
    if (format == "csv") {
      print_csv(data, rep, *out, first);
    } else {
      if (!first) *out << "\n";
      print_human(data, rep, *out, deff_focus);
    }
    first = false;
    all_converged = all_converged && fr.converged;
  }
  if (!all_converged) {
    std::cerr << "error: at least one fit did not converge\n";
    return 3;
  }
  return 0;
}

int run_simulate(const std::string& config_path, const std::string& out_path,
                 bool seed_given, std::uint64_t seed_override) {
  ScenarioConfig cfg = parse_scenario_config(config_path);
  if (seed_given) cfg.seed = seed_override;
  const std::vector<RmseRecord> records = run_scenario(cfg);
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot open output '" + out_path + "'");
  emit_results(records, out);
  out.close();
  long total_failures = 0;
  long total_fits = 0;
  for (const auto& r : records) {
    total_failures += r.failures;
    total_fits += r.failures + r.replicates_used;
  }
  std::cout << "wrote " << records.size() << " rows to " << out_path
            << " (seed " << cfg.seed << "); failures: " << total_failures
            << " of " << total_fits << " fits\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pseudo minimum phi-divergence estimation for clustered "
               "multinomial survey data"};
  app.require_subcommand(1);

  std::string data_path, config_path, out_path;
  std::string lambda_arg = "0";
  std::string format = "human";
  std::string convention = "common";
  std::uint64_t seed_override = 0;
  bool seed_given = false;

  CLI::App* cmd_fit = app.add_subcommand("fit", "fit one or more lambdas");
  cmd_fit->add_option("--data", data_path, "survey CSV")->required();
  cmd_fit->add_option("--lambda", lambda_arg,
                      "comma-separated lambdas; accepts rationals like 2/3");
  cmd_fit->add_option("--format", format, "human or csv")
      ->check(CLI::IsMember({"human", "csv"}));
  cmd_fit->add_option("--out", out_path, "output file (default stdout)");
  cmd_fit->add_option("--size-convention", convention,
                      "divergence size convention: common or per-cluster")
      ->check(CLI::IsMember({"common", "per-cluster"}));

  CLI::App* cmd_deff = app.add_subcommand(
      "deff", "design effect and stratum rho^2 report");
  cmd_deff->add_option("--data", data_path, "survey CSV")->required();
  cmd_deff->add_option("--lambda", lambda_arg, "comma-separated lambdas");
  cmd_deff->add_option("--format", format, "human or csv")
      ->check(CLI::IsMember({"human", "csv"}));
  cmd_deff->add_option("--out", out_path, "output file (default stdout)");
  cmd_deff->add_option("--size-convention", convention,
                       "divergence size convention: common or per-cluster")
      ->check(CLI::IsMember({"common", "per-cluster"}));

  CLI::App* cmd_sim = app.add_subcommand("simulate", "run a scenario grid");
  cmd_sim->add_option("--config", config_path, "scenario config")->required();
  auto* seed_opt =
      cmd_sim->add_option("--seed", seed_override, "override config seed");
  cmd_sim->add_option("--out", out_path, "results CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    seed_given = seed_opt->count() > 0;
    if (app.got_subcommand(cmd_fit)) {
      return run_fit_like(data_path, lambda_arg, format, out_path, convention,
                          false);
    }
    if (app.got_subcommand(cmd_deff)) {
      return run_fit_like(data_path, lambda_arg, format, out_path, convention,
                          true);
    }
    if (app.got_subcommand(cmd_sim)) {
      if (out_path.empty()) out_path = "results.csv";
      return run_simulate(config_path, out_path, seed_given, seed_override);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "invalid parameter: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
