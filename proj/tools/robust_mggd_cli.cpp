#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "robust_mggd.hpp"

namespace rm = robust_mggd;
using rm::json;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

json matrix_json(const rm::Matrix& a) {
  json rows = json::array();
  for (rm::Index i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (rm::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const rm::Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw rm::IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw rm::IoError("write failed for " + path);
}

struct SimulateArgs {
  rm::Index k = 20, n = 100;
  double beta = 1.5;
  std::string precision = "ar3";
  double rho = 0.5, sparsity = 0.9;
  std::uint64_t precision_seed = 0, seed = 0;
  double proportion = 0.0, tau_max = 1.0;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  rm::ExperimentConfig cfg;
  cfg.K = a.k;
  cfg.N = a.n;
  cfg.beta = a.beta;
  if (a.precision == "ar3") cfg.precision_kind = rm::Ar3Kind{a.rho};
  else if (a.precision == "dense") cfg.precision_kind = rm::DenseKind{a.rho};
  else if (a.precision == "uniform_sparse") cfg.precision_kind = rm::UniformSparseKind{a.sparsity, a.precision_seed};
  else throw rm::InvalidConfig("unknown precision kind '" + a.precision + "'");
  cfg.perturbation = {a.proportion, a.tau_max, 0};
  cfg.master_seed = a.seed;
  cfg.validate();
  const rm::Truth truth = rm::make_truth(cfg);
  const rm::SampleSet set = rm::generate_run_data(cfg, truth, 0);
  rm::write_sample_csv(set, a.out);
  return kOk;
}

struct EstimateArgs {
  std::string input;
  std::optional<double> beta;
  double lambda = 0.0, elastic_eps = 0.0;
  double alpha = 1.0, kappa_margin = 1.1;
  double tol = 1e-8;
  std::size_t max_iter = 20000, log_every = 0;
  bool default_steps = false;
  std::optional<double> gamma;
  std::string trace, out;
};

int run_estimate(const EstimateArgs& a) {
  const rm::SampleSet set = rm::read_sample_csv(a.input);
  const double beta = a.beta ? *a.beta : set.params.beta;
  const rm::Index k = set.dim();
  rm::RegularizerSpec spec;
  if (a.elastic_eps > 0.0) spec.gQ = rm::GqElasticNet{a.lambda, a.elastic_eps};
  else if (a.lambda > 0.0) spec.gQ = rm::GqL1{a.lambda};
  spec.gtheta = rm::default_theta_potential(k, beta, a.kappa_margin, a.alpha);
  const rm::Matrix ymat = rm::build_Y_matrix(set.observations);
  rm::SolverConfig cfg = a.default_steps ? rm::default_config(ymat) : rm::balanced_config(ymat, a.gamma);
  cfg.tol_rel = a.tol;
  cfg.max_iter = a.max_iter;
  cfg.log_every = a.trace.empty() ? a.log_every : std::max<std::size_t>(a.log_every, 1);
  const rm::EstimateResult r = rm::estimate(set.observations, beta, spec, cfg);
  if (!a.trace.empty()) {
    std::ostringstream ss;
    rm::write_trace_csv(r.diagnostics, ss);
    write_text(a.trace, ss.str());
  }
  const auto& d = r.diagnostics;
  json j = {{"beta", beta},
            {"mu", vector_json(r.mu)},
            {"scatter", matrix_json(r.scatter.matrix())},
            {"precision", matrix_json(r.precision.matrix())},
            {"covariance", matrix_json(r.covariance.matrix())},
            {"tau", vector_json(r.tau)},
            {"diagnostics",
             {{"iterations", d.iterations},
              {"converged", d.converged},
              {"final_rel_change", d.rel_change_trace.empty() ? 0.0 : d.rel_change_trace.back()},
              {"final_cost", rm::cost_f(r.primal, set.observations, spec, beta)}}}};
  write_text(a.out, j.dump(2) + "\n");
  return kOk;
}

int run_benchmark(const std::string& config, const std::string& output) {
  rm::ExperimentConfig cfg = rm::load_experiment_config(config);
  if (!output.empty()) cfg.output_path = output;
  if (cfg.output_path.empty()) throw rm::InvalidConfig("no output_path given");
  const rm::MetricReport report = rm::run_monte_carlo(cfg);
  rm::emit_report(report, cfg.output_path);
  for (const auto& m : report.estimators)
    std::cerr << m.name << ": mse_mu=" << m.mse_mu << " mse_C=" << m.mse_C << " mse_Cinv=" << m.mse_Cinv
              << " failed=" << m.n_failed << "\n";
  return kOk;
}

struct FbarArgs {
  double beta = 1.7, kappa_bar = 1.1, theta_bar = 1.0;
  std::vector<double> alphas{1.0, 1.5, 2.0};
  bool unregularized = true;
  double lo = 1e-2, hi = 1e2;
  std::size_t points = 400;
  std::string out, theta_hat_out;
};

int run_fbar(const FbarArgs& a) {
  std::vector<rm::FbarParams> sets;
  if (a.unregularized) sets.push_back({a.beta, 1.0, 0.0, a.theta_bar});
  for (double alpha : a.alphas) sets.push_back({a.beta, alpha, a.kappa_bar, a.theta_bar});
  for (const auto& s : sets) s.validate();
  std::ostringstream ss;
  rm::write_fbar_csv(rm::fbar_curve(sets, rm::log_grid(a.lo, a.hi, a.points)), ss);
  write_text(a.out, ss.str());
  if (!a.theta_hat_out.empty()) {
    std::vector<rm::FbarParams> reg(sets.begin() + (a.unregularized ? 1 : 0), sets.end());
    std::ostringstream th;
    rm::write_theta_hat_csv(rm::theta_hat_curve(reg, rm::log_grid(1.0, 100.0, a.points)), th);
    write_text(a.theta_hat_out, th.str());
  }
  return kOk;
}

int run_tune(const std::string& config, double target) {
  const rm::ExperimentConfig cfg = rm::load_experiment_config(config);
  const rm::LambdaTuning t = rm::tune_lambda(cfg, target);
  json j = {{"lambda", t.lambda}, {"sparsity", t.sparsity}, {"steps", t.steps}, {"warning", t.warning}};
  std::cout << j.dump(2) << "\n";
  if (t.warning) std::cerr << "warning: target sparsity not reachable in [1e-4, 1e2]\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust MGGD parameter estimation under multiplicative perturbations"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Draw a perturbed sample set and write it as CSV");
  simulate->add_option("-K,--dim", sim.k, "Dimension")->check(CLI::PositiveNumber);
  simulate->add_option("-N,--samples", sim.n, "Number of samples")->check(CLI::PositiveNumber);
  simulate->add_option("--beta", sim.beta, "Shape parameter (> 1)");
  simulate->add_option("--precision", sim.precision, "ar3 | dense | uniform_sparse");
  simulate->add_option("--rho", sim.rho, "Correlation of ar3/dense precision");
  simulate->add_option("--sparsity", sim.sparsity, "Zero fraction for uniform_sparse");
  simulate->add_option("--precision-seed", sim.precision_seed, "Seed of the uniform_sparse precision");
  simulate->add_option("--proportion", sim.proportion, "Fraction of perturbed samples");
  simulate->add_option("--tau-max", sim.tau_max, "Maximum perturbation level");
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("-o,--out", sim.out, "Output CSV")->required();

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Estimate (mu, C, tau) from a sample CSV");
  estimate->add_option("-i,--input", est.input, "Sample CSV")->required();
  estimate->add_option("--beta", est.beta, "Shape parameter (default: from the file)");
  estimate->add_option("--lambda", est.lambda, "l1 weight on Q (0 = none)");
  estimate->add_option("--elastic-eps", est.elastic_eps, "Quadratic weight; > 0 selects the elastic net");
  estimate->add_option("--alpha", est.alpha, "Exponent of the theta potential");
  estimate->add_option("--kappa-margin", est.kappa_margin, "kappa / (K(1-1/beta))");
  estimate->add_option("--tol", est.tol, "Relative-change tolerance");
  estimate->add_option("--max-iter", est.max_iter, "Iteration cap");
  estimate->add_option("--log-every", est.log_every, "Cost logging period");
  estimate->add_flag("--default-steps", est.default_steps, "Use omega = 1 step sizes with gamma = 1.9");
  estimate->add_option("--gamma", est.gamma, "Primal step for the balanced step sizes");
  estimate->add_option("--trace", est.trace, "Write iter,cost,rel_change CSV here");
  estimate->add_option("-o,--out", est.out, "Output JSON (default stdout)");

  std::string bench_config, bench_output;
  auto* benchmark = app.add_subcommand("benchmark", "Run a Monte Carlo experiment from a JSON config");
  benchmark->add_option("-c,--config", bench_config, "Experiment config JSON")->required();
  benchmark->add_option("-o,--out", bench_output, "Report CSV path (overrides output_path)");

  FbarArgs fb;
  auto* fbar = app.add_subcommand("fbar-curve", "Tabulate the expected per-sample cost in theta");
  fbar->add_option("--beta", fb.beta, "Shape parameter");
  fbar->add_option("--kappa-bar", fb.kappa_bar, "Normalized kappa (> 1)");
  fbar->add_option("--theta-bar", fb.theta_bar, "True theta");
  fbar->add_option("--alphas", fb.alphas, "Exponents alpha")->delimiter(',');
  fbar->add_flag("!--no-unregularized", fb.unregularized, "Skip the kappa = 0 curve");
  fbar->add_option("--lo", fb.lo, "Grid start");
  fbar->add_option("--hi", fb.hi, "Grid end");
  fbar->add_option("--points", fb.points, "Grid size");
  fbar->add_option("-o,--out", fb.out, "Output CSV (default stdout)");
  fbar->add_option("--theta-hat-out", fb.theta_hat_out, "Also write theta_hat against theta_bar");

  std::string tune_config;
  double tune_target = 0.0;
  auto* tune = app.add_subcommand("tune-lambda", "Find lambda reaching a target sparsity of Q");
  tune->add_option("-c,--config", tune_config, "Experiment config JSON")->required();
  tune->add_option("-t,--target", tune_target, "Target off-diagonal zero fraction")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*estimate) return run_estimate(est);
    if (*benchmark) return run_benchmark(bench_config, bench_output);
    if (*fbar) return run_fbar(fb);
    if (*tune) return run_tune(tune_config, tune_target);
  } catch (const rm::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const rm::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const rm::InvalidInput& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const rm::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kOk;
}
