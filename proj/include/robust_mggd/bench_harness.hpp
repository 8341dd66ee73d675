#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "robust_mggd/baselines.hpp"
#include "robust_mggd/mggd_model.hpp"
#include "robust_mggd/objective.hpp"
#include "robust_mggd/pd_solver.hpp"

namespace robust_mggd {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Ground-truth precision matrices

// Symmetric five-band matrix with rho^|i-j| for |i-j| <= 2.
inline SymMatrix gen_precision_ar3(Index k, double rho) {
  if (k < 1) throw InvalidInput("gen_precision_ar3: K must be >= 1");
  if (!(std::abs(rho) < 1.0)) throw InvalidInput("gen_precision_ar3: need |rho| < 1");
  Matrix p = Matrix::Zero(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = std::max<Index>(0, i - 2); j <= std::min<Index>(k - 1, i + 2); ++j)
      p(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
  SymMatrix out(p);
  if (!is_spd(out)) throw InvalidInput("gen_precision_ar3: result is not positive definite");
  return out;
}

// Kac-Murdock-Szego matrix rho^|i-j|.
inline SymMatrix gen_precision_dense(Index k, double rho) {
  if (k < 1) throw InvalidInput("gen_precision_dense: K must be >= 1");
  if (!(std::abs(rho) < 1.0)) throw InvalidInput("gen_precision_dense: need |rho| < 1");
  Matrix p(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) p(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
  return SymMatrix(p);
}

// Unit diagonal plus round((1 - sparsity) K(K-1)/2) random off-diagonal pairs
// drawn from U[-0.5, 0.5]; shifted by (|lambda_min| + 0.1) Id when not SPD.
inline SymMatrix gen_precision_uniform_sparse(Index k, double sparsity, std::uint64_t seed) {
  if (k < 1) throw InvalidInput("gen_precision_uniform_sparse: K must be >= 1");
  if (!(sparsity >= 0.0 && sparsity <= 1.0))
    throw InvalidInput("gen_precision_uniform_sparse: sparsity must lie in [0,1]");
  std::mt19937_64 rng(seed);
  std::vector<std::pair<Index, Index>> pairs;
  for (Index j = 0; j < k; ++j)
    for (Index i = j + 1; i < k; ++i) pairs.emplace_back(i, j);
  const auto n_nonzero = static_cast<std::size_t>(
      std::llround((1.0 - sparsity) * static_cast<double>(pairs.size())));
  std::shuffle(pairs.begin(), pairs.end(), rng);
  std::uniform_real_distribution<double> value(-0.5, 0.5);
  Matrix p = Matrix::Identity(k, k);
  for (std::size_t e = 0; e < n_nonzero; ++e) {
    double v = 0.0;
    while (v == 0.0) v = value(rng);
    p(pairs[e].first, pairs[e].second) = v;
    p(pairs[e].second, pairs[e].first) = v;
  }
  SymMatrix out(p);
  const double lo = eig_sym(out).eigenvalues(0);
  if (!(lo > 0.0) || !is_spd(out)) {
    p.diagonal().array() += std::abs(lo) + 0.1;
    out = SymMatrix(p);
  }
  return out;
}

// Fraction of off-diagonal entries with |a_ij| < threshold.
inline double offdiag_zero_fraction(const Matrix& a, double threshold = 1e-8) {
  const Index k = a.rows();
  if (k < 2) return 0.0;
  std::size_t zeros = 0;
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j)
      if (i != j && std::abs(a(i, j)) < threshold) ++zeros;
  return static_cast<double>(zeros) / static_cast<double>(k * (k - 1));
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct Ar3Kind {
  double rho = 0.5;
};
struct DenseKind {
  double rho = 0.5;
};
struct UniformSparseKind {
  double sparsity = 0.9;
  std::uint64_t seed = 0;
};
using PrecisionKind = std::variant<Ar3Kind, DenseKind, UniformSparseKind>;

inline SymMatrix generate_precision(const PrecisionKind& kind, Index k) {
  return std::visit(
      [k](const auto& p) -> SymMatrix {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Ar3Kind>) return gen_precision_ar3(k, p.rho);
        else if constexpr (std::is_same_v<T, DenseKind>) return gen_precision_dense(k, p.rho);
        else return gen_precision_uniform_sparse(k, p.sparsity, p.seed);
      },
      kind);
}

enum class EstimatorType { empirical, tyler, tyler_shrinkage, proposed };

inline const char* to_string(EstimatorType t) {
  switch (t) {
    case EstimatorType::empirical: return "empirical";
    case EstimatorType::tyler: return "tyler";
    case EstimatorType::tyler_shrinkage: return "tyler_shrinkage";
    case EstimatorType::proposed: return "proposed";
  }
  return "?";
}

// Options of the penalized estimator: l1 on Q, g_m = 0, generalized Gamma
// potential on theta. Either a fixed lambda or a target sparsity of Q.
struct ProposedOptions {
  std::optional<double> lambda;
  std::optional<double> target_sparsity;
  // Non-empty: lambda picked from this grid by the smallest precision error
  // against the truth on pilot datasets.
  std::vector<double> lambda_grid;
  double kappa_margin = 1.1;
  double alpha = 1.0;
  double tol_rel = 1e-7;
  std::size_t max_iter = 20000;
  std::optional<double> gamma;
  // The overall scale of C is set by the theta prior (mean theta = 1 at the
  // optimum), not by the data. "oracle" fits it to the truth like Tyler's.
  bool oracle_scale = true;
  bool penalize_diagonal = true;
};

struct EstimatorSpec {
  EstimatorType type = EstimatorType::empirical;
  std::string label;
  std::optional<double> rho;  // tyler_shrinkage; absent = best of a grid against truth
  ProposedOptions proposed;

  std::string name() const { return label.empty() ? to_string(type) : label; }
};

struct ExperimentConfig {
  Index K = 20;
  Index N = 100;
  double beta = 1.5;
  PrecisionKind precision_kind = Ar3Kind{};
  PerturbationSpec perturbation{};
  std::size_t n_mc = 1;
  std::vector<EstimatorSpec> estimators;
  std::string output_path;
  std::uint64_t master_seed = 0;

  void validate() const {
    if (K < 1) throw InvalidConfig("K must be >= 1");
    if (N < 1) throw InvalidConfig("N must be >= 1");
    if (!(beta > 1.0)) throw InvalidConfig("beta must exceed 1");
    if (n_mc < 1) throw InvalidConfig("n_mc must be >= 1");
    try {
      perturbation.validate();
    } catch (const InvalidInput& e) {
      throw InvalidConfig(e.what());
    }
    std::set<std::string> names;
    for (const auto& e : estimators) {
      if (!names.insert(e.name()).second) throw InvalidConfig("duplicate estimator name " + e.name());
      if (e.rho && !(*e.rho > 0.0 && *e.rho < 1.0))
        throw InvalidConfig("tyler_shrinkage rho must lie in (0,1)");
      const auto& p = e.proposed;
      if (p.lambda && !(*p.lambda >= 0.0)) throw InvalidConfig("proposed lambda must be >= 0");
      if (p.target_sparsity && !(*p.target_sparsity >= 0.0 && *p.target_sparsity < 1.0))
        throw InvalidConfig("proposed target_sparsity must lie in [0,1)");
      if (int(p.lambda.has_value()) + int(p.target_sparsity.has_value()) + int(!p.lambda_grid.empty()) > 1)
        throw InvalidConfig("proposed takes at most one of lambda, target_sparsity, lambda_grid");
      for (double l : p.lambda_grid)
        if (!(l >= 0.0)) throw InvalidConfig("proposed lambda_grid entries must be >= 0");
      if (!(p.kappa_margin > 1.0)) throw InvalidConfig("proposed kappa_margin must exceed 1");
      if (!(p.alpha >= 1.0)) throw InvalidConfig("proposed alpha must be >= 1");
      if (!(p.tol_rel > 0.0)) throw InvalidConfig("proposed tol_rel must be positive");
      if (p.gamma && !(*p.gamma > 0.0)) throw InvalidConfig("proposed gamma must be positive");
    }
  }
};

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw InvalidConfig(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw InvalidConfig(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_required(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw InvalidConfig(where + ": missing key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidConfig(where + ": bad value for '" + key + "': " + e.what());
  }
}

template <class T>
T get_or(const json& obj, const std::string& key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return get_required<T>(obj, key, where);
}

template <class T>
std::optional<T> get_optional(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return get_required<T>(obj, key, where);
}

inline std::uint64_t get_seed(const json& obj, const std::string& key, std::uint64_t fallback,
                              const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw InvalidConfig(where + ": '" + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::size_t get_count(const json& obj, const std::string& key, std::size_t fallback,
                             const std::string& where, bool required = false) {
  if (!obj.contains(key)) {
    if (required) throw InvalidConfig(where + ": missing key '" + key + "'");
    return fallback;
  }
  return static_cast<std::size_t>(get_seed(obj, key, fallback, where));
}

}  // namespace detail

inline PrecisionKind precision_kind_from_json(const json& j) {
  const std::string where = "precision_kind";
  const auto type = detail::get_required<std::string>(j, "type", where);
  if (type == "ar3") {
    detail::check_keys(j, {"type", "rho"}, where);
    return Ar3Kind{detail::get_or(j, "rho", 0.5, where)};
  }
  if (type == "dense") {
    detail::check_keys(j, {"type", "rho"}, where);
    return DenseKind{detail::get_or(j, "rho", 0.5, where)};
  }
  if (type == "uniform_sparse") {
    detail::check_keys(j, {"type", "sparsity", "seed"}, where);
    return UniformSparseKind{detail::get_or(j, "sparsity", 0.9, where), detail::get_seed(j, "seed", 0, where)};
  }
  throw InvalidConfig(where + ": unknown type '" + type + "'");
}

inline json to_json(const PrecisionKind& kind) {
  return std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Ar3Kind>) return {{"type", "ar3"}, {"rho", p.rho}};
        else if constexpr (std::is_same_v<T, DenseKind>) return {{"type", "dense"}, {"rho", p.rho}};
        else return {{"type", "uniform_sparse"}, {"sparsity", p.sparsity}, {"seed", p.seed}};
      },
      kind);
}

inline EstimatorSpec estimator_from_json(const json& j) {
  const std::string where = "estimators";
  EstimatorSpec e;
  const auto type = detail::get_required<std::string>(j, "type", where);
  if (type == "empirical" || type == "tyler") {
    detail::check_keys(j, {"type", "label"}, where);
    e.type = type == "empirical" ? EstimatorType::empirical : EstimatorType::tyler;
  } else if (type == "tyler_shrinkage") {
    detail::check_keys(j, {"type", "label", "rho"}, where);
    e.type = EstimatorType::tyler_shrinkage;
    e.rho = detail::get_optional<double>(j, "rho", where);
  } else if (type == "proposed") {
    detail::check_keys(j, {"type", "label", "lambda", "target_sparsity", "lambda_grid", "kappa_margin", "alpha", "tol_rel",
                           "max_iter", "gamma", "scale", "penalize_diagonal"},
                       where);
    e.type = EstimatorType::proposed;
    auto& p = e.proposed;
    p.lambda = detail::get_optional<double>(j, "lambda", where);
    p.target_sparsity = detail::get_optional<double>(j, "target_sparsity", where);
    p.lambda_grid = detail::get_or<std::vector<double>>(j, "lambda_grid", {}, where);
    p.kappa_margin = detail::get_or(j, "kappa_margin", p.kappa_margin, where);
    p.alpha = detail::get_or(j, "alpha", p.alpha, where);
    p.tol_rel = detail::get_or(j, "tol_rel", p.tol_rel, where);
    p.max_iter = detail::get_count(j, "max_iter", p.max_iter, where);
    p.gamma = detail::get_optional<double>(j, "gamma", where);
    const auto scale = detail::get_or<std::string>(j, "scale", "oracle", where);
    if (scale != "oracle" && scale != "native") throw InvalidConfig(where + ": scale must be oracle or native");
    p.oracle_scale = scale == "oracle";
    p.penalize_diagonal = detail::get_or(j, "penalize_diagonal", true, where);
  } else {
    throw InvalidConfig(where + ": unknown estimator type '" + type + "'");
  }
  e.label = detail::get_or<std::string>(j, "label", "", where);
  return e;
}

inline json to_json(const EstimatorSpec& e) {
  json j = {{"type", to_string(e.type)}};
  if (!e.label.empty()) j["label"] = e.label;
  if (e.type == EstimatorType::tyler_shrinkage) j["rho"] = e.rho ? json(*e.rho) : json(nullptr);
  if (e.type == EstimatorType::proposed) {
    const auto& p = e.proposed;
    j["lambda"] = p.lambda ? json(*p.lambda) : json(nullptr);
    j["target_sparsity"] = p.target_sparsity ? json(*p.target_sparsity) : json(nullptr);
    j["lambda_grid"] = p.lambda_grid;
    j["kappa_margin"] = p.kappa_margin;
    j["alpha"] = p.alpha;
    j["tol_rel"] = p.tol_rel;
    j["max_iter"] = p.max_iter;
    j["gamma"] = p.gamma ? json(*p.gamma) : json(nullptr);
    j["scale"] = p.oracle_scale ? "oracle" : "native";
    j["penalize_diagonal"] = p.penalize_diagonal;
  }
  return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  const std::string where = "config";
  detail::check_keys(j, {"K", "N", "beta", "precision_kind", "perturbation", "n_mc", "estimators", "output_path",
                         "master_seed"},
                     where);
  ExperimentConfig c;
  c.K = static_cast<Index>(detail::get_count(j, "K", 0, where, true));
  c.N = static_cast<Index>(detail::get_count(j, "N", 0, where, true));
  c.beta = detail::get_required<double>(j, "beta", where);
  if (!j.contains("precision_kind")) throw InvalidConfig(where + ": missing key 'precision_kind'");
  c.precision_kind = precision_kind_from_json(j.at("precision_kind"));
  if (j.contains("perturbation")) {
    const json& p = j.at("perturbation");
    detail::check_keys(p, {"proportion", "tau_max", "seed"}, "perturbation");
    c.perturbation.proportion = detail::get_or(p, "proportion", 0.0, "perturbation");
    c.perturbation.tau_max = detail::get_or(p, "tau_max", 1.0, "perturbation");
    c.perturbation.seed = detail::get_seed(p, "seed", 0, "perturbation");
  }
  c.n_mc = detail::get_count(j, "n_mc", 0, where, true);
  if (!j.contains("estimators") || !j.at("estimators").is_array())
    throw InvalidConfig(where + ": 'estimators' must be an array");
  for (const auto& e : j.at("estimators")) c.estimators.push_back(estimator_from_json(e));
  c.output_path = detail::get_or<std::string>(j, "output_path", "", where);
  c.master_seed = detail::get_seed(j, "master_seed", 0, where);
  c.validate();
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  json est = json::array();
  for (const auto& e : c.estimators) est.push_back(to_json(e));
  return {{"K", c.K},
          {"N", c.N},
          {"beta", c.beta},
          {"precision_kind", to_json(c.precision_kind)},
          {"perturbation",
           {{"proportion", c.perturbation.proportion},
            {"tau_max", c.perturbation.tau_max},
            {"seed", c.perturbation.seed}}},
          {"n_mc", c.n_mc},
          {"estimators", est},
          {"output_path", c.output_path},
          {"master_seed", c.master_seed}};
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Seeds and worker pool

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class SeedStream : std::uint64_t { mean = 1, samples = 2, perturbation = 3 };

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t run, SeedStream stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(run * 4 + static_cast<std::uint64_t>(stream)));
}

// Run index reserved for pilot data used by lambda tuning.
inline constexpr std::uint64_t kPilotRun = ~std::uint64_t{0} >> 2;

// ROBUST_MGGD_THREADS if set, otherwise the hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("ROBUST_MGGD_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw InvalidConfig("ROBUST_MGGD_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Single-run machinery

struct Truth {
  double beta = 2.0;
  SymMatrix scatter;
  SymMatrix precision_scatter;  // scatter^-1
  SymMatrix covariance;
  SymMatrix covariance_inv;
};

inline Truth make_truth(const ExperimentConfig& cfg) {
  Truth t;
  t.beta = cfg.beta;
  t.precision_scatter = generate_precision(cfg.precision_kind, cfg.K);
  t.scatter = matrix_power(t.precision_scatter, -1.0);
  const double f = covariance_factor(cfg.beta, cfg.K);
  t.covariance = f * t.scatter;
  t.covariance_inv = t.precision_scatter / f;
  return t;
}

// Draws mu ~ N(0, Id), the samples and their perturbation for one run.
inline SampleSet generate_run_data(const ExperimentConfig& cfg, const Truth& truth, std::uint64_t run) {
  std::mt19937_64 rng(derive_seed(cfg.master_seed, run, SeedStream::mean));
  std::normal_distribution<double> normal(0.0, 1.0);
  MggdParams params;
  params.beta = cfg.beta;
  params.scatter = truth.scatter;
  params.mu = Vector(cfg.K);
  for (Index i = 0; i < cfg.K; ++i) params.mu(i) = normal(rng);
  Matrix centred_params_mu = sample_mggd(
      MggdParams{cfg.beta, Vector::Zero(cfg.K), truth.scatter}, cfg.N,
      derive_seed(cfg.master_seed, run, SeedStream::samples));
  PerturbationSpec ps = cfg.perturbation;
  ps.seed = derive_seed(cfg.master_seed ^ cfg.perturbation.seed, run, SeedStream::perturbation);
  return perturb(centred_params_mu, params, ps);
}

struct PointEstimate {
  Vector mu;
  SymMatrix covariance;
  SymMatrix precision;
  bool converged = true;
};

// argmin_s ||s a - b||_F.
inline SymMatrix oracle_scaled(const SymMatrix& a, const SymMatrix& b) {
  const double denom = a.matrix().squaredNorm();
  if (!(denom > 0.0)) return a;
  return (a.matrix().cwiseProduct(b.matrix()).sum() / denom) * a;
}

inline RegularizerSpec proposed_spec(const ProposedOptions& opt, Index k, double beta, double lambda) {
  RegularizerSpec spec;
  if (lambda > 0.0) spec.gQ = GqL1{lambda, opt.penalize_diagonal};
  spec.gm = GmZero{};
  spec.gtheta = default_theta_potential(k, beta, opt.kappa_margin, opt.alpha);
  return spec;
}

inline SolverConfig proposed_solver_config(const ProposedOptions& opt, const Matrix& y) {
  SolverConfig cfg = balanced_config(build_Y_matrix(y), opt.gamma);
  cfg.tol_rel = opt.tol_rel;
  cfg.max_iter = opt.max_iter;
  return cfg;
}

inline const std::vector<double>& shrinkage_rho_grid() {
  static const std::vector<double> grid{0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  return grid;
}

inline PointEstimate run_estimator(const EstimatorSpec& e, const Matrix& y, double beta, const Truth& truth,
                                   double lambda) {
  PointEstimate out;
  switch (e.type) {
    case EstimatorType::empirical: {
      auto [mean, cov] = empirical(y);
      out.mu = mean;
      out.precision = matrix_power(cov, -1.0);
      out.covariance = std::move(cov);
      break;
    }
    case EstimatorType::tyler: {
      const TylerResult r = tyler_joint(y);
      out.mu = r.mu;
      out.covariance = oracle_scaled(r.scatter, truth.covariance);
      out.precision = oracle_scaled(matrix_power(r.scatter, -1.0), truth.covariance_inv);
      out.converged = r.converged;
      break;
    }
    case EstimatorType::tyler_shrinkage: {
      const Vector mean = y.rowwise().mean();
      std::vector<double> rhos = e.rho ? std::vector<double>{*e.rho} : shrinkage_rho_grid();
      double best = kInf;
      for (double rho : rhos) {
        const TylerResult r = tyler_shrinkage(y, mean, rho);
        const SymMatrix prec = oracle_scaled(matrix_power(r.scatter, -1.0), truth.covariance_inv);
        const double err = (prec.matrix() - truth.covariance_inv.matrix()).norm();
        if (err < best) {
          best = err;
          out.mu = mean;
          out.covariance = oracle_scaled(r.scatter, truth.covariance);
          out.precision = prec;
          out.converged = r.converged;
        }
      }
      break;
    }
    case EstimatorType::proposed: {
      const Index k = y.rows();
      const EstimateResult r = estimate(y, beta, proposed_spec(e.proposed, k, beta, lambda),
                                        proposed_solver_config(e.proposed, y));
      const double f = covariance_factor(beta, k);
      out.mu = r.mu;
      out.covariance = r.covariance;
      out.precision = r.precision / f;
      if (e.proposed.oracle_scale) {
        out.covariance = oracle_scaled(out.covariance, truth.covariance);
        out.precision = oracle_scaled(out.precision, truth.covariance_inv);
      }
      out.converged = r.diagnostics.converged;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lambda tuning

struct LambdaTuning {
  std::string method = "sparsity";  // or "oracle_grid"
  double target = 0.0;              // sparsity target, or the best mean squared precision error
  double lambda = 0.0;
  double sparsity = 0.0;
  std::size_t steps = 0;
  bool warning = false;  // target not reachable inside [lambda_min, lambda_max]
};

inline constexpr double kLambdaMin = 1e-4;
inline constexpr double kLambdaMax = 1e2;

// Bisection on log(lambda) until the off-diagonal zero fraction of Q lies
// within +-0.02 of the target, or 30 steps.
inline LambdaTuning tune_lambda(const Matrix& y, double beta, const ProposedOptions& opt, double target) {
  if (!(target >= 0.0 && target < 1.0)) throw InvalidInput("tune_lambda: target must lie in [0,1)");
  const Index k = y.rows();
  const SolverConfig scfg = proposed_solver_config(opt, y);
  const auto sparsity_at = [&](double lambda) {
    const SolveResult r = solve(y, beta, proposed_spec(opt, k, beta, lambda), scfg);
    return offdiag_zero_fraction(r.Q_sparse.matrix());
  };
  const double band = 0.02;
  LambdaTuning t;
  const double s_lo = sparsity_at(kLambdaMin);
  t.target = target;
  if (s_lo >= target - band) {
    t.lambda = kLambdaMin;
    t.sparsity = s_lo;
    t.warning = s_lo > target + band;
    return t;
  }
  const double s_hi = sparsity_at(kLambdaMax);
  if (s_hi < target - band) {
    t.lambda = kLambdaMax;
    t.sparsity = s_hi;
    t.warning = true;
    return t;
  }
  double lo = std::log(kLambdaMin), hi = std::log(kLambdaMax);
  t.lambda = kLambdaMax;
  t.sparsity = s_hi;
  for (std::size_t step = 1; step <= 30; ++step) {
    const double mid = 0.5 * (lo + hi);
    const double s = sparsity_at(std::exp(mid));
    t.lambda = std::exp(mid);
    t.sparsity = s;
    t.steps = step;
    if (std::abs(s - target) <= band) return t;
    (s < target ? lo : hi) = mid;
  }
  return t;
}

// Off-diagonal fraction of the true Q = C^(-1/2) below 1e-3 of its largest
// entry. Q is the penalized variable and rarely has exact zeros.
inline double default_target_sparsity(const Truth& truth) {
  const Matrix q = matrix_power(truth.precision_scatter, 0.5).matrix();
  return offdiag_zero_fraction(q, 1e-3 * q.cwiseAbs().maxCoeff());
}

inline constexpr std::size_t kOraclePilots = 2;

inline LambdaTuning select_lambda_oracle(const ExperimentConfig& cfg, const Truth& truth, const EstimatorSpec& spec) {
  std::vector<SampleSet> pilots;
  for (std::size_t i = 0; i < kOraclePilots; ++i) pilots.push_back(generate_run_data(cfg, truth, kPilotRun + 1 + i));
  LambdaTuning t;
  t.method = "oracle_grid";
  t.target = kInf;
  for (double lambda : spec.proposed.lambda_grid) {
    double err = 0.0;
    for (const auto& p : pilots) {
      const PointEstimate est = run_estimator(spec, p.observations, cfg.beta, truth, lambda);
      err += (est.precision.matrix() - truth.covariance_inv.matrix()).squaredNorm();
    }
    err /= static_cast<double>(pilots.size());
    ++t.steps;
    if (err < t.target) {
      t.target = err;
      t.lambda = lambda;
    }
  }
  return t;
}

inline const EstimatorSpec* first_proposed(const ExperimentConfig& cfg) {
  for (const auto& e : cfg.estimators)
    if (e.type == EstimatorType::proposed) return &e;
  return nullptr;
}

// Tunes on a pilot dataset drawn from the experiment's own generator.
inline LambdaTuning tune_lambda(const ExperimentConfig& cfg, double target_sparsity) {
  cfg.validate();
  const Truth truth = make_truth(cfg);
  const SampleSet pilot = generate_run_data(cfg, truth, kPilotRun);
  const EstimatorSpec* p = first_proposed(cfg);
  return tune_lambda(pilot.observations, cfg.beta, p ? p->proposed : ProposedOptions{}, target_sparsity);
}

// ---------------------------------------------------------------------------
// Monte Carlo loop and report

struct RunRecord {
  bool ok = false;
  std::string error;
  double err_mu = 0.0;
  double err_C = 0.0;
  double err_Cinv = 0.0;
  double runtime = 0.0;
  bool converged = true;
};

struct EstimatorMetrics {
  std::string name;
  double mse_mu = 0.0, mse_C = 0.0, mse_Cinv = 0.0;
  double consistency_mu = 0.0, consistency_C = 0.0, consistency_Cinv = 0.0;
  std::size_t n_ok = 0, n_failed = 0, n_not_converged = 0;
  double runtime_s = 0.0;
  std::optional<double> lambda;
  std::optional<LambdaTuning> tuning;
  std::vector<RunRecord> runs;
};

struct MetricReport {
  ExperimentConfig config;
  std::vector<EstimatorMetrics> estimators;
};

inline EstimatorMetrics aggregate(std::string name, std::vector<RunRecord> runs) {
  EstimatorMetrics m;
  m.name = std::move(name);
  for (const auto& r : runs) {
    m.runtime_s += r.runtime;
    if (!r.ok) {
      ++m.n_failed;
      continue;
    }
    ++m.n_ok;
    if (!r.converged) ++m.n_not_converged;
    m.mse_mu += r.err_mu * r.err_mu;
    m.mse_C += r.err_C * r.err_C;
    m.mse_Cinv += r.err_Cinv * r.err_Cinv;
    m.consistency_mu += r.err_mu;
    m.consistency_C += r.err_C;
    m.consistency_Cinv += r.err_Cinv;
  }
  if (m.n_ok > 0) {
    const double n = static_cast<double>(m.n_ok);
    for (double* v : {&m.mse_mu, &m.mse_C, &m.mse_Cinv, &m.consistency_mu, &m.consistency_C, &m.consistency_Cinv})
      *v /= n;
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    m.mse_mu = m.mse_C = m.mse_Cinv = m.consistency_mu = m.consistency_C = m.consistency_Cinv = nan;
  }
  m.runs = std::move(runs);
  return m;
}

// Every estimator sees the same data in a given run. Failures are recorded
// per run and excluded from the averages.
inline MetricReport run_monte_carlo(const ExperimentConfig& cfg) {
  cfg.validate();
  const Truth truth = make_truth(cfg);
  const std::size_t n_est = cfg.estimators.size();

  std::vector<std::optional<LambdaTuning>> tuning(n_est);
  std::vector<double> lambdas(n_est, 0.0);
  for (std::size_t e = 0; e < n_est; ++e) {
    const auto& spec = cfg.estimators[e];
    if (spec.type != EstimatorType::proposed) continue;
    if (spec.proposed.lambda) {
      lambdas[e] = *spec.proposed.lambda;
    } else if (!spec.proposed.lambda_grid.empty()) {
      tuning[e] = select_lambda_oracle(cfg, truth, spec);
      lambdas[e] = tuning[e]->lambda;
    } else {
      const double target = spec.proposed.target_sparsity ? *spec.proposed.target_sparsity
                                                          : default_target_sparsity(truth);
      const SampleSet pilot = generate_run_data(cfg, truth, kPilotRun);
      tuning[e] = tune_lambda(pilot.observations, cfg.beta, spec.proposed, target);
      lambdas[e] = tuning[e]->lambda;
    }
  }

  std::vector<std::vector<RunRecord>> records(n_est, std::vector<RunRecord>(cfg.n_mc));
  parallel_for(cfg.n_mc, worker_count(), [&](std::size_t run) {
    SampleSet data;
    std::string data_error;
    try {
      data = generate_run_data(cfg, truth, run);
    } catch (const std::exception& ex) {
      data_error = ex.what();
    }
    for (std::size_t e = 0; e < n_est; ++e) {
      RunRecord& rec = records[e][run];
      if (!data_error.empty()) {
        rec.error = "data generation: " + data_error;
        continue;
      }
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const PointEstimate est = run_estimator(cfg.estimators[e], data.observations, cfg.beta, truth, lambdas[e]);
        rec.err_mu = (est.mu - data.params.mu).norm();
        rec.err_C = (est.covariance.matrix() - truth.covariance.matrix()).norm();
        rec.err_Cinv = (est.precision.matrix() - truth.covariance_inv.matrix()).norm();
        rec.converged = est.converged;
        rec.ok = std::isfinite(rec.err_mu) && std::isfinite(rec.err_C) && std::isfinite(rec.err_Cinv);
        if (!rec.ok) rec.error = "non-finite estimate";
      } catch (const std::exception& ex) {
        rec.error = ex.what();
      }
      rec.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  });

  MetricReport report;
  report.config = cfg;
  for (std::size_t e = 0; e < n_est; ++e) {
    EstimatorMetrics m = aggregate(cfg.estimators[e].name(), std::move(records[e]));
    if (cfg.estimators[e].type == EstimatorType::proposed) m.lambda = lambdas[e];
    m.tuning = tuning[e];
    report.estimators.push_back(std::move(m));
  }
  return report;
}

inline constexpr const char* kReportCsvHeader =
    "estimator,mse_mu,mse_C,mse_Cinv,consistency_mu,consistency_C,consistency_Cinv,n_ok,n_failed,runtime_s";

inline void write_report_csv(const MetricReport& r, std::ostream& out) {
  out << std::setprecision(17) << kReportCsvHeader << '\n';
  for (const auto& m : r.estimators)
    out << m.name << ',' << m.mse_mu << ',' << m.mse_C << ',' << m.mse_Cinv << ',' << m.consistency_mu << ','
        << m.consistency_C << ',' << m.consistency_Cinv << ',' << m.n_ok << ',' << m.n_failed << ','
        << m.runtime_s << '\n';
}

inline json report_to_json(const MetricReport& r) {
  json est = json::array();
  for (const auto& m : r.estimators) {
    json runs = json::array();
    for (const auto& rr : m.runs) {
      json jr = {{"ok", rr.ok}, {"converged", rr.converged}, {"runtime_s", rr.runtime}};
      if (rr.ok) {
        jr["err_mu"] = rr.err_mu;
        jr["err_C"] = rr.err_C;
        jr["err_Cinv"] = rr.err_Cinv;
      } else {
        jr["error"] = rr.error;
      }
      runs.push_back(std::move(jr));
    }
    json jm = {{"estimator", m.name},
               {"mse_mu", m.mse_mu},
               {"mse_C", m.mse_C},
               {"mse_Cinv", m.mse_Cinv},
               {"consistency_mu", m.consistency_mu},
               {"consistency_C", m.consistency_C},
               {"consistency_Cinv", m.consistency_Cinv},
               {"n_ok", m.n_ok},
               {"n_failed", m.n_failed},
               {"n_not_converged", m.n_not_converged},
               {"runtime_s", m.runtime_s},
               {"runs", std::move(runs)}};
    if (m.lambda) jm["lambda"] = *m.lambda;
    if (m.tuning)
      jm["lambda_tuning"] = {{"method", m.tuning->method},
                             {"target", m.tuning->target},
                             {"lambda", m.tuning->lambda},
                             {"sparsity", m.tuning->sparsity},
                             {"steps", m.tuning->steps},
                             {"warning", m.tuning->warning}};
    est.push_back(std::move(jm));
  }
  return {{"config", to_json(r.config)},
          {"metadata",
           {{"metric", "mse = mean squared Frobenius error over successful runs; consistency = mean Frobenius error"},
            {"covariance_truth", "covariance_factor(beta, K) * scatter"},
            {"tyler_scale", "oracle least-squares scale fit to the true covariance and precision"},
            {"proposed_scale", "per estimator 'scale' option; oracle uses the same fit as tyler"}}},
          {"estimators", std::move(est)}};
}

// CSV goes to `path`; the JSON mirror replaces a trailing ".csv" with ".json"
// (or appends ".json").
inline std::string json_mirror_path(const std::string& path) {
  const std::string ext = ".csv";
  if (path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
    return path.substr(0, path.size() - ext.size()) + ".json";
  return path + ".json";
}

inline void emit_report(const MetricReport& r, const std::string& path) {
  {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_report_csv(r, out);
    if (!out) throw IoError("write failed for " + path);
  }
  const std::string jpath = json_mirror_path(path);
  std::ofstream out(jpath);
  if (!out) throw IoError("cannot open " + jpath + " for writing");
  out << report_to_json(r).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + jpath);
}

// Summary rows only; per-run records live in the JSON mirror.
inline std::vector<EstimatorMetrics> read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kReportCsvHeader) throw IoError(path + ": unexpected header");
  std::vector<EstimatorMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw IoError(path + ": row needs 10 cells");
    EstimatorMetrics m;
    m.name = cells[0];
    try {
      m.mse_mu = std::stod(cells[1]);
      m.mse_C = std::stod(cells[2]);
      m.mse_Cinv = std::stod(cells[3]);
      m.consistency_mu = std::stod(cells[4]);
      m.consistency_C = std::stod(cells[5]);
      m.consistency_Cinv = std::stod(cells[6]);
      m.n_ok = std::stoul(cells[7]);
      m.n_failed = std::stoul(cells[8]);
      m.runtime_s = std::stod(cells[9]);
    } catch (const std::exception&) {
      throw IoError(path + ": malformed row '" + line + "'");
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

}  // namespace robust_mggd
