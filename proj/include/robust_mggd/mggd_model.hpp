#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "robust_mggd/matrix_core.hpp"

namespace robust_mggd {

// Ground truth of a generalized Gaussian: shape beta, location mu, scatter C.
struct MggdParams {
  double beta = 2.0;
  Vector mu;
  SymMatrix scatter;

  Index dim() const { return scatter.dim(); }

  void validate() const {
    if (!(beta > 1.0)) throw InvalidInput("MggdParams: beta must exceed 1");
    if (mu.size() != scatter.dim()) throw InvalidInput("MggdParams: mu/scatter size mismatch");
    if (!is_spd(scatter)) throw InvalidInput("MggdParams: scatter is not SPD");
  }
};

struct PerturbationSpec {
  double proportion = 0.0;
  double tau_max = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(proportion >= 0.0 && proportion <= 1.0))
      throw InvalidInput("PerturbationSpec: proportion must lie in [0,1]");
    if (!(tau_max >= 1.0)) throw InvalidInput("PerturbationSpec: tau_max must be >= 1");
  }
};

// Observations (K x N, one sample per column) and the perturbations that
// produced them.
struct SampleSet {
  Matrix observations;
  Vector tau_true;
  MggdParams params;

  Index dim() const { return observations.rows(); }
  Index size() const { return observations.cols(); }
};

// Gamma(shape, scale) by Marsaglia and Tsang's squeeze method. For shape < 1
// a Gamma(shape + 1) draw is multiplied by U^(1/shape).
template <class Rng>
double sample_gamma(Rng& rng, double shape, double scale) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (shape < 1.0) {
    double u = 0.0;
    while (u == 0.0) u = unif(rng);
    return sample_gamma(rng, shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0, v = 0.0;
    do {
      x = normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = unif(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

// Draws n samples mu + R A u with A = C^(1/2), u uniform on the sphere and
// R^beta ~ Gamma(shape K/beta, scale 2).
inline Matrix sample_mggd(const MggdParams& params, Index n, std::uint64_t seed) {
  params.validate();
  const Index k = params.dim();
  Matrix out(k, n);
  if (n == 0) return out;
  const Matrix root = matrix_power(params.scatter, 0.5).matrix();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double shape = static_cast<double>(k) / params.beta;
  for (Index j = 0; j < n; ++j) {
    Vector g(k);
    double norm = 0.0;
    do {
      for (Index i = 0; i < k; ++i) g(i) = normal(rng);
      norm = g.norm();
    } while (norm == 0.0);
    double w = 0.0;
    while (w == 0.0) w = sample_gamma(rng, shape, 2.0);
    const double radius = std::pow(w, 1.0 / params.beta);
    out.col(j) = params.mu + radius * (root * (g / norm));
  }
  return out;
}

// Multiplies a random subset of floor(proportion * N) centred columns by
// tau ~ U[1, tau_max] and adds mu back.
inline SampleSet perturb(const Matrix& samples, const MggdParams& params,
                         const PerturbationSpec& spec) {
  spec.validate();
  if (samples.rows() != params.dim())
    throw InvalidInput("perturb: sample dimension does not match params");
  const Index n = samples.cols();
  const auto n_corrupt =
      static_cast<Index>(std::floor(spec.proportion * static_cast<double>(n) + 1e-9));
  std::mt19937_64 rng(spec.seed);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  // Partial Fisher-Yates: the first n_corrupt slots are a uniform subset.
  for (Index i = 0; i < n_corrupt; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  Vector tau = Vector::Ones(n);
  std::uniform_real_distribution<double> level(1.0, spec.tau_max);
  for (Index i = 0; i < n_corrupt; ++i)
    tau(order[static_cast<std::size_t>(i)]) = spec.tau_max > 1.0 ? level(rng) : 1.0;

  SampleSet set;
  set.observations = samples;
  for (Index j = 0; j < n; ++j) set.observations.col(j) = tau(j) * samples.col(j) + params.mu;
  set.tau_true = tau;
  set.params = params;
  return set;
}

namespace detail {

// Squared Mahalanobis distances (y_n - mu)^T C^{-1} (y_n - mu).
inline Vector mahalanobis_sq(const SymMatrix& c, const Vector& mu, const Matrix& y) {
  Eigen::LLT<Matrix> llt(c.matrix());
  if (llt.info() != Eigen::Success) throw SingularityError("scatter is not positive definite", 0.0);
  const Matrix centred = y.colwise() - mu;
  const Matrix whitened = llt.matrixL().solve(centred);
  return whitened.colwise().squaredNorm().transpose();
}

}  // namespace detail

// 1/2 sum [(y-mu)^T C^-1 (y-mu)]^(beta/2) / tau^beta + N/2 log det C + K sum log tau.
inline double neg_log_likelihood(const SymMatrix& c, const Vector& mu, const Vector& tau,
                                 const Matrix& y, double beta) {
  if (tau.size() != y.cols()) throw InvalidInput("neg_log_likelihood: tau size mismatch");
  if ((tau.array() <= 0.0).any()) throw InvalidInput("neg_log_likelihood: tau must be positive");
  const Vector q = detail::mahalanobis_sq(c, mu, y);
  const double n = static_cast<double>(y.cols());
  const double k = static_cast<double>(y.rows());
  double data = 0.0;
  for (Index j = 0; j < y.cols(); ++j)
    data += std::pow(q(j), beta / 2.0) / std::pow(tau(j), beta);
  return 0.5 * data + 0.5 * n * log_det_spd(c) + k * tau.array().log().sum();
}

// Per-sample minimiser of the likelihood in tau for fixed (C, mu).
inline Vector tau_hat_concentrated(const SymMatrix& c, const Vector& mu, const Matrix& y,
                                   double beta) {
  const double k = static_cast<double>(y.rows());
  for (Index j = 0; j < y.cols(); ++j)
    if ((y.col(j) - mu).isZero(0.0)) throw DegenerateSample(static_cast<std::size_t>(j));
  const Vector q = detail::mahalanobis_sq(c, mu, y);
  Vector tau(y.cols());
  for (Index j = 0; j < y.cols(); ++j)
    tau(j) = std::pow(beta * std::pow(q(j), beta / 2.0) / (2.0 * k), 1.0 / beta);
  return tau;
}

// Ratio between covariance and scatter: 2^(2/beta) Gamma((K+2)/beta) / (K Gamma(K/beta)).
// Past K/beta = 170 the large-K approximation (2K/beta)^(2/beta) / K is used.
inline double covariance_factor(double beta, Index k) {
  const double kd = static_cast<double>(k);
  if (kd / beta > 170.0) return std::pow(2.0 * kd / beta, 2.0 / beta) / kd;
  return std::exp((2.0 / beta) * std::log(2.0) + std::lgamma((kd + 2.0) / beta) - std::log(kd) -
                  std::lgamma(kd / beta));
}

inline SymMatrix scatter_to_covariance(const SymMatrix& c, double beta, Index k) {
  if (!(beta > 1.0)) throw InvalidInput("scatter_to_covariance: beta must exceed 1");
  return covariance_factor(beta, k) * c;
}

// CSV layout: "K,N,beta" header, a row with their values, N rows of K
// observation values, then one row of N tau values.
inline void write_sample_csv(const SampleSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  out << "K,N,beta\n" << set.dim() << ',' << set.size() << ',' << set.params.beta << '\n';
  for (Index j = 0; j < set.size(); ++j) {
    for (Index i = 0; i < set.dim(); ++i) out << (i ? "," : "") << set.observations(i, j);
    out << '\n';
  }
  for (Index j = 0; j < set.size(); ++j) out << (j ? "," : "") << set.tau_true(j);
  out << '\n';
  if (!out) throw IoError("write failed for " + path);
}

namespace detail {

inline std::vector<double> parse_csv_row(const std::string& line, const std::string& path) {
  std::vector<double> values;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(cell, &used));
    } catch (const std::exception&) {
      throw IoError(path + ": malformed numeric cell '" + cell + "'");
    }
  }
  return values;
}

}  // namespace detail

// Reads the layout written by write_sample_csv. Only observations, tau and
// beta are recovered; params.mu and params.scatter stay empty.
inline SampleSet read_sample_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("K,N,beta", 0) != 0)
    throw IoError(path + ": missing K,N,beta header");
  if (!std::getline(in, line)) throw IoError(path + ": missing dimension row");
  const auto dims = detail::parse_csv_row(line, path);
  if (dims.size() != 3) throw IoError(path + ": dimension row needs 3 values");
  const auto k = static_cast<Index>(dims[0]);
  const auto n = static_cast<Index>(dims[1]);
  if (k < 1 || n < 0) throw IoError(path + ": invalid dimensions");
  SampleSet set;
  set.params.beta = dims[2];
  set.observations.resize(k, n);
  for (Index j = 0; j < n; ++j) {
    if (!std::getline(in, line)) throw IoError(path + ": truncated observation rows");
    const auto row = detail::parse_csv_row(line, path);
    if (static_cast<Index>(row.size()) != k) throw IoError(path + ": observation row width != K");
    for (Index i = 0; i < k; ++i) set.observations(i, j) = row[static_cast<std::size_t>(i)];
  }
  set.tau_true = Vector::Ones(n);
  if (n > 0) {
    if (!std::getline(in, line)) throw IoError(path + ": missing tau row");
    const auto row = detail::parse_csv_row(line, path);
    if (static_cast<Index>(row.size()) != n) throw IoError(path + ": tau row width != N");
    for (Index j = 0; j < n; ++j) set.tau_true(j) = row[static_cast<std::size_t>(j)];
  }
  return set;
}

}  // namespace robust_mggd
