#pragma once

#include <cmath>
#include <utility>

#include "robust_mggd/matrix_core.hpp"

namespace robust_mggd {

inline std::pair<Vector, SymMatrix> empirical(const Matrix& y) {
  if (y.cols() < 2) throw InvalidInput("empirical: need at least two samples");
  const Vector mean = y.rowwise().mean();
  const Matrix centred = y.colwise() - mean;
  return {mean, symmetrize(centred * centred.transpose() / static_cast<double>(y.cols() - 1))};
}

enum class TylerNormalization { trace_K, unit_det };

struct TylerConfig {
  std::size_t max_iter = 1000;
  double tol = 1e-8;
  TylerNormalization normalization = TylerNormalization::trace_K;
  double shrinkage_rho = 0.0;

  void validate() const {
    if (!(tol > 0.0)) throw InvalidConfig("TylerConfig: tol must be positive");
    if (!(shrinkage_rho >= 0.0 && shrinkage_rho < 1.0))
      throw InvalidConfig("TylerConfig: shrinkage_rho must lie in [0,1)");
  }
};

struct TylerResult {
  Vector mu;
  SymMatrix scatter;
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

// 1 / ((y_n - mu)^T C^-1 (y_n - mu)) for every column.
inline Vector tyler_weights(const Matrix& y, const Vector& mu, const SymMatrix& c) {
  Eigen::LLT<Matrix> llt(c.matrix());
  if (llt.info() != Eigen::Success) {
    const double lo = eig_sym(c).eigenvalues(0);
    throw SingularityError("tyler: scatter iterate is singular", lo);
  }
  const Matrix centred = y.colwise() - mu;
  const Vector q = llt.matrixL().solve(centred).colwise().squaredNorm().transpose();
  Vector w(q.size());
  for (Index j = 0; j < q.size(); ++j) {
    if (!(q(j) > 0.0)) throw DegenerateSample(static_cast<std::size_t>(j));
    w(j) = 1.0 / q(j);
  }
  return w;
}

inline SymMatrix normalize_scatter(const SymMatrix& c, TylerNormalization how) {
  const double k = static_cast<double>(c.dim());
  if (how == TylerNormalization::trace_K) return c * (k / c.trace());
  return c / std::exp(log_det_spd(c) / k);
}

// (1 - rho) (K/N) sum w_n (y_n - mu)(y_n - mu)^T + rho Id, before normalization.
inline SymMatrix tyler_scatter_map(const Matrix& y, const Vector& mu, const Vector& w, double rho) {
  const Index k = y.rows();
  const Matrix centred = y.colwise() - mu;
  Matrix c = (1.0 - rho) * static_cast<double>(k) / static_cast<double>(y.cols()) *
             (centred * w.asDiagonal() * centred.transpose());
  c.diagonal().array() += rho;
  return symmetrize(c);
}

inline Vector tyler_mean_map(const Matrix& y, const Vector& w) { return y * w / w.sum(); }

inline double rel_frobenius(const SymMatrix& a, const SymMatrix& b) {
  return (a.matrix() - b.matrix()).norm() / b.matrix().norm();
}

}  // namespace detail

// Alternates the mean map and the scatter map of the joint fixed-point
// equations, normalizing the scatter after each sweep. Starts from the
// sample mean and the normalized sample covariance.
inline TylerResult tyler_joint(const Matrix& y, const TylerConfig& cfg = {}) {
  cfg.validate();
  const Index k = y.rows(), n = y.cols();
  if (n <= k) throw InvalidInput("tyler_joint: need N > K");
  auto [mean, cov] = empirical(y);
  TylerResult r;
  r.mu = mean;
  r.scatter = detail::normalize_scatter(cov, cfg.normalization);
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    const Vector mu_new = detail::tyler_mean_map(y, detail::tyler_weights(y, r.mu, r.scatter));
    const Vector w = detail::tyler_weights(y, mu_new, r.scatter);
    const SymMatrix c_new =
        detail::normalize_scatter(detail::tyler_scatter_map(y, mu_new, w, cfg.shrinkage_rho), cfg.normalization);
    const double dc = detail::rel_frobenius(c_new, r.scatter);
    const double dm = (mu_new - r.mu).norm();
    r.mu = mu_new;
    r.scatter = c_new;
    r.iterations = it;
    if (dc < cfg.tol && dm < cfg.tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

// Scatter fixed point for a known mean.
inline TylerResult tyler_fixed_mean(const Matrix& y, const Vector& mu, const TylerConfig& cfg = {}) {
  cfg.validate();
  const Index k = y.rows();
  if (mu.size() != k) throw InvalidInput("tyler_fixed_mean: mu size mismatch");
  if (cfg.shrinkage_rho == 0.0 && y.cols() <= k) throw InvalidInput("tyler_fixed_mean: need N > K");
  TylerResult r;
  r.mu = mu;
  r.scatter = SymMatrix::identity(k);
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    const Vector w = detail::tyler_weights(y, mu, r.scatter);
    const SymMatrix c_new =
        detail::normalize_scatter(detail::tyler_scatter_map(y, mu, w, cfg.shrinkage_rho), cfg.normalization);
    const double dc = detail::rel_frobenius(c_new, r.scatter);
    r.scatter = c_new;
    r.iterations = it;
    if (dc < cfg.tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

// Diagonally loaded Tyler iteration with trace-K normalization; defined for
// any N >= 1.
inline TylerResult tyler_shrinkage(const Matrix& y, const Vector& mu, double rho, TylerConfig cfg = {}) {
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidInput("tyler_shrinkage: rho must lie in (0,1)");
  cfg.shrinkage_rho = rho;
  cfg.normalization = TylerNormalization::trace_K;
  return tyler_fixed_mean(y, mu, cfg);
}

}  // namespace robust_mggd
