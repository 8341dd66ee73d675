#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "robust_mggd/errors.hpp"

namespace robust_mggd {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Eigenvalues at or below this fraction of the largest one count as zero.
inline constexpr double kSpdRelativeThreshold = 1e-12;

// Dense real symmetric matrix. Entry (i,j) equals entry (j,i) bit for bit;
// every constructor checks or enforces that.
class SymMatrix {
 public:
  SymMatrix() = default;

  // Throws InvalidInput unless `m` is square, non-empty and exactly symmetric.
  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw InvalidInput("SymMatrix: matrix must be square with dim >= 1");
    for (Index j = 0; j < m_.cols(); ++j)
      for (Index i = j + 1; i < m_.rows(); ++i)
        if (m_(i, j) != m_(j, i))
          throw InvalidInput("SymMatrix: matrix is not exactly symmetric");
  }

  static SymMatrix identity(Index k) { return SymMatrix(Matrix::Identity(k, k)); }
  static SymMatrix zero(Index k) { return SymMatrix(Matrix::Zero(k, k)); }
  static SymMatrix diagonal(const Vector& d) {
    return SymMatrix(Matrix(d.asDiagonal()));
  }

  Index dim() const { return m_.rows(); }
  double operator()(Index i, Index j) const { return m_(i, j); }
  const Matrix& matrix() const { return m_; }

  SymMatrix operator+(const SymMatrix& o) const { return SymMatrix(Matrix(m_ + o.m_)); }
  SymMatrix operator-(const SymMatrix& o) const { return SymMatrix(Matrix(m_ - o.m_)); }
  SymMatrix operator-() const { return SymMatrix(Matrix(-m_)); }
  friend SymMatrix operator*(double s, const SymMatrix& a) { return SymMatrix(Matrix(s * a.m_)); }
  SymMatrix operator*(double s) const { return s * *this; }
  SymMatrix operator/(double s) const { return SymMatrix(Matrix(m_ / s)); }

  double frobenius_norm() const { return m_.norm(); }
  double trace() const { return m_.trace(); }

 private:
  Matrix m_;
};

struct SpectralDecomp {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // orthonormal columns
};

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

// (A + A^T) / 2. IEEE addition commutes, so the result is exactly symmetric.
inline SymMatrix symmetrize(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() < 1)
    throw InvalidInput("symmetrize: matrix must be square");
  return SymMatrix(Matrix(0.5 * (a + a.transpose())));
}

inline SpectralDecomp eig_sym(const SymMatrix& a) {
  if (!all_finite(a.matrix())) throw InvalidInput("eig_sym: non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.matrix(), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success)
    throw InvalidInput("eig_sym: eigendecomposition failed");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

// U diag(values) U^T, symmetrized.
inline SymMatrix reconstruct(const Matrix& eigenvectors, const Vector& values) {
  Matrix out = eigenvectors * values.asDiagonal() * eigenvectors.transpose();
  return symmetrize(out);
}

namespace detail {

inline void require_positive_spectrum(const Vector& sigma, const char* who) {
  const double top = sigma.maxCoeff();
  for (Index k = 0; k < sigma.size(); ++k) {
    if (!(sigma(k) > 0.0) || !(sigma(k) > kSpdRelativeThreshold * top)) {
      std::ostringstream msg;
      msg << who << ": non-positive eigenvalue " << sigma(k);
      throw SingularityError(msg.str(), sigma(k));
    }
  }
}

}  // namespace detail

inline bool is_spd(const SymMatrix& a) {
  if (!all_finite(a.matrix())) return false;
  const Vector sigma = eig_sym(a).eigenvalues;
  const double top = sigma.maxCoeff();
  return sigma.minCoeff() > 0.0 && sigma.minCoeff() > kSpdRelativeThreshold * top;
}

// A^p through the spectral calculus. Fractional or negative powers need a
// strictly positive spectrum.
inline SymMatrix matrix_power(const SymMatrix& a, double p) {
  SpectralDecomp d = eig_sym(a);
  const bool integral = std::floor(p) == p;
  if (p < 0.0 || !integral) detail::require_positive_spectrum(d.eigenvalues, "matrix_power");
  Vector powered = d.eigenvalues.unaryExpr([p](double s) { return std::pow(s, p); });
  return reconstruct(d.eigenvectors, powered);
}

// log det A for SPD A; throws SingularityError otherwise.
inline double log_det_spd(const SymMatrix& a) {
  const Vector sigma = eig_sym(a).eigenvalues;
  detail::require_positive_spectrum(sigma, "log_det_spd");
  return sigma.array().log().sum();
}

// Largest singular value via power iteration on M^T M.
inline double spectral_norm(const Matrix& m, double rel_tol = 1e-10, int max_iter = 10000) {
  if (!all_finite(m)) throw InvalidInput("spectral_norm: non-finite entries");
  if (m.size() == 0) return 0.0;
  Vector v = Vector::Ones(m.cols());
  v(0) += 1e-3;
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = m.transpose() * (m * v);
    const double norm_w = w.norm();
    if (norm_w == 0.0) return 0.0;
    // Rayleigh quotient of M^T M at the unit vector v.
    const double rayleigh = v.dot(w);
    const double next = std::sqrt(std::max(rayleigh, 0.0));
    v = w / norm_w;
    if (it > 0 && std::abs(next - estimate) <= rel_tol * next) return next;
    estimate = next;
  }
  throw ConvergenceFailure("spectral_norm: power iteration hit its cap", estimate);
}

}  // namespace robust_mggd
