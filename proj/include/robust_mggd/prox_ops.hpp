#pragma once

#include <cmath>
#include <utility>

#include "robust_mggd/matrix_core.hpp"
#include "robust_mggd/objective.hpp"

namespace robust_mggd {

// prox of gamma * weight * (-log x): the positive root of x^2 - xi x - gamma weight = 0.
inline double prox_log_barrier(double xi, double gamma, double weight = 1.0) {
  const double c = gamma * weight;
  if (!(c > 0.0)) throw InvalidInput("prox_log_barrier: gamma * weight must be positive");
  const double root = std::sqrt(xi * xi + 4.0 * c);
  // For xi < 0 the textbook form cancels; use the conjugate expression.
  return xi >= 0.0 ? 0.5 * (xi + root) : 2.0 * c / (root - xi);
}

// prox of gamma * N * (-log det) applied eigenvalue-wise.
inline SymMatrix prox_logdet(const SymMatrix& q, double gamma, double n) {
  SpectralDecomp d = eig_sym(q);
  Vector s = d.eigenvalues.unaryExpr([gamma, n](double v) { return prox_log_barrier(v, gamma, n); });
  return reconstruct(d.eigenvectors, s);
}

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

// Entrywise soft-thresholding; the diagonal is left alone when
// `include_diagonal` is false.
inline SymMatrix prox_l1_sym(const SymMatrix& q, double threshold, bool include_diagonal = true) {
  if (!(threshold >= 0.0)) throw InvalidInput("prox_l1_sym: threshold must be >= 0");
  Matrix out = q.matrix().unaryExpr([threshold](double x) { return soft_threshold(x, threshold); });
  if (!include_diagonal) out.diagonal() = q.matrix().diagonal();
  return SymMatrix(std::move(out));
}

// prox of gamma (lambda ||.||_1 + eps/2 ||.||_F^2).
inline SymMatrix prox_elastic_net_sym(const SymMatrix& q, double lambda, double eps, double gamma) {
  if (!(gamma > 0.0)) throw InvalidInput("prox_elastic_net_sym: gamma must be positive");
  const double shrink = 1.0 / (1.0 + gamma * eps);
  return SymMatrix(Matrix(q.matrix().unaryExpr(
      [t = gamma * lambda, shrink](double x) { return shrink * soft_threshold(x, t); })));
}

// prox of gamma * g_Q.
inline SymMatrix prox_gq(const SymMatrix& q, double gamma, const GqKind& kind) {
  return std::visit(
      [&](const auto& k) -> SymMatrix {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GqNone>) {
          return q;
        } else if constexpr (std::is_same_v<T, GqL1>) {
          return prox_l1_sym(q, gamma * k.lambda, k.penalize_diagonal);
        } else {
          return prox_elastic_net_sym(q, k.lambda, k.eps, gamma);
        }
      },
      kind);
}

// g_m choices are 0 or indicators, so the step size does not matter.
inline Vector prox_gm(const Vector& m, double /*gamma*/, const GmKind& kind) {
  return std::visit(
      [&m](const auto& k) -> Vector {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GmZero>) {
          return m;
        } else if constexpr (std::is_same_v<T, GmFixAt>) {
          return k.value;
        } else {
          if (k.lower > k.upper) throw InvalidConfig("prox_gm: box has lower > upper");
          return m.cwiseMax(k.lower).cwiseMin(k.upper);
        }
      },
      kind);
}

namespace detail {

// Root of an increasing-at-the-root function on [lo, hi] with f(lo) < 0 < f(hi).
// Newton steps are taken when they stay inside the bracket, bisection otherwise.
template <class F>
double safeguarded_newton(F&& f_and_df, double lo, double hi, double x0, double tol, int max_iter,
                          const char* who) {
  double x = std::clamp(x0, lo, hi);
  for (int it = 0; it < max_iter; ++it) {
    const auto [f, df] = f_and_df(x);
    if (f == 0.0) return x;
    (f < 0.0 ? lo : hi) = x;
    double next = (df > 0.0) ? x - f / df : lo;
    const bool newton = next > lo && next < hi;
    if (!newton) next = 0.5 * (lo + hi);
    const double scale = std::max(1.0, std::abs(next));
    if ((newton && std::abs(next - x) <= tol * scale) || hi - lo <= tol * scale) return next;
    x = next;
  }
  throw ConvergenceFailure(std::string(who) + ": root finder hit its iteration cap", x);
}

}  // namespace detail

// prox of gamma / eta^alpha |x|^alpha.
inline double prox_power_penalty(double t, double gamma, double eta, double alpha) {
  if (!(gamma > 0.0) || !(eta > 0.0) || !(alpha >= 1.0))
    throw InvalidInput("prox_power_penalty: need gamma > 0, eta > 0, alpha >= 1");
  if (alpha == 1.0) return soft_threshold(t, gamma / eta);
  if (alpha == 2.0) return t / (1.0 + 2.0 * gamma / (eta * eta));
  if (t == 0.0) return 0.0;
  // |x| + c |x|^(alpha-1) = |t|, sign(x) = sign(t).
  const double c = gamma * alpha / std::pow(eta, alpha);
  const double target = std::abs(t);
  const auto f = [c, alpha, target](double r) {
    const double pw = r > 0.0 ? std::pow(r, alpha - 2.0) : (alpha > 2.0 ? 0.0 : kInf);
    const double val = r + c * (r > 0.0 ? pw * r : 0.0) - target;
    const double der = 1.0 + c * (alpha - 1.0) * pw;
    return std::pair<double, double>(val, std::isfinite(der) ? der : 0.0);
  };
  const double r = detail::safeguarded_newton(f, 0.0, target, target, 1e-12, 200, "prox_power_penalty");
  return std::copysign(r, t);
}

struct PerspectiveProxParams {
  double beta_star;  // beta / (beta - 1)
  double varrho;     // (2 (1 - 1/beta_star))^(beta_star - 1)
  double gamma;

  static PerspectiveProxParams from_beta(double beta, double gamma) {
    if (!(beta > 1.0) || !(gamma > 0.0))
      throw InvalidInput("PerspectiveProxParams: need beta > 1, gamma > 0");
    const double bs = beta / (beta - 1.0);
    return {bs, std::pow(2.0 * (1.0 - 1.0 / bs), bs - 1.0), gamma};
  }
};

// prox of gamma * phi at (u, xi), phi the perspective envelope of ||.||^beta / 2.
// The nontrivial branch solves
//   s^(2b*-1) + b* xi/(gamma rho) s^(b*-1) + b*/rho^2 s - b*/(gamma rho^2) ||u|| = 0
// for s > 0; the left side is negative at 0+ and unbounded above.
inline std::pair<Vector, double> prox_perspective(const Vector& u, double xi,
                                                  const PerspectiveProxParams& pp) {
  const double bs = pp.beta_star, rho = pp.varrho, g = pp.gamma;
  const double unorm = u.norm();
  if (unorm > 0.0 && bs * std::pow(g, bs - 1.0) * xi + rho * std::pow(unorm, bs) > 0.0) {
    const double a = bs * xi / (g * rho);
    const double b = bs / (rho * rho);
    const double c = b * unorm / g;
    const auto f = [bs, a, b, c](double s) {
      const double sp = std::pow(s, bs - 1.0);
      const double val = sp * sp * s + a * sp + b * s - c;
      const double der = (2.0 * bs - 1.0) * sp * sp + a * (bs - 1.0) * sp / s + b;
      return std::pair<double, double>(val, der);
    };
    double hi = std::max(unorm / g, 1e-300);
    int doublings = 0;
    while (f(hi).first <= 0.0) {
      hi *= 2.0;
      if (++doublings > 200) throw ConvergenceFailure("prox_perspective: bracket expansion failed", hi);
    }
    const double t = detail::safeguarded_newton(f, 0.0, hi, hi, 1e-12, 500, "prox_perspective");
    Vector v = u - (g * t / unorm) * u;
    return {std::move(v), xi + g * rho / bs * std::pow(t, bs)};
  }
  if (unorm == 0.0 && xi > 0.0) return {Vector::Zero(u.size()), xi};
  return {Vector::Zero(u.size()), 0.0};
}

// prox of phi in the metric ||.||^2/gamma1 on u and (.)^2/gamma2 on xi, by the
// change of variables u = sqrt(gamma1) u~, xi = sqrt(gamma2) xi~.
inline std::pair<Vector, double> prox_perspective_weighted(const Vector& u, double xi, double gamma1,
                                                           double gamma2, double beta) {
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0))
    throw InvalidInput("prox_perspective_weighted: weights must be positive");
  const double s1 = std::sqrt(gamma1), s2 = std::sqrt(gamma2);
  const double gamma = std::sqrt(std::pow(gamma1, beta) / std::pow(gamma2, beta - 1.0));
  auto [a, b] = prox_perspective(u / s1, xi / s2, PerspectiveProxParams::from_beta(beta, gamma));
  return {s1 * a, s2 * b};
}

}  // namespace robust_mggd
