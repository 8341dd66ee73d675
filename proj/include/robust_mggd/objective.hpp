#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "robust_mggd/matrix_core.hpp"

namespace robust_mggd {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Point of the reparametrised space: Q = C^(-1/2), m = Q mu,
// theta_n = tau_n^(beta/(beta-1)).
struct PrimalPoint {
  SymMatrix Q;
  Vector m;
  Vector theta;
};

// ---- regularizer catalogue --------------------------------------------------

struct GqNone {};
struct GqL1 {
  double lambda = 0.0;
  bool penalize_diagonal = true;
};
struct GqElasticNet {
  double lambda = 0.0;
  double eps = 0.0;
};
using GqKind = std::variant<GqNone, GqL1, GqElasticNet>;

struct GmZero {};
struct GmFixAt {
  Vector value;
};
struct GmBox {
  double lower = -1.0;
  double upper = 1.0;
};
using GmKind = std::variant<GmZero, GmFixAt, GmBox>;

// Generalized Gamma potential on theta:
//   sum theta_n^alpha / eta^alpha + kappa sum (-log theta_n).
struct GThetaPotential {
  double eta = 1.0;
  double kappa = 0.0;
  double alpha = 1.0;
};

struct RegularizerSpec {
  GqKind gQ = GqNone{};
  GmKind gm = GmZero{};
  // Empty means g_theta = 0, which leaves the cost non-convex in theta. Only
  // useful for evaluating the plain likelihood; the solver rejects it.
  std::optional<GThetaPotential> gtheta;

  // Weight of the log-barrier left after absorbing the likelihood's
  // K(1-1/beta) sum log theta term.
  double barrier_weight(Index k, double beta) const {
    const double base = static_cast<double>(k) * (1.0 - 1.0 / beta);
    return gtheta ? gtheta->kappa - base : -base;
  }

  void validate(Index k, double beta) const {
    if (const auto* l1 = std::get_if<GqL1>(&gQ); l1 && !(l1->lambda > 0.0))
      throw InvalidConfig("l1 regularizer needs lambda > 0");
    if (const auto* en = std::get_if<GqElasticNet>(&gQ);
        en && (!(en->lambda > 0.0) || !(en->eps >= 0.0)))
      throw InvalidConfig("elastic net needs lambda > 0 and eps >= 0");
    if (const auto* box = std::get_if<GmBox>(&gm); box && box->lower > box->upper)
      throw InvalidConfig("box constraint has lower > upper");
    if (const auto* fix = std::get_if<GmFixAt>(&gm); fix && fix->value.size() != k)
      throw InvalidConfig("fix_at vector has the wrong length");
    if (!gtheta) throw InvalidConfig("theta potential is required");
    if (!(gtheta->eta > 0.0)) throw InvalidConfig("eta must be positive");
    if (!(gtheta->alpha >= 1.0)) throw InvalidConfig("alpha must be >= 1");
    if (!(gtheta->kappa > static_cast<double>(k) * (1.0 - 1.0 / beta)))
      throw InvalidConfig("kappa must exceed K(1-1/beta)");
  }
};

// eta that places the minimum of the expected per-sample cost at theta = 1
// for unperturbed data.
inline double eta_default(double alpha, double kappa) {
  if (!(alpha >= 1.0) || !(kappa > 0.0)) throw InvalidInput("eta_default: need alpha >= 1, kappa > 0");
  return std::pow(alpha / kappa, 1.0 / alpha);
}

// kappa = 1.1 K (1 - 1/beta), alpha = 1, eta from eta_default.
inline GThetaPotential default_theta_potential(Index k, double beta, double kappa_margin = 1.1,
                                               double alpha = 1.0) {
  GThetaPotential g;
  g.alpha = alpha;
  g.kappa = kappa_margin * static_cast<double>(k) * (1.0 - 1.0 / beta);
  g.eta = eta_default(alpha, g.kappa);
  return g;
}

// ---- reparametrisation ------------------------------------------------------

inline PrimalPoint reparam_forward(const SymMatrix& c, const Vector& mu, const Vector& tau,
                                   double beta) {
  if (!(beta > 1.0)) throw InvalidInput("reparam_forward: beta must exceed 1");
  if ((tau.array() <= 0.0).any()) throw InvalidInput("reparam_forward: tau must be positive");
  PrimalPoint p;
  p.Q = matrix_power(c, -0.5);
  p.m = p.Q.matrix() * mu;
  const double e = beta / (beta - 1.0);
  p.theta = tau.unaryExpr([e](double t) { return std::pow(t, e); });
  return p;
}

struct NaturalParams {
  SymMatrix scatter;    // C = Q^-2
  SymMatrix precision;  // C^-1 = Q^2
  Vector mu;            // Q^-1 m
  Vector tau;           // theta^((beta-1)/beta)
};

inline NaturalParams reparam_backward(const PrimalPoint& p, double beta) {
  if (!(beta > 1.0)) throw InvalidInput("reparam_backward: beta must exceed 1");
  if ((p.theta.array() <= 0.0).any()) throw InvalidInput("reparam_backward: theta must be positive");
  SpectralDecomp d = eig_sym(p.Q);
  detail::require_positive_spectrum(d.eigenvalues, "reparam_backward");
  const Vector& s = d.eigenvalues;
  NaturalParams out;
  out.scatter = reconstruct(d.eigenvectors, s.array().pow(-2.0).matrix());
  out.precision = reconstruct(d.eigenvectors, s.array().square().matrix());
  out.mu = d.eigenvectors * (s.array().inverse().matrix().asDiagonal() *
                             (d.eigenvectors.transpose() * p.m));
  const double e = (beta - 1.0) / beta;
  out.tau = p.theta.unaryExpr([e](double t) { return std::pow(t, e); });
  return out;
}

// ---- cost -------------------------------------------------------------------

// Lower-semicontinuous envelope of the perspective of ||.||^beta / 2:
//   ||u||^beta / (2 xi^(beta-1))  if xi > 0,
//   0                             if u = 0 and xi = 0,
//   +inf                          otherwise.
// The u = 0, xi > 0 case evaluates the first formula and gives 0.
inline double perspective_phi_norm(double unorm, double xi, double beta) {
  if (xi > 0.0) return unorm == 0.0 ? 0.0 : std::pow(unorm, beta) / (2.0 * std::pow(xi, beta - 1.0));
  if (unorm == 0.0 && xi == 0.0) return 0.0;
  return kInf;
}

inline double perspective_phi(const Vector& u, double xi, double beta) {
  return perspective_phi_norm(u.norm(), xi, beta);
}

inline double gq_value(const GqKind& g, const SymMatrix& q) {
  return std::visit(
      [&q](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GqNone>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, GqL1>) {
          const double all = q.matrix().cwiseAbs().sum();
          return k.lambda * (k.penalize_diagonal ? all : all - q.matrix().diagonal().cwiseAbs().sum());
        } else {
          return k.lambda * q.matrix().cwiseAbs().sum() +
                 0.5 * k.eps * q.matrix().squaredNorm();
        }
      },
      g);
}

inline double gm_value(const GmKind& g, const Vector& m) {
  return std::visit(
      [&m](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, GmZero>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, GmFixAt>) {
          return m == k.value ? 0.0 : kInf;
        } else {
          return (m.array() >= k.lower).all() && (m.array() <= k.upper).all() ? 0.0 : kInf;
        }
      },
      g);
}

// g_theta minus the likelihood's concave K(1-1/beta) sum(-log theta) part.
inline double gtheta_tilde_value(const RegularizerSpec& spec, const Vector& theta, Index k,
                                 double beta) {
  if ((theta.array() <= 0.0).any()) return kInf;
  double value = -spec.barrier_weight(k, beta) * theta.array().log().sum();
  if (spec.gtheta) {
    const auto& g = *spec.gtheta;
    value += theta.array().pow(g.alpha).sum() / std::pow(g.eta, g.alpha);
  }
  return value;
}

// Regularized convex cost; +inf outside {Q SPD, theta > 0}.
inline double cost_f(const PrimalPoint& p, const Matrix& y, const RegularizerSpec& spec,
                     double beta) {
  const Index k = y.rows();
  const Index n = y.cols();
  if (p.Q.dim() != k || p.m.size() != k || p.theta.size() != n)
    throw InvalidInput("cost_f: shape mismatch");
  if ((p.theta.array() <= 0.0).any() || !p.theta.allFinite() || !p.m.allFinite()) return kInf;
  if (!all_finite(p.Q.matrix())) return kInf;
  const Vector sigma = eig_sym(p.Q).eigenvalues;
  if (!(sigma.minCoeff() > 0.0) || !(sigma.minCoeff() > kSpdRelativeThreshold * sigma.maxCoeff()))
    return kInf;

  const Matrix residual = (p.Q.matrix() * y).colwise() - p.m;
  double data = 0.0;
  for (Index j = 0; j < n; ++j) data += perspective_phi_norm(residual.col(j).norm(), p.theta(j), beta);
  const double logdet = -static_cast<double>(n) * sigma.array().log().sum();
  return data + logdet + gq_value(spec.gQ, p.Q) + gm_value(spec.gm, p.m) +
         gtheta_tilde_value(spec, p.theta, k, beta);
}

// ---- expected per-sample cost in theta --------------------------------------

struct FbarParams {
  double beta = 1.7;
  double alpha = 1.0;
  double kappa_bar = 1.1;  // kappa beta / (K (beta - 1)); 0 gives the unregularized curve
  double theta_bar = 1.0;

  void validate() const {
    if (!(beta > 1.0)) throw InvalidInput("FbarParams: beta must exceed 1");
    if (!(alpha >= 1.0)) throw InvalidInput("FbarParams: alpha must be >= 1");
    if (!(theta_bar > 0.0)) throw InvalidInput("FbarParams: theta_bar must be positive");
    if (!(kappa_bar > 1.0) && kappa_bar != 0.0)
      throw InvalidInput("FbarParams: kappa_bar must exceed 1 (or be 0 for the unregularized case)");
  }
};

inline double kappa_bar_from_kappa(double kappa, Index k, double beta) {
  return kappa * beta / (static_cast<double>(k) * (beta - 1.0));
}

// theta_bar^(beta-1) / ((beta-1) theta^(beta-1)) + kappa_bar theta^alpha / alpha
//   - (kappa_bar - 1) log theta
inline double fbar(double theta, const FbarParams& fp) {
  if (!(theta > 0.0)) return kInf;
  const double b1 = fp.beta - 1.0;
  return std::pow(fp.theta_bar, b1) / (b1 * std::pow(theta, b1)) +
         fp.kappa_bar * std::pow(theta, fp.alpha) / fp.alpha - (fp.kappa_bar - 1.0) * std::log(theta);
}

// Unique root of 1 - (theta_bar/theta)^(beta-1) + kappa_bar (theta^alpha - 1),
// the minimiser of fbar. Bisection; the left side increases in theta.
inline double theta_hat(const FbarParams& fp) {
  fp.validate();
  const auto h = [&fp](double t) {
    return 1.0 - std::pow(fp.theta_bar / t, fp.beta - 1.0) +
           fp.kappa_bar * (std::pow(t, fp.alpha) - 1.0);
  };
  double lo = std::min(fp.theta_bar, 1.0) / 2.0;
  double hi = 2.0 * std::max(fp.theta_bar, 1.0);
  int expansions = 0;
  while (h(lo) > 0.0) {
    lo /= 2.0;
    if (++expansions > 200) throw ConvergenceFailure("theta_hat: bracket expansion failed", lo);
  }
  while (h(hi) < 0.0) {
    hi *= 2.0;
    if (++expansions > 200) throw ConvergenceFailure("theta_hat: bracket expansion failed", hi);
  }
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= 1e-12 * std::max(1.0, mid) || mid == lo || mid == hi) return mid;
    const double v = h(mid);
    if (v == 0.0) return mid;
    (v < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct FbarCurvePoint {
  double theta;
  double fbar;
  FbarParams params;
};

inline std::vector<double> log_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi > lo) || points < 2) throw InvalidInput("log_grid: need 0 < lo < hi, >= 2 points");
  std::vector<double> g(points);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  return g;
}

// fbar over `grid` for each parameter set (400 points on [1e-2, 1e2] by default).
inline std::vector<FbarCurvePoint> fbar_curve(const std::vector<FbarParams>& sets,
                                              const std::vector<double>& grid = log_grid(1e-2, 1e2, 400)) {
  std::vector<FbarCurvePoint> out;
  out.reserve(sets.size() * grid.size());
  for (const auto& fp : sets) {
    fp.validate();
    for (double t : grid) out.push_back({t, fbar(t, fp), fp});
  }
  return out;
}

struct ThetaHatPoint {
  double theta_bar;
  double theta_hat;
  FbarParams params;
};

// theta_hat as a function of theta_bar; params.theta_bar is overridden.
inline std::vector<ThetaHatPoint> theta_hat_curve(const std::vector<FbarParams>& sets,
                                                  const std::vector<double>& theta_bars) {
  std::vector<ThetaHatPoint> out;
  for (auto fp : sets)
    for (double tb : theta_bars) {
      fp.theta_bar = tb;
      out.push_back({tb, theta_hat(fp), fp});
    }
  return out;
}

inline void write_fbar_csv(const std::vector<FbarCurvePoint>& pts, std::ostream& out) {
  out << std::setprecision(17) << "theta,fbar,alpha,kappa_bar,beta,theta_bar\n";
  for (const auto& p : pts)
    out << p.theta << ',' << p.fbar << ',' << p.params.alpha << ',' << p.params.kappa_bar << ','
        << p.params.beta << ',' << p.params.theta_bar << '\n';
}

inline void write_theta_hat_csv(const std::vector<ThetaHatPoint>& pts, std::ostream& out) {
  out << std::setprecision(17) << "theta_bar,theta_hat,alpha,kappa_bar,beta\n";
  for (const auto& p : pts)
    out << p.theta_bar << ',' << p.theta_hat << ',' << p.params.alpha << ','
        << p.params.kappa_bar << ',' << p.params.beta << '\n';
}

}  // namespace robust_mggd
