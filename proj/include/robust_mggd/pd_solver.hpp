#pragma once

#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <vector>

#include "robust_mggd/matrix_core.hpp"
#include "robust_mggd/mggd_model.hpp"
#include "robust_mggd/objective.hpp"
#include "robust_mggd/prox_ops.hpp"

namespace robust_mggd {

// Step sizes and weights of the primal-dual iteration. Convergence needs
//   zeta1 max(||Y||_S^2, omega1) + zeta2 max(1, omega2) < 1 / gamma.
struct SolverConfig {
  double gamma = 1.9;
  double zeta1 = 0.25;
  double zeta2 = 0.25;
  double omega1 = 1.0;
  double omega2 = 1.0;
  std::size_t max_iter = 20000;
  double tol_rel = 1e-8;
  std::size_t log_every = 0;  // 0 disables the cost trace

  double step_condition(double y_norm) const {
    return gamma * (zeta1 * std::max(y_norm * y_norm, omega1) + zeta2 * std::max(1.0, omega2));
  }
};

struct DualPoint {
  Matrix u;             // K x N, column n pairs with the residual Q y_n - m
  Vector theta1_sharp;  // N
  SymMatrix Q_sharp;
  Vector theta2_sharp;  // N
};

struct SolveDiagnostics {
  std::size_t iterations = 0;
  std::vector<std::size_t> cost_trace_iter;
  std::vector<double> primal_cost_trace;
  std::vector<double> rel_change_trace;
  bool converged = false;
};

struct SolveResult {
  PrimalPoint primal;
  // Last output of the g_Q prox inside the dual step. It converges to Q and,
  // unlike Q, carries the exact zeros produced by a sparsity penalty.
  SymMatrix Q_sparse;
  DualPoint dual;
  SolveDiagnostics diagnostics;
};

// [y_1 ... y_N; 1 ... 1]
inline Matrix build_Y_matrix(const Matrix& y) {
  if (y.cols() < 1) throw InvalidInput("build_Y_matrix: need at least one sample");
  Matrix out(y.rows() + 1, y.cols());
  out.topRows(y.rows()) = y;
  out.row(y.rows()).setOnes();
  return out;
}

// T(Q, m) = (Q y_n - m)_n, returned as the columns of a K x N matrix.
inline Matrix apply_T(const SymMatrix& q, const Vector& m, const Matrix& y) {
  if (q.dim() != y.rows() || m.size() != y.rows()) throw InvalidInput("apply_T: shape mismatch");
  return (q.matrix() * y).colwise() - m;
}

// T*((u_n)_n) = (1/2 sum (u_n y_n^T + y_n u_n^T), -sum u_n).
inline std::pair<SymMatrix, Vector> apply_T_adjoint(const Matrix& u, const Matrix& y) {
  if (u.rows() != y.rows() || u.cols() != y.cols()) throw InvalidInput("apply_T_adjoint: shape mismatch");
  const Matrix uy = u * y.transpose();
  return {symmetrize(uy), -u.rowwise().sum()};
}

// omega1 = omega2 = 1 unless overridden; zeta1, zeta2 split 0.95/gamma evenly
// between the two terms of the step condition, gamma = 1.9.
inline SolverConfig default_config(const Matrix& y_mat, double omega1 = 1.0, double omega2 = 1.0) {
  SolverConfig cfg;
  cfg.omega1 = omega1;
  cfg.omega2 = omega2;
  const double ys = spectral_norm(y_mat);
  cfg.gamma = 1.9;
  cfg.zeta1 = 1.0 / (4.0 * std::max(ys * ys, omega1));
  cfg.zeta2 = 1.0 / (4.0 * std::max(1.0, omega2));
  return cfg;
}

// Keeps the condition value of default_config at 0.95 but sets
// omega1 = ||Y||_S^2, which costs nothing in the step condition and speeds up
// the theta updates, and takes a small primal step gamma (default 0.5/||Y||_S).
inline SolverConfig balanced_config(const Matrix& y_mat, std::optional<double> gamma = std::nullopt) {
  const double ys = spectral_norm(y_mat);
  const double g = gamma ? *gamma : 0.5 / ys;
  if (!(g > 0.0)) throw InvalidConfig("balanced_config: gamma must be positive");
  SolverConfig cfg;
  cfg.omega1 = std::max(ys * ys, 1.0);
  cfg.omega2 = 1.0;
  cfg.gamma = g;
  cfg.zeta1 = 0.95 / (2.0 * g * cfg.omega1);
  cfg.zeta2 = 0.95 / (2.0 * g);
  return cfg;
}

// Q0 = (S + 1e-6 I)^(-1/2) from the empirical covariance when N > K, else I;
// m0 = Q0 * mean; theta0 = 1.
inline PrimalPoint default_initial_point(const Matrix& y) {
  const Index k = y.rows(), n = y.cols();
  const Vector mean = y.rowwise().mean();
  PrimalPoint p;
  if (n > k) {
    const Matrix centred = y.colwise() - mean;
    Matrix s = centred * centred.transpose() / static_cast<double>(n - 1);
    s.diagonal().array() += 1e-6;
    p.Q = matrix_power(symmetrize(s), -0.5);
  } else {
    p.Q = SymMatrix::identity(k);
  }
  p.m = p.Q.matrix() * mean;
  p.theta = Vector::Ones(n);
  return p;
}

inline DualPoint zero_dual(Index k, Index n) {
  return {Matrix::Zero(k, n), Vector::Zero(n), SymMatrix::zero(k), Vector::Zero(n)};
}

// Chambolle-Pock iteration on F(p) + G1(L1 p) + G2(L2 p) with
//   F = Psi + g_m + (kappa - K(1-1/beta)) sum(-log theta),
//   G1 = Phi on (T(Q,m), theta),  G2 = g_Q(Q) + ||theta||_alpha^alpha / eta^alpha.
inline SolveResult solve(const Matrix& y, double beta, const RegularizerSpec& spec,
                         const SolverConfig& cfg, const std::optional<PrimalPoint>& init = std::nullopt,
                         const std::optional<DualPoint>& dual_init = std::nullopt) {
  const Index k = y.rows(), n = y.cols();
  if (!(beta > 1.0)) throw InvalidInput("solve: beta must exceed 1");
  if (n < 1) throw InvalidInput("solve: need at least one sample");
  if (!y.allFinite()) throw InvalidInput("solve: non-finite observations");
  spec.validate(k, beta);
  if (!(cfg.gamma > 0.0 && cfg.zeta1 > 0.0 && cfg.zeta2 > 0.0 && cfg.omega1 > 0.0 && cfg.omega2 > 0.0))
    throw InvalidConfig("solve: step sizes and weights must be positive");
  const double y_norm = spectral_norm(build_Y_matrix(y));
  if (!(cfg.step_condition(y_norm) < 1.0))
    throw InvalidConfig("solve: step sizes violate the convergence condition");

  PrimalPoint p0 = init ? *init : default_initial_point(y);
  if (p0.Q.dim() != k || p0.m.size() != k || p0.theta.size() != n)
    throw InvalidInput("solve: initial point has the wrong shape");
  DualPoint d0 = dual_init ? *dual_init : zero_dual(k, n);

  const double gamma = cfg.gamma;
  const double zeta1 = cfg.zeta1, zeta2 = cfg.zeta2;
  const double zeta3 = cfg.omega1 * zeta1, zeta4 = cfg.omega2 * zeta2;
  const double nd = static_cast<double>(n);
  const double barrier = spec.barrier_weight(k, beta);
  const GThetaPotential pot = *spec.gtheta;

  // Weighted perspective prox with metric (1/zeta1, 1/zeta3), change of
  // variables hoisted out of the loop.
  const double g1 = 1.0 / zeta1, g2 = 1.0 / zeta3;
  const double s1 = std::sqrt(g1), s2 = std::sqrt(g2);
  const PerspectiveProxParams pp = PerspectiveProxParams::from_beta(
      beta, std::sqrt(std::pow(g1, beta) / std::pow(g2, beta - 1.0)));

  Matrix q = p0.Q.matrix();
  Vector m = p0.m;
  Vector theta = p0.theta;
  Matrix u = d0.u;
  Vector th1 = d0.theta1_sharp;
  Matrix qs = d0.Q_sharp.matrix();
  Vector th2 = d0.theta2_sharp;

  SolveDiagnostics diag;
  const auto current_cost = [&]() {
    return cost_f(PrimalPoint{symmetrize(q), m, theta}, y, spec, beta);
  };
  if (cfg.log_every > 0) {
    diag.cost_trace_iter.push_back(0);
    diag.primal_cost_trace.push_back(current_cost());
  }

  Matrix residual(k, n);
  SymMatrix q_sparse = symmetrize(q);
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    // Primal step.
    const Matrix q_hat = q - gamma * (zeta1 * (u * y.transpose()) + zeta2 * qs);
    const Matrix q_new = prox_logdet(symmetrize(q_hat), gamma, nd).matrix();
    const Vector m_new = prox_gm(m + gamma * zeta1 * u.rowwise().sum(), gamma, spec.gm);
    Vector theta_new(n);
    for (Index j = 0; j < n; ++j)
      theta_new(j) = prox_log_barrier(theta(j) - gamma * (zeta3 * th1(j) + zeta4 * th2(j)), gamma, barrier);

    const Matrix q_bar = 2.0 * q_new - q;
    const Vector m_bar = 2.0 * m_new - m;
    const Vector theta_bar = 2.0 * theta_new - theta;

    // Dual step on G1: (Id - prox_phi^{1/zeta1, 1/zeta3}) per sample.
    residual.noalias() = q_bar * y;
    residual.colwise() -= m_bar;
    for (Index j = 0; j < n; ++j) {
      const Vector v = u.col(j) + residual.col(j);
      const double xi = th1(j) + theta_bar(j);
      auto [a, b] = prox_perspective(v / s1, xi / s2, pp);
      u.col(j) = v - s1 * a;
      th1(j) = xi - s2 * b;
    }
    // Dual step on G2.
    const SymMatrix qs_arg = symmetrize(qs + q_bar);
    q_sparse = prox_gq(qs_arg, 1.0 / zeta2, spec.gQ);
    qs = (qs_arg - q_sparse).matrix();
    for (Index j = 0; j < n; ++j) {
      const double t = th2(j) + theta_bar(j);
      th2(j) = t - prox_power_penalty(t, 1.0 / zeta4, pot.eta, pot.alpha);
    }

    const double change = std::sqrt((q_new - q).squaredNorm() + (m_new - m).squaredNorm() +
                                     (theta_new - theta).squaredNorm());
    const double scale = std::sqrt(q.squaredNorm() + m.squaredNorm() + theta.squaredNorm());
    q = q_new;
    m = m_new;
    theta = theta_new;
    if (!q.allFinite() || !m.allFinite() || !theta.allFinite() || !u.allFinite() ||
        !th1.allFinite() || !qs.allFinite() || !th2.allFinite())
      throw DivergenceError(it);

    const double rel = scale > 0.0 ? change / scale : change;
    diag.rel_change_trace.push_back(rel);
    diag.iterations = it;
    if (cfg.log_every > 0 && it % cfg.log_every == 0) {
      diag.cost_trace_iter.push_back(it);
      diag.primal_cost_trace.push_back(current_cost());
    }
    if (rel < cfg.tol_rel) {
      diag.converged = true;
      break;
    }
  }
  if (cfg.log_every > 0 && diag.cost_trace_iter.back() != diag.iterations) {
    diag.cost_trace_iter.push_back(diag.iterations);
    diag.primal_cost_trace.push_back(current_cost());
  }

  SolveResult out;
  out.primal = PrimalPoint{symmetrize(q), m, theta};
  out.Q_sparse = std::move(q_sparse);
  out.dual = DualPoint{u, th1, symmetrize(qs), th2};
  out.diagnostics = std::move(diag);
  return out;
}

// iter,cost,rel_change for every logged iteration.
inline void write_trace_csv(const SolveDiagnostics& d, std::ostream& out) {
  out << std::setprecision(17) << "iter,cost,rel_change\n";
  for (std::size_t i = 0; i < d.cost_trace_iter.size(); ++i) {
    const std::size_t it = d.cost_trace_iter[i];
    out << it << ',' << d.primal_cost_trace[i] << ',';
    if (it >= 1 && it <= d.rel_change_trace.size()) out << d.rel_change_trace[it - 1];
    out << '\n';
  }
}

struct EstimateResult {
  SymMatrix scatter;
  SymMatrix precision;
  SymMatrix covariance;
  Vector mu;
  Vector tau;
  PrimalPoint primal;
  SymMatrix Q_sparse;
  SolveDiagnostics diagnostics;
};

inline EstimateResult estimate(const Matrix& y, double beta, const RegularizerSpec& spec,
                               const SolverConfig& cfg,
                               const std::optional<PrimalPoint>& init = std::nullopt) {
  SolveResult r = solve(y, beta, spec, cfg, init);
  NaturalParams nat = reparam_backward(r.primal, beta);
  EstimateResult e;
  e.covariance = scatter_to_covariance(nat.scatter, beta, y.rows());
  e.scatter = std::move(nat.scatter);
  e.precision = std::move(nat.precision);
  e.mu = std::move(nat.mu);
  e.tau = std::move(nat.tau);
  e.primal = std::move(r.primal);
  e.Q_sparse = std::move(r.Q_sparse);
  e.diagnostics = std::move(r.diagnostics);
  return e;
}

}  // namespace robust_mggd
