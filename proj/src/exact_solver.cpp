#include "perfrl/exact_solver.hpp"

#include "perfrl/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace perfrl {

void GdConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(dual_tol > 0.0)) throw std::invalid_argument("dual_tol must be positive");
  if (max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
  if (!(step_rule.initial_step > 0.0) ||
      !(step_rule.shrink > 0.0 && step_rule.shrink < 1.0) ||
      !(step_rule.sufficient_decrease > 0.0 && step_rule.sufficient_decrease < 1.0)) {
    throw std::invalid_argument("invalid line-search parameters");
  }
}

Matrix dual_coefficients(const Vector& h, const Environment& env, double gamma) {
  const int n_s = env.n_states();
  const int n_a = env.n_actions();
  const Vector continuation = env.transitions * h;
  Matrix c(n_s, n_a);
  for (int s = 0; s < n_s; ++s)
    for (int a = 0; a < n_a; ++a)
      c(s, a) = env.rewards(s, a) - h(s) + gamma * continuation(s * n_a + a);
  return c;
}

double regularized_objective(const OccupancyMeasure& d, const Environment& env,
                             double lambda) {
  return (d.values.array() * env.rewards.array()).sum() -
         0.5 * lambda * d.values.squaredNorm();
}

double exact_lagrangian(const OccupancyMeasure& d, const Vector& h,
                        const Environment& env, const Vector& rho, double gamma,
                        double lambda) {
  return regularized_objective(d, env, lambda) + h.dot(flow_residual(d, env, rho, gamma));
}

namespace {

struct DualPoint {
  Vector h;
  OccupancyMeasure d;
  double value = 0.0;
  Vector gradient;
};

DualPoint evaluate_dual(Vector h, const Environment& env, const Vector& rho,
                        double gamma, double lambda) {
  DualPoint point;
  const Matrix positive = dual_coefficients(h, env, gamma).cwiseMax(0.0);
  point.value = rho.dot(h) + positive.squaredNorm() / (2.0 * lambda);
  point.d = OccupancyMeasure{positive / lambda};
  point.gradient = flow_residual(point.d, env, rho, gamma);
  point.h = std::move(h);
  return point;
}

// Newton step on the piecewise-quadratic dual restricted to the current
// active set {c_h > 0}: solves M_A (r_A - M_A^T h) / lambda = rho for h.
Vector active_set_newton(const DualPoint& point, const Environment& env,
                         const Vector& rho, double gamma, double lambda) {
  const int n_s = env.n_states();
  const int n_a = env.n_actions();
  std::vector<int> active;
  for (int s = 0; s < n_s; ++s)
    for (int a = 0; a < n_a; ++a)
      if (point.d.values(s, a) > 0.0) active.push_back(s * n_a + a);
  // Column j of m is the flow-constraint column of active pair j.
  Matrix m = Matrix::Zero(n_s, static_cast<Eigen::Index>(active.size()));
  Vector r_active(static_cast<Eigen::Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) {
    const int row = active[j];
    const int s = row / n_a;
    m.col(static_cast<Eigen::Index>(j)) = -gamma * env.transitions.row(row).transpose();
    m(s, static_cast<Eigen::Index>(j)) += 1.0;
    r_active(static_cast<Eigen::Index>(j)) = env.rewards(s, row % n_a);
  }
  const Matrix normal = m * m.transpose();
  const Vector rhs = m * r_active - lambda * rho;
  return normal.completeOrthogonalDecomposition().solve(rhs);
}

// Replaces `point` by the Newton iterate when that lowers the gradient norm.
bool try_newton(DualPoint& point, const Environment& env, const Vector& rho,
                double gamma, double lambda) {
  DualPoint candidate = evaluate_dual(active_set_newton(point, env, rho, gamma, lambda),
                                      env, rho, gamma, lambda);
  if (!candidate.gradient.allFinite() ||
      candidate.gradient.norm() >= point.gradient.norm()) {
    return false;
  }
  point = std::move(candidate);
  return true;
}

constexpr int kNewtonInterval = 50;

}  // namespace

GdSolution solve_gd(const Environment& env, const Vector& rho, double gamma,
                    const GdConfig& cfg, const Vector* h_init) {
  cfg.validate();
  const int n_s = env.n_states();
  if (rho.size() != n_s) throw std::invalid_argument("rho has the wrong size");
  const double lambda = cfg.lambda;
  const StepRule& rule = cfg.step_rule;

  DualPoint point = evaluate_dual(h_init ? *h_init : Vector::Zero(n_s), env, rho, gamma, lambda);
  double step = rule.initial_step;
  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    double grad_sq = point.gradient.squaredNorm();
    if (std::sqrt(grad_sq) <= cfg.dual_tol) break;
    if (iter % kNewtonInterval == kNewtonInterval - 1 && try_newton(point, env, rho, gamma, lambda)) {
      grad_sq = point.gradient.squaredNorm();
      if (std::sqrt(grad_sq) <= cfg.dual_tol) break;
    }
    if (rule.warm_start) {
      step = iter == 0 ? rule.initial_step : 2.0 * step;
    } else {
      step = rule.initial_step;
    }
    while (true) {
      DualPoint trial = evaluate_dual(point.h - step * point.gradient, env, rho, gamma, lambda);
      if (trial.value <= point.value - rule.sufficient_decrease * step * grad_sq) {
        point = std::move(trial);
        break;
      }
      step *= rule.shrink;
      if (step < 1e-300) {
        throw SolverError("solve_gd: line search failed", std::sqrt(grad_sq));
      }
    }
  }

  for (int polish = 0; polish < 3; ++polish) {
    if (!try_newton(point, env, rho, gamma, lambda)) break;
  }

  const double grad_norm = point.gradient.norm();
  if (grad_norm > cfg.dual_tol) {
    throw SolverError("solve_gd: dual descent did not converge", grad_norm);
  }
  return GdSolution{std::move(point.d), std::move(point.h), iter, grad_norm};
}

}  // namespace perfrl
