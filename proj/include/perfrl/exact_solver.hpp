#pragma once

#include "perfrl/mdp.hpp"

namespace perfrl {

/// Backtracking (Armijo) line search for the dual descent.
struct StepRule {
  double initial_step = 1.0;
  double shrink = 0.5;
  double sufficient_decrease = 1e-4;
  /// Start each line search from twice the last accepted step instead of
  /// `initial_step`; needed when lambda is large and the dual is very flat.
  bool warm_start = true;
};

struct GdConfig {
  double lambda = 0.1;
  double dual_tol = 1e-9;
  int max_iters = 50000;
  StepRule step_rule;

  void validate() const;
};

struct GdSolution {
  OccupancyMeasure d;
  Vector h;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Unique maximizer of  sum d*r - (lambda/2)||d||^2  over occupancies that
/// satisfy the flow constraints of (P, rho, gamma).
///
/// Solved through the Lagrangian dual: for a fixed h the primal maximizer is
/// d(s,a) = max(0, c_h(s,a)) / lambda with
/// c_h(s,a) = r(s,a) - h(s) + gamma * sum_s' P(s'|s,a) h(s'), and the dual
/// g(h) = rho.h + ||max(0, c_h)||^2 / (2 lambda) is smooth and convex. Its
/// gradient is the flow residual of d, which is driven below `dual_tol`.
/// Once the active set has settled, a Newton step on that set removes the
/// remaining error. Throws SolverError on non-convergence.
GdSolution solve_gd(const Environment& env, const Vector& rho, double gamma,
                    const GdConfig& cfg, const Vector* h_init = nullptr);

inline GdSolution solve_gd(const TabularMdp& mdp, const GdConfig& cfg) {
  return solve_gd(mdp.env, mdp.initial_dist, mdp.discount, cfg);
}

/// sum d*r - (lambda/2)||d||^2.
double regularized_objective(const OccupancyMeasure& d, const Environment& env,
                             double lambda);

/// Lagrangian of the regularized problem:
/// objective + sum_s h(s) (rho(s) - sum_a d(s,a) + gamma sum d(s',a) P(s|s',a)).
double exact_lagrangian(const OccupancyMeasure& d, const Vector& h,
                        const Environment& env, const Vector& rho, double gamma,
                        double lambda);

/// c_h(s,a) for the given multipliers.
Matrix dual_coefficients(const Vector& h, const Environment& env, double gamma);

}  // namespace perfrl
