#pragma once

#include "perfrl/mdp.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace perfrl {

struct SampleTuple {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
};

/// Samples F_t from one deployment round together with the behavior
/// occupancy d_bar_t of the deployed policy in that round.
struct SampleBatch {
  int round_id = 0;
  std::vector<SampleTuple> tuples;
  OccupancyMeasure behavior_occupancy;
};

struct Trajectory {
  std::vector<SampleTuple> steps;
};

struct TrajectorySet {
  std::vector<Trajectory> trajectories;
  /// (1/n) sum_traj sum_k gamma^k 1{s_k = s, a_k = a}
  OccupancyMeasure estimated_occupancy;
};

/// m i.i.d. tuples: (s, a) ~ (1 - gamma) d_bar, r = r(s, a), s' ~ P(.|s, a).
/// The batch carries the exact d_bar of `policy`.
SampleBatch draw_samples(const TabularMdp& mdp, const Policy& policy, int m,
                         std::uint64_t seed, int round_id = 0);

/// n_traj rollouts of `horizon` steps starting from rho.
TrajectorySet draw_trajectories(const TabularMdp& mdp, const Policy& policy,
                                int n_traj, int horizon, std::uint64_t seed);

/// All steps of the trajectories as one batch. Its behavior occupancy is the
/// visitation estimate count(s,a) / (m (1 - gamma)), i.e. the occupancy whose
/// normalized form is the empirical law of the tuples, which keeps the
/// importance ratios of the empirical Lagrangian consistent with how the
/// tuples were actually collected.
SampleBatch batch_from_trajectories(const TrajectorySet& set, double gamma,
                                    int round_id = 0);

/// Behavior occupancy for an arbitrary tuple list, as in
/// batch_from_trajectories.
OccupancyMeasure visitation_occupancy(std::span<const SampleTuple> tuples, int n_states,
                                      int n_actions, double gamma);

/// Single-round empirical Lagrangian
/// -(lambda/2)||d||^2 + rho.h + sum_F d(s,a)/d_bar(s,a) (r - h(s) + gamma h(s')) / (m (1-gamma)).
/// Throws std::invalid_argument if a sampled pair has zero behavior occupancy.
double empirical_lagrangian(const OccupancyMeasure& d, const Vector& h,
                            const SampleBatch& batch, double lambda, double gamma,
                            const Vector& rho);

/// Multi-round version: every tuple of every batch is weighted by 1/U with U
/// the total number of tuples, and uses its own batch's d_bar.
double mixed_empirical_lagrangian(const OccupancyMeasure& d, const Vector& h,
                                  std::span<const SampleBatch> batches, double lambda,
                                  double gamma, const Vector& rho);

/// Expectation of the mixed empirical Lagrangian: sum_g weight_g * L(d, h; env_g).
double mixed_exact_lagrangian(const OccupancyMeasure& d, const Vector& h,
                              std::span<const Environment> envs,
                              std::span<const double> weights, const Vector& rho,
                              double gamma, double lambda);

/// The empirical Lagrangian is linear in d (up to the quadratic term) and in
/// h; this is its coefficient form. With kappa = 1 / (U d_bar_g(s,a) (1-gamma))
/// per tuple:
///   reward(s,a)      = sum kappa * r
///   outflow(s,a)     = sum kappa
///   inflow(sa, s')   = sum kappa over tuples (s,a) -> s'
/// so that  c_hat_h(s,a) = reward - outflow * h(s) + gamma * (inflow h)(s,a).
struct EmpiricalCoefficients {
  Matrix reward;
  Matrix outflow;
  Matrix inflow;
  /// Smallest behavior occupancy over the batches, per pair.
  Matrix min_behavior;

  Matrix c_hat(const Vector& h, double gamma) const;
  /// d.outflow-weighted flow residual: the gradient of the Lagrangian in h.
  Vector h_gradient(const OccupancyMeasure& d, const Vector& rho, double gamma) const;
};

EmpiricalCoefficients assemble_coefficients(std::span<const SampleBatch> batches,
                                            double gamma);

struct FtrlConfig {
  int n_rounds = 10;
  /// Zero selects stable_ftrl_beta for the data at hand.
  double beta = 0.05;
  double h_norm_bound = 1.0;
  double overlap_bound = 100.0;
  bool record_iterates = false;

  void validate() const;

  /// N = 10000, automatic beta, H = 3|S| / (1 - gamma)^2, B = 100.
  static FtrlConfig defaults(double lambda, int n_states, double gamma);
};

/// The h-update of ftrl_solve is a gradient step of size 1 / (2 beta) on the
/// dual of the empirical problem, whose gradient is Lipschitz with constant
/// at most sigma_max(M)^2 / lambda for the empirical flow operator M. Returns
/// the beta that makes the step exactly 1 / L.
double stable_ftrl_beta(const EmpiricalCoefficients& coef, double lambda, double gamma);

struct FtrlResult {
  OccupancyMeasure d;
  std::vector<OccupancyMeasure> d_iterates;  // d_1..d_N when recorded
  std::vector<Vector> h_iterates;            // h_0..h_{N-1} when recorded
};

/// Follow-the-regularized-leader saddle-point solver for the (mixed)
/// empirical Lagrangian. Each round h_j minimizes the cumulative Lagrangian
/// plus beta ||h||^2 inside the ball ||h|| <= H (closed form), and d_{j+1}
/// maximizes the Lagrangian at h_j subject to 0 <= d <= B min_t d_bar_t
/// (closed-form clip). Returns the average of d_1..d_N.
FtrlResult ftrl_solve(std::span<const SampleBatch> batches, double lambda, double gamma,
                      const Vector& rho, const FtrlConfig& cfg);

/// Mean discounted return sum_k gamma^k r_k over the trajectories.
/// Throws std::invalid_argument on an empty set.
double value_estimate(std::span<const Trajectory> trajectories, double gamma);

/// Columnar text: header `round_id,s,a,r,s_next` then one line per tuple.
void write_batches(std::ostream& out, std::span<const SampleBatch> batches);
/// Inverse of write_batches; behavior occupancies are not part of the format
/// and come back empty.
std::vector<SampleBatch> read_batches(std::istream& in);

}  // namespace perfrl
