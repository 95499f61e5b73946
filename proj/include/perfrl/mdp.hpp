#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <string>

namespace perfrl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dynamics and rewards of a single round.
///
/// `transitions` has one row per state-action pair (row index
/// `s * n_actions + a`) and one column per successor state, so every row is a
/// probability vector. `rewards` is |S| x |A|.
struct Environment {
  Matrix transitions;
  Matrix rewards;

  int n_states() const { return static_cast<int>(rewards.rows()); }
  int n_actions() const { return static_cast<int>(rewards.cols()); }

  double p(int s, int a, int next) const {
    return transitions(s * n_actions() + a, next);
  }
};

struct TabularMdp {
  Environment env;
  double discount = 0.9;
  Vector initial_dist;

  int n_states() const { return env.n_states(); }
  int n_actions() const { return env.n_actions(); }

  /// Throws std::invalid_argument when shapes, stochasticity or the discount
  /// are inconsistent.
  void validate() const;
};

/// pi(a|s), one row per state.
struct Policy {
  Matrix probs;
};

/// Discounted state-action visitation d(s,a), |S| x |A|.
struct OccupancyMeasure {
  Matrix values;
};

inline constexpr double kStochasticTol = 1e-12;
inline constexpr double kLinearSolveResidualTol = 1e-6;

Policy uniform_policy(int n_states, int n_actions);

/// Throws std::invalid_argument if any row of `transitions` is not a
/// probability vector within kStochasticTol.
void check_row_stochastic(const Matrix& transitions, const char* what);

/// State-to-state kernel P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
Matrix policy_transition_matrix(const Policy& policy, const Environment& env);

/// Solves the discounted flow equation for the state visitation of `policy`.
OccupancyMeasure occupancy_of_policy(const Policy& policy, const TabularMdp& mdp);

/// pi(a|s) proportional to d(s,a); uniform on states with zero mass.
Policy policy_from_occupancy(const OccupancyMeasure& d);

/// V^pi(rho) from the Bellman evaluation equation.
double value_of_policy(const Policy& policy, const TabularMdp& mdp);

/// Optimal Q by value iteration until successive iterates differ by at most
/// `tol` in sup-norm.
Matrix optimal_q_values(const TabularMdp& mdp, double tol);

/// ||P - P'||_2 + ||r - r'||_2 on the flattened arrays.
double env_distance(const Environment& a, const Environment& b);

/// rho(s) + gamma * sum_{s',a} d(s',a) P(s|s',a) - sum_a d(s,a).
/// Zero exactly when d satisfies the flow constraints.
Vector flow_residual(const OccupancyMeasure& d, const Environment& env,
                     const Vector& rho, double gamma);

/// sum_{s,a} (1 - gamma) d(s,a); equals 1 for feasible occupancies.
double occupancy_mass(const OccupancyMeasure& d, double gamma);

/// L2 norm of the flattened difference.
double occupancy_distance(const OccupancyMeasure& a, const OccupancyMeasure& b);

/// True when every reward lies in [0, 1], the range the theory bounds assume.
bool rewards_in_unit_interval(const Environment& env);

// Structured text form: n_states, n_actions, transitions (row-major over
// (s, a, s')), rewards (row-major over (s, a)), discount, initial_dist.
nlohmann::json mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const nlohmann::json& doc);
void save_mdp(const TabularMdp& mdp, const std::filesystem::path& path);
TabularMdp load_mdp(const std::filesystem::path& path);

}  // namespace perfrl
