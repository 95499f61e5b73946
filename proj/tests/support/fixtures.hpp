#pragma once

#include "perfrl/mdp.hpp"

#include <random>

namespace fixture {

/// Dense random MDP with rewards in [0, 1] and uniform rho.
inline perfrl::TabularMdp random_mdp(int n_states, int n_actions, double gamma,
                                     unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  perfrl::Environment env{perfrl::Matrix(n_states * n_actions, n_states),
                          perfrl::Matrix(n_states, n_actions)};
  for (Eigen::Index row = 0; row < env.transitions.rows(); ++row) {
    for (int next = 0; next < n_states; ++next) env.transitions(row, next) = 0.01 + unit(gen);
    env.transitions.row(row) /= env.transitions.row(row).sum();
  }
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) env.rewards(s, a) = unit(gen);
  return perfrl::TabularMdp{env, gamma,
                            perfrl::Vector::Constant(n_states, 1.0 / n_states)};
}

inline perfrl::Policy random_policy(int n_states, int n_actions, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  perfrl::Policy policy{perfrl::Matrix(n_states, n_actions)};
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) policy.probs(s, a) = unit(gen);
    policy.probs.row(s) /= policy.probs.row(s).sum();
  }
  return policy;
}

}  // namespace fixture
