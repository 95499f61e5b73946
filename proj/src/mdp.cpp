#include "perfrl/mdp.hpp"

#include "perfrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace perfrl {

namespace {

Vector solve_checked(const Matrix& a, const Vector& b, const char* what) {
  Eigen::PartialPivLU<Matrix> lu(a);
  Vector x = lu.solve(b);
  const double residual = (a * x - b).lpNorm<Eigen::Infinity>();
  if (!std::isfinite(residual) || residual > kLinearSolveResidualTol) {
    throw SolverError(std::string(what) + ": linear solve residual too large",
                      residual);
  }
  return x;
}

void check_policy_shape(const Policy& policy, const Environment& env) {
  if (policy.probs.rows() != env.n_states() ||
      policy.probs.cols() != env.n_actions()) {
    throw std::invalid_argument("policy shape does not match environment");
  }
}

}  // namespace

void check_row_stochastic(const Matrix& transitions, const char* what) {
  for (Eigen::Index row = 0; row < transitions.rows(); ++row) {
    if ((transitions.row(row).array() < 0.0).any() ||
        std::abs(transitions.row(row).sum() - 1.0) > kStochasticTol) {
      throw std::invalid_argument(std::string(what) + ": row " +
                                  std::to_string(row) +
                                  " is not a probability vector");
    }
  }
}

void TabularMdp::validate() const {
  const int s = n_states();
  const int a = n_actions();
  if (s <= 0 || a <= 0) {
    throw std::invalid_argument("MDP must have at least one state and action");
  }
  if (env.transitions.rows() != s * a || env.transitions.cols() != s) {
    throw std::invalid_argument("transition tensor has the wrong shape");
  }
  check_row_stochastic(env.transitions, "transitions");
  if (!env.rewards.allFinite()) {
    throw std::invalid_argument("rewards must be finite");
  }
  if (!(discount > 0.0 && discount < 1.0)) {
    throw std::invalid_argument("discount must lie in (0, 1)");
  }
  if (initial_dist.size() != s || (initial_dist.array() < 0.0).any() ||
      std::abs(initial_dist.sum() - 1.0) > kStochasticTol) {
    throw std::invalid_argument("initial distribution is not a probability vector");
  }
}

Policy uniform_policy(int n_states, int n_actions) {
  return Policy{Matrix::Constant(n_states, n_actions, 1.0 / n_actions)};
}

Matrix policy_transition_matrix(const Policy& policy, const Environment& env) {
  check_policy_shape(policy, env);
  const int n_s = env.n_states();
  const int n_a = env.n_actions();
  Matrix kernel = Matrix::Zero(n_s, n_s);
  for (int s = 0; s < n_s; ++s) {
    for (int a = 0; a < n_a; ++a) {
      const double prob = policy.probs(s, a);
      if (prob != 0.0) kernel.row(s) += prob * env.transitions.row(s * n_a + a);
    }
  }
  return kernel;
}

OccupancyMeasure occupancy_of_policy(const Policy& policy, const TabularMdp& mdp) {
  const Matrix kernel = policy_transition_matrix(policy, mdp.env);
  const int n_s = mdp.n_states();
  // mu = rho + gamma * P_pi^T mu
  const Matrix system =
      Matrix::Identity(n_s, n_s) - mdp.discount * kernel.transpose();
  const Vector state_visits = solve_checked(system, mdp.initial_dist, "occupancy_of_policy");
  OccupancyMeasure d{policy.probs};
  for (int s = 0; s < n_s; ++s) d.values.row(s) *= state_visits(s);
  return d;
}

Policy policy_from_occupancy(const OccupancyMeasure& d) {
  const Eigen::Index n_a = d.values.cols();
  Policy policy{Matrix(d.values.rows(), n_a)};
  for (Eigen::Index s = 0; s < d.values.rows(); ++s) {
    const double mass = d.values.row(s).sum();
    if (mass > 0.0) {
      policy.probs.row(s) = d.values.row(s) / mass;
    } else {
      policy.probs.row(s).setConstant(1.0 / static_cast<double>(n_a));
    }
  }
  return policy;
}

double value_of_policy(const Policy& policy, const TabularMdp& mdp) {
  const Matrix kernel = policy_transition_matrix(policy, mdp.env);
  const int n_s = mdp.n_states();
  const Vector expected_reward =
      (policy.probs.array() * mdp.env.rewards.array()).rowwise().sum();
  const Matrix system = Matrix::Identity(n_s, n_s) - mdp.discount * kernel;
  const Vector values = solve_checked(system, expected_reward, "value_of_policy");
  return mdp.initial_dist.dot(values);
}

Matrix optimal_q_values(const TabularMdp& mdp, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  const int n_s = mdp.n_states();
  const int n_a = mdp.n_actions();
  Vector values = Vector::Zero(n_s);
  Matrix q = Matrix::Zero(n_s, n_a);
  while (true) {
    const Vector continuation = mdp.env.transitions * values;
    Matrix next(n_s, n_a);
    for (int s = 0; s < n_s; ++s) {
      for (int a = 0; a < n_a; ++a) {
        next(s, a) = mdp.env.rewards(s, a) + mdp.discount * continuation(s * n_a + a);
      }
    }
    const double change = (next - q).lpNorm<Eigen::Infinity>();
    q = std::move(next);
    values = q.rowwise().maxCoeff();
    if (change <= tol) return q;
  }
}

double env_distance(const Environment& a, const Environment& b) {
  if (a.transitions.rows() != b.transitions.rows() ||
      a.transitions.cols() != b.transitions.cols() ||
      a.rewards.rows() != b.rewards.rows() || a.rewards.cols() != b.rewards.cols()) {
    throw std::invalid_argument("env_distance: shape mismatch");
  }
  return (a.transitions - b.transitions).norm() + (a.rewards - b.rewards).norm();
}

Vector flow_residual(const OccupancyMeasure& d, const Environment& env,
                     const Vector& rho, double gamma) {
  const int n_s = env.n_states();
  const int n_a = env.n_actions();
  // Flatten d to match the transition rows.
  Vector flat(n_s * n_a);
  for (int s = 0; s < n_s; ++s)
    for (int a = 0; a < n_a; ++a) flat(s * n_a + a) = d.values(s, a);
  return rho + gamma * env.transitions.transpose() * flat -
         Vector(d.values.rowwise().sum());
}

double occupancy_mass(const OccupancyMeasure& d, double gamma) {
  return (1.0 - gamma) * d.values.sum();
}

double occupancy_distance(const OccupancyMeasure& a, const OccupancyMeasure& b) {
  return (a.values - b.values).norm();
}

bool rewards_in_unit_interval(const Environment& env) {
  return (env.rewards.array() >= 0.0).all() && (env.rewards.array() <= 1.0).all();
}

nlohmann::json mdp_to_json(const TabularMdp& mdp) {
  const int n_s = mdp.n_states();
  const int n_a = mdp.n_actions();
  std::vector<double> p;
  p.reserve(static_cast<std::size_t>(n_s) * n_a * n_s);
  for (int row = 0; row < n_s * n_a; ++row)
    for (int next = 0; next < n_s; ++next) p.push_back(mdp.env.transitions(row, next));
  std::vector<double> r;
  for (int s = 0; s < n_s; ++s)
    for (int a = 0; a < n_a; ++a) r.push_back(mdp.env.rewards(s, a));
  std::vector<double> rho(mdp.initial_dist.data(),
                          mdp.initial_dist.data() + mdp.initial_dist.size());
  return nlohmann::json{{"n_states", n_s},      {"n_actions", n_a},
                        {"transitions", p},     {"rewards", r},
                        {"discount", mdp.discount}, {"initial_dist", rho}};
}

TabularMdp mdp_from_json(const nlohmann::json& doc) {
  TabularMdp mdp;
  try {
    const int n_s = doc.at("n_states").get<int>();
    const int n_a = doc.at("n_actions").get<int>();
    if (n_s <= 0 || n_a <= 0) throw ConfigError("n_states and n_actions must be positive");
    const auto p = doc.at("transitions").get<std::vector<double>>();
    const auto r = doc.at("rewards").get<std::vector<double>>();
    const auto rho = doc.at("initial_dist").get<std::vector<double>>();
    if (p.size() != static_cast<std::size_t>(n_s) * n_a * n_s ||
        r.size() != static_cast<std::size_t>(n_s) * n_a ||
        rho.size() != static_cast<std::size_t>(n_s)) {
      throw ConfigError("MDP document arrays have inconsistent lengths");
    }
    mdp.env.transitions.resize(n_s * n_a, n_s);
    for (int row = 0; row < n_s * n_a; ++row)
      for (int next = 0; next < n_s; ++next)
        mdp.env.transitions(row, next) = p[static_cast<std::size_t>(row) * n_s + next];
    mdp.env.rewards.resize(n_s, n_a);
    for (int s = 0; s < n_s; ++s)
      for (int a = 0; a < n_a; ++a)
        mdp.env.rewards(s, a) = r[static_cast<std::size_t>(s) * n_a + a];
    mdp.initial_dist = Eigen::Map<const Vector>(rho.data(), n_s);
    mdp.discount = doc.at("discount").get<double>();
    mdp.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed MDP document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid MDP: ") + e.what());
  }
  return mdp;
}

void save_mdp(const TabularMdp& mdp, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << mdp_to_json(mdp).dump(2) << '\n';
}

TabularMdp load_mdp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open MDP file " + path.string());
  try {
    return mdp_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("cannot parse MDP file: ") + e.what());
  }
}

}  // namespace perfrl
