#include "perfrl/finite_sample.hpp"

#include "perfrl/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace perfrl {

namespace {

/// Inverse-CDF sampler over a fixed weight vector.
class Categorical {
 public:
  template <typename Weights>
  explicit Categorical(const Weights& weights) {
    const auto n = static_cast<std::size_t>(weights.size());
    cdf_.reserve(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights[static_cast<Eigen::Index>(i)];
      if (w < 0.0) throw std::invalid_argument("negative sampling weight");
      acc += w;
      if (w > 0.0) last_positive_ = static_cast<int>(i);
      cdf_.push_back(acc);
    }
    if (!(acc > 0.0)) throw std::invalid_argument("sampling weights sum to zero");
  }

  int sample(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const int idx = static_cast<int>(it - cdf_.begin());
    return std::min(idx, last_positive_);
  }

 private:
  std::vector<double> cdf_;
  int last_positive_ = 0;
};

std::vector<Categorical> transition_samplers(const Environment& env) {
  std::vector<Categorical> rows;
  rows.reserve(static_cast<std::size_t>(env.transitions.rows()));
  for (Eigen::Index row = 0; row < env.transitions.rows(); ++row) {
    rows.emplace_back(Vector(env.transitions.row(row).transpose()));
  }
  return rows;
}

void check_sampled_pair(const OccupancyMeasure& behavior, const SampleTuple& t) {
  if (!(behavior.values(t.state, t.action) > 0.0)) {
    throw std::invalid_argument("sampled pair (" + std::to_string(t.state) + ", " +
                                std::to_string(t.action) +
                                ") has zero behavior occupancy");
  }
}

double sample_term(const OccupancyMeasure& d, const Vector& h, const SampleTuple& t,
                   const OccupancyMeasure& behavior, double count, double gamma) {
  const double ratio = d.values(t.state, t.action) / behavior.values(t.state, t.action);
  return ratio * (t.reward - h(t.state) + gamma * h(t.next_state)) / (count * (1.0 - gamma));
}

}  // namespace

SampleBatch draw_samples(const TabularMdp& mdp, const Policy& policy, int m,
                         std::uint64_t seed, int round_id) {
  if (m < 1) throw std::invalid_argument("draw_samples: m must be at least 1");
  const int n_a = mdp.n_actions();
  SampleBatch batch;
  batch.round_id = round_id;
  batch.behavior_occupancy = occupancy_of_policy(policy, mdp);

  Vector joint(mdp.n_states() * n_a);
  for (int s = 0; s < mdp.n_states(); ++s)
    for (int a = 0; a < n_a; ++a)
      joint(s * n_a + a) = (1.0 - mdp.discount) * batch.behavior_occupancy.values(s, a);
  const Categorical pair_sampler(joint);
  const auto next_samplers = transition_samplers(mdp.env);

  Rng rng(seed);
  batch.tuples.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const int pair = pair_sampler.sample(rng);
    const int s = pair / n_a;
    const int a = pair % n_a;
    const int next = next_samplers[static_cast<std::size_t>(pair)].sample(rng);
    batch.tuples.push_back(SampleTuple{s, a, mdp.env.rewards(s, a), next});
  }
  return batch;
}

TrajectorySet draw_trajectories(const TabularMdp& mdp, const Policy& policy, int n_traj,
                                int horizon, std::uint64_t seed) {
  if (n_traj < 1 || horizon < 1) {
    throw std::invalid_argument("draw_trajectories: n_traj and horizon must be positive");
  }
  const int n_s = mdp.n_states();
  const int n_a = mdp.n_actions();
  const Categorical start_sampler(mdp.initial_dist);
  std::vector<Categorical> action_samplers;
  for (int s = 0; s < n_s; ++s) action_samplers.emplace_back(Vector(policy.probs.row(s).transpose()));
  const auto next_samplers = transition_samplers(mdp.env);

  TrajectorySet set;
  set.estimated_occupancy = OccupancyMeasure{Matrix::Zero(n_s, n_a)};
  set.trajectories.resize(static_cast<std::size_t>(n_traj));
  Rng rng(seed);
  for (auto& traj : set.trajectories) {
    traj.steps.reserve(static_cast<std::size_t>(horizon));
    int s = start_sampler.sample(rng);
    double discount = 1.0;
    for (int k = 0; k < horizon; ++k) {
      const int a = action_samplers[static_cast<std::size_t>(s)].sample(rng);
      const int next = next_samplers[static_cast<std::size_t>(s * n_a + a)].sample(rng);
      traj.steps.push_back(SampleTuple{s, a, mdp.env.rewards(s, a), next});
      set.estimated_occupancy.values(s, a) += discount;
      discount *= mdp.discount;
      s = next;
    }
  }
  set.estimated_occupancy.values /= static_cast<double>(n_traj);
  return set;
}

OccupancyMeasure visitation_occupancy(std::span<const SampleTuple> tuples, int n_states,
                                      int n_actions, double gamma) {
  OccupancyMeasure d{Matrix::Zero(n_states, n_actions)};
  if (tuples.empty()) return d;
  for (const SampleTuple& t : tuples) d.values(t.state, t.action) += 1.0;
  d.values /= static_cast<double>(tuples.size()) * (1.0 - gamma);
  return d;
}

SampleBatch batch_from_trajectories(const TrajectorySet& set, double gamma, int round_id) {
  SampleBatch batch;
  batch.round_id = round_id;
  for (const Trajectory& traj : set.trajectories) {
    batch.tuples.insert(batch.tuples.end(), traj.steps.begin(), traj.steps.end());
  }
  const auto& shape = set.estimated_occupancy.values;
  batch.behavior_occupancy = visitation_occupancy(
      batch.tuples, static_cast<int>(shape.rows()), static_cast<int>(shape.cols()), gamma);
  return batch;
}

double mixed_empirical_lagrangian(const OccupancyMeasure& d, const Vector& h,
                                  std::span<const SampleBatch> batches, double lambda,
                                  double gamma, const Vector& rho) {
  std::size_t total = 0;
  for (const SampleBatch& batch : batches) total += batch.tuples.size();
  if (total == 0) throw std::invalid_argument("empirical Lagrangian needs at least one sample");
  const double count = static_cast<double>(total);
  double sum = 0.0;
  for (const SampleBatch& batch : batches) {
    for (const SampleTuple& t : batch.tuples) {
      check_sampled_pair(batch.behavior_occupancy, t);
      sum += sample_term(d, h, t, batch.behavior_occupancy, count, gamma);
    }
  }
  return -0.5 * lambda * d.values.squaredNorm() + h.dot(rho) + sum;
}

double empirical_lagrangian(const OccupancyMeasure& d, const Vector& h,
                            const SampleBatch& batch, double lambda, double gamma,
                            const Vector& rho) {
  return mixed_empirical_lagrangian(d, h, std::span<const SampleBatch>(&batch, 1), lambda,
                                    gamma, rho);
}

double mixed_exact_lagrangian(const OccupancyMeasure& d, const Vector& h,
                              std::span<const Environment> envs,
                              std::span<const double> weights, const Vector& rho,
                              double gamma, double lambda) {
  if (envs.size() != weights.size()) throw std::invalid_argument("weights/environments mismatch");
  double value = 0.0;
  for (std::size_t g = 0; g < envs.size(); ++g) {
    const double objective = (d.values.array() * envs[g].rewards.array()).sum();
    value += weights[g] * (objective + h.dot(flow_residual(d, envs[g], rho, gamma)));
  }
  return value - 0.5 * lambda * d.values.squaredNorm();
}

Matrix EmpiricalCoefficients::c_hat(const Vector& h, double gamma) const {
  const Eigen::Index n_s = reward.rows();
  const Eigen::Index n_a = reward.cols();
  const Vector continuation = inflow * h;
  Matrix c(n_s, n_a);
  for (Eigen::Index s = 0; s < n_s; ++s)
    for (Eigen::Index a = 0; a < n_a; ++a)
      c(s, a) = reward(s, a) - outflow(s, a) * h(s) + gamma * continuation(s * n_a + a);
  return c;
}

Vector EmpiricalCoefficients::h_gradient(const OccupancyMeasure& d, const Vector& rho,
                                         double gamma) const {
  const Eigen::Index n_s = reward.rows();
  const Eigen::Index n_a = reward.cols();
  Vector flat(n_s * n_a);
  for (Eigen::Index s = 0; s < n_s; ++s)
    for (Eigen::Index a = 0; a < n_a; ++a) flat(s * n_a + a) = d.values(s, a);
  return rho - Vector((d.values.array() * outflow.array()).rowwise().sum()) +
         gamma * inflow.transpose() * flat;
}

EmpiricalCoefficients assemble_coefficients(std::span<const SampleBatch> batches,
                                            double gamma) {
  if (batches.empty()) throw std::invalid_argument("no sample batches");
  const Matrix& shape = batches.front().behavior_occupancy.values;
  const Eigen::Index n_s = shape.rows();
  const Eigen::Index n_a = shape.cols();
  std::size_t total = 0;
  for (const SampleBatch& batch : batches) {
    if (batch.behavior_occupancy.values.rows() != n_s ||
        batch.behavior_occupancy.values.cols() != n_a) {
      throw std::invalid_argument("batches disagree on the state-action shape");
    }
    total += batch.tuples.size();
  }
  if (total == 0) throw std::invalid_argument("no samples in any batch");

  EmpiricalCoefficients coef{Matrix::Zero(n_s, n_a), Matrix::Zero(n_s, n_a),
                             Matrix::Zero(n_s * n_a, n_s), shape};
  const double scale = 1.0 / (static_cast<double>(total) * (1.0 - gamma));
  for (const SampleBatch& batch : batches) {
    coef.min_behavior = coef.min_behavior.cwiseMin(batch.behavior_occupancy.values);
    for (const SampleTuple& t : batch.tuples) {
      check_sampled_pair(batch.behavior_occupancy, t);
      const double kappa = scale / batch.behavior_occupancy.values(t.state, t.action);
      coef.reward(t.state, t.action) += kappa * t.reward;
      coef.outflow(t.state, t.action) += kappa;
      coef.inflow(t.state * n_a + t.action, t.next_state) += kappa;
    }
  }
  coef.min_behavior = coef.min_behavior.cwiseMax(0.0);
  return coef;
}

void FtrlConfig::validate() const {
  if (n_rounds < 1) throw std::invalid_argument("FTRL needs at least one round");
  if (!(beta >= 0.0)) throw std::invalid_argument("FTRL beta must be non-negative");
  if (!(h_norm_bound > 0.0)) throw std::invalid_argument("FTRL H must be positive");
  if (!(overlap_bound > 0.0)) throw std::invalid_argument("FTRL B must be positive");
}

FtrlConfig FtrlConfig::defaults(double lambda, int n_states, double gamma) {
  FtrlConfig cfg;
  (void)lambda;
  cfg.n_rounds = 10000;
  cfg.beta = 0.0;
  cfg.h_norm_bound = 3.0 * n_states / ((1.0 - gamma) * (1.0 - gamma));
  cfg.overlap_bound = 100.0;
  return cfg;
}

double stable_ftrl_beta(const EmpiricalCoefficients& coef, double lambda, double gamma) {
  const Eigen::Index n_s = coef.reward.rows();
  const Eigen::Index n_a = coef.reward.cols();
  // Row s of M maps d to the empirical flow out of s minus gamma times the flow into s.
  Matrix flow = -gamma * coef.inflow.transpose();
  for (Eigen::Index s = 0; s < n_s; ++s)
    for (Eigen::Index a = 0; a < n_a; ++a) flow(s, s * n_a + a) += coef.outflow(s, a);
  const double sigma_sq =
      Eigen::SelfAdjointEigenSolver<Matrix>(flow * flow.transpose(), Eigen::EigenvaluesOnly)
          .eigenvalues()
          .maxCoeff();
  return std::max(sigma_sq, 1e-12) / (2.0 * lambda);
}

FtrlResult ftrl_solve(std::span<const SampleBatch> batches, double lambda, double gamma,
                      const Vector& rho, const FtrlConfig& cfg) {
  cfg.validate();
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  const EmpiricalCoefficients coef = assemble_coefficients(batches, gamma);
  const double beta = cfg.beta > 0.0 ? cfg.beta : stable_ftrl_beta(coef, lambda, gamma);
  const Eigen::Index n_s = coef.reward.rows();
  const Eigen::Index n_a = coef.reward.cols();
  // Flattened (s * |A| + a) forms so that every round is two sparse products.
  const Eigen::SparseMatrix<double, Eigen::RowMajor> inflow = coef.inflow.sparseView();
  const Eigen::SparseMatrix<double, Eigen::RowMajor> inflow_t = inflow.transpose();
  const Matrix reward_rm = coef.reward.transpose();
  const Matrix outflow_rm = coef.outflow.transpose();
  const Matrix cap_rm = cfg.overlap_bound * coef.min_behavior.transpose();
  const Eigen::Map<const Vector> reward_flat(reward_rm.data(), n_s * n_a);
  const Eigen::Map<const Vector> outflow_flat(outflow_rm.data(), n_s * n_a);
  const Eigen::Map<const Vector> cap_flat(cap_rm.data(), n_s * n_a);

  FtrlResult result;
  Vector d_sum = Vector::Zero(n_s * n_a);
  Vector d(n_s * n_a);
  Vector h_expanded(n_s * n_a);
  // Linear-in-h part of the cumulative Lagrangian; starts at L(d_0 = 0, .).
  Vector cumulative = rho;
  bool first = true;
  for (int j = 0; j < cfg.n_rounds; ++j) {
    Vector h = -cumulative / (2.0 * beta);
    const double norm = h.norm();
    if (norm > cfg.h_norm_bound) h *= cfg.h_norm_bound / norm;

    for (Eigen::Index s = 0; s < n_s; ++s) h_expanded.segment(s * n_a, n_a).setConstant(h(s));
    const Vector c = reward_flat - outflow_flat.cwiseProduct(h_expanded) + gamma * (inflow * h);
    d = (c / lambda).cwiseMax(0.0).cwiseMin(cap_flat);

    Vector gradient = rho + gamma * (inflow_t * d);
    const Vector out = outflow_flat.cwiseProduct(d);
    for (Eigen::Index s = 0; s < n_s; ++s) gradient(s) -= out.segment(s * n_a, n_a).sum();
    // The d_0 term only enters the first h-step.
    cumulative = first ? gradient : Vector(cumulative + gradient);
    first = false;

    d_sum += d;
    if (cfg.record_iterates) {
      result.h_iterates.push_back(h);
      result.d_iterates.push_back(
          OccupancyMeasure{Eigen::Map<const Matrix>(d.data(), n_a, n_s).transpose()});
    }
  }
  d_sum /= static_cast<double>(cfg.n_rounds);
  result.d = OccupancyMeasure{Eigen::Map<const Matrix>(d_sum.data(), n_a, n_s).transpose()};
  return result;
}

double value_estimate(std::span<const Trajectory> trajectories, double gamma) {
  if (trajectories.empty()) throw std::invalid_argument("value_estimate: no trajectories");
  double total = 0.0;
  for (const Trajectory& traj : trajectories) {
    double discount = 1.0;
    for (const SampleTuple& step : traj.steps) {
      total += discount * step.reward;
      discount *= gamma;
    }
  }
  return total / static_cast<double>(trajectories.size());
}

void write_batches(std::ostream& out, std::span<const SampleBatch> batches) {
  out << "round_id,s,a,r,s_next\n";
  out.precision(17);
  for (const SampleBatch& batch : batches) {
    for (const SampleTuple& t : batch.tuples) {
      out << batch.round_id << ',' << t.state << ',' << t.action << ',' << t.reward << ','
          << t.next_state << '\n';
    }
  }
}

std::vector<SampleBatch> read_batches(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "round_id,s,a,r,s_next") {
    throw std::invalid_argument("sample file lacks the round_id,s,a,r,s_next header");
  }
  std::vector<SampleBatch> batches;
  std::map<int, std::size_t> index_of_round;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    int round = 0;
    SampleTuple t;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(fields >> round >> c1 >> t.state >> c2 >> t.action >> c3 >> t.reward >> c4 >>
          t.next_state) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw std::invalid_argument("malformed sample line: " + line);
    }
    auto [it, inserted] = index_of_round.try_emplace(round, batches.size());
    if (inserted) batches.push_back(SampleBatch{round, {}, {}});
    batches[it->second].tuples.push_back(t);
  }
  return batches;
}

}  // namespace perfrl
