#include "perfrl/exact_solver.hpp"
#include "perfrl/finite_sample.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace perfrl;

namespace {

struct Problem {
  TabularMdp mdp;
  Policy policy;
  OccupancyMeasure behavior;
};

Problem make_setup(unsigned seed, int n_s = 4, int n_a = 3) {
  Problem s{fixture::random_mdp(n_s, n_a, 0.9, seed), fixture::random_policy(n_s, n_a, seed + 1), {}};
  s.behavior = occupancy_of_policy(s.policy, s.mdp);
  return s;
}

}  // namespace

TEST(DrawSamples, FrequenciesMatchNormalizedOccupancy) {
  const Problem s = make_setup(1);
  const SampleBatch batch = draw_samples(s.mdp, s.policy, 200000, 7, 3);
  EXPECT_EQ(batch.round_id, 3);
  EXPECT_EQ(batch.behavior_occupancy.values, s.behavior.values);
  const OccupancyMeasure freq = visitation_occupancy(batch.tuples, 4, 3, 0.9);
  EXPECT_LT((freq.values - s.behavior.values).cwiseAbs().maxCoeff(), 0.05);
}

TEST(DrawSamples, TransitionsFollowTheKernel) {
  const Problem s = make_setup(2, 2, 2);
  const SampleBatch batch = draw_samples(s.mdp, s.policy, 200000, 8);
  Matrix counts = Matrix::Zero(4, 2);
  for (const SampleTuple& t : batch.tuples) {
    counts(t.state * 2 + t.action, t.next_state) += 1.0;
    EXPECT_EQ(t.reward, s.mdp.env.rewards(t.state, t.action));
  }
  for (int row = 0; row < 4; ++row) {
    const double n = counts.row(row).sum();
    ASSERT_GT(n, 1000.0);
    for (int next = 0; next < 2; ++next) {
      const double p = s.mdp.env.transitions(row, next);
      EXPECT_NEAR(counts(row, next) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
    }
  }
}

TEST(DrawSamples, SameSeedSameData) {
  const Problem s = make_setup(3);
  const SampleBatch a = draw_samples(s.mdp, s.policy, 500, 42);
  const SampleBatch b = draw_samples(s.mdp, s.policy, 500, 42);
  const SampleBatch c = draw_samples(s.mdp, s.policy, 500, 43);
  ASSERT_EQ(a.tuples.size(), b.tuples.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.tuples.size(); ++i) {
    EXPECT_EQ(a.tuples[i].state, b.tuples[i].state);
    EXPECT_EQ(a.tuples[i].next_state, b.tuples[i].next_state);
    differs = differs || a.tuples[i].state != c.tuples[i].state;
  }
  EXPECT_TRUE(differs);
}

TEST(Trajectories, DiscountedEstimateApproachesOccupancy) {
  const Problem s = make_setup(4);
  const TrajectorySet set = draw_trajectories(s.mdp, s.policy, 20000, 200, 5);
  EXPECT_EQ(set.trajectories.size(), 20000u);
  EXPECT_EQ(set.trajectories.front().steps.size(), 200u);
  EXPECT_LT((set.estimated_occupancy.values - s.behavior.values).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Trajectories, BatchUsesEveryStepWithVisitationBehavior) {
  const Problem s = make_setup(5);
  const TrajectorySet set = draw_trajectories(s.mdp, s.policy, 30, 10, 6);
  const SampleBatch batch = batch_from_trajectories(set, 0.9, 2);
  EXPECT_EQ(batch.tuples.size(), 300u);
  const OccupancyMeasure visits = visitation_occupancy(batch.tuples, 4, 3, 0.9);
  EXPECT_EQ(batch.behavior_occupancy.values, visits.values);
  EXPECT_NEAR(occupancy_mass(batch.behavior_occupancy, 0.9), 1.0, 1e-12);
}

TEST(ValueEstimate, ZeroAndConstantRewards) {
  Trajectory zero;
  zero.steps.assign(50, SampleTuple{0, 0, 0.0, 0});
  EXPECT_EQ(value_estimate(std::vector<Trajectory>{zero, zero}, 0.9), 0.0);

  const double c = -0.37;
  Trajectory constant;
  constant.steps.assign(50, SampleTuple{0, 0, c, 0});
  EXPECT_NEAR(value_estimate(std::vector<Trajectory>{constant}, 0.9),
              c * (1.0 - std::pow(0.9, 50)) / 0.1, 1e-12);
  EXPECT_THROW(value_estimate(std::vector<Trajectory>{}, 0.9), std::invalid_argument);
}

TEST(ValueEstimate, MatchesExactValueUpToTruncation) {
  const Problem s = make_setup(6);
  const int n = 10000, horizon = 50;
  const TrajectorySet set = draw_trajectories(s.mdp, s.policy, n, horizon, 9);
  std::vector<double> returns;
  for (const Trajectory& t : set.trajectories) returns.push_back(value_estimate(std::vector<Trajectory>{t}, 0.9));
  double mean = 0.0, sq = 0.0;
  for (double r : returns) mean += r;
  mean /= n;
  for (double r : returns) sq += (r - mean) * (r - mean);
  const double se = std::sqrt(sq / (n - 1) / n);
  EXPECT_NEAR(mean, value_estimate(set.trajectories, 0.9), 1e-12);

  // Truncation: the tail from step 50 on is gamma^50 times the value of the
  // state distribution at step 50.
  const Matrix pp = policy_transition_matrix(s.policy, s.mdp.env);
  Vector dist = s.mdp.initial_dist;
  for (int k = 0; k < horizon; ++k) dist = pp.transpose() * dist;
  TabularMdp tail_mdp = s.mdp;
  tail_mdp.initial_dist = dist;
  const double truncated =
      value_of_policy(s.policy, s.mdp) - std::pow(0.9, horizon) * value_of_policy(s.policy, tail_mdp);
  EXPECT_LE(std::abs(mean - truncated), 3.0 * se);
}

TEST(EmpiricalLagrangian, OneBatchEqualsMixedWithOneBatch) {
  const Problem s = make_setup(7);
  const SampleBatch batch = draw_samples(s.mdp, s.policy, 1000, 10);
  const OccupancyMeasure d = occupancy_of_policy(fixture::random_policy(4, 3, 11), s.mdp);
  const Vector h = Vector::LinSpaced(4, -2.0, 3.0);
  const std::vector<SampleBatch> one{batch};
  EXPECT_EQ(empirical_lagrangian(d, h, batch, 0.1, 0.9, s.mdp.initial_dist),
            mixed_empirical_lagrangian(d, h, one, 0.1, 0.9, s.mdp.initial_dist));
}

TEST(EmpiricalLagrangian, CoefficientFormReproducesTheSum) {
  const Problem s = make_setup(8);
  std::vector<SampleBatch> batches{draw_samples(s.mdp, s.policy, 300, 12, 1),
                                   draw_samples(s.mdp, fixture::random_policy(4, 3, 99), 500, 13, 2)};
  const OccupancyMeasure d = occupancy_of_policy(fixture::random_policy(4, 3, 14), s.mdp);
  const Vector h = Vector::LinSpaced(4, 1.0, -1.0);
  const double lambda = 0.2;
  const EmpiricalCoefficients coef = assemble_coefficients(batches, 0.9);
  const double via_coef = -0.5 * lambda * d.values.squaredNorm() + h.dot(s.mdp.initial_dist) +
                          (d.values.array() * coef.c_hat(h, 0.9).array()).sum();
  EXPECT_NEAR(via_coef, mixed_empirical_lagrangian(d, h, batches, lambda, 0.9, s.mdp.initial_dist),
              1e-10);

  // h_gradient is the derivative in h.
  const Vector grad = coef.h_gradient(d, s.mdp.initial_dist, 0.9);
  for (int i = 0; i < 4; ++i) {
    Vector up = h, down = h;
    up(i) += 1e-6;
    down(i) -= 1e-6;
    const double fd = (mixed_empirical_lagrangian(d, up, batches, lambda, 0.9, s.mdp.initial_dist) -
                       mixed_empirical_lagrangian(d, down, batches, lambda, 0.9, s.mdp.initial_dist)) /
                      2e-6;
    EXPECT_NEAR(fd, grad(i), 1e-6);
  }
}

TEST(EmpiricalLagrangian, RejectsSamplesOutsideTheBehaviorSupport) {
  const Problem s = make_setup(9);
  SampleBatch batch = draw_samples(s.mdp, s.policy, 10, 1);
  batch.behavior_occupancy.values(batch.tuples[0].state, batch.tuples[0].action) = 0.0;
  EXPECT_THROW(empirical_lagrangian(s.behavior, Vector::Zero(4), batch, 0.1, 0.9,
                                    s.mdp.initial_dist),
               std::invalid_argument);
}

TEST(EmpiricalLagrangian, UnbiasedOnAverage) {
  const Problem s = make_setup(10, 3, 2);
  const OccupancyMeasure d = occupancy_of_policy(fixture::random_policy(3, 2, 20), s.mdp);
  const Vector h = Vector::LinSpaced(3, -1.0, 1.5);
  const double exact = exact_lagrangian(d, h, s.mdp.env, s.mdp.initial_dist, 0.9, 0.1);
  const int draws = 4000;
  double mean = 0.0, sq = 0.0;
  std::vector<double> values;
  for (int i = 0; i < draws; ++i) {
    values.push_back(empirical_lagrangian(d, h, draw_samples(s.mdp, s.policy, 20, 1000 + i), 0.1,
                                          0.9, s.mdp.initial_dist));
    mean += values.back();
  }
  mean /= draws;
  for (double v : values) sq += (v - mean) * (v - mean);
  EXPECT_LE(std::abs(mean - exact), 3.0 * std::sqrt(sq / (draws - 1) / draws));
}

TEST(Ftrl, RecoversTheExactSolutionWithManySamples) {
  const Problem s = make_setup(11);
  GdConfig gd;
  const GdSolution exact = solve_gd(s.mdp, gd);
  const SampleBatch batch = draw_samples(s.mdp, uniform_policy(4, 3), 100000, 21);
  FtrlConfig cfg = FtrlConfig::defaults(0.1, 4, 0.9);
  cfg.n_rounds = 100000;
  const FtrlResult result = ftrl_solve(std::vector<SampleBatch>{batch}, 0.1, 0.9,
                                       s.mdp.initial_dist, cfg);
  EXPECT_LT(occupancy_distance(result.d, exact.d), 0.1);
}

TEST(Ftrl, RespectsTheOverlapCap) {
  const Problem s = make_setup(12);
  const SampleBatch batch = draw_samples(s.mdp, s.policy, 2000, 22);
  FtrlConfig cfg = FtrlConfig::defaults(0.1, 4, 0.9);
  cfg.overlap_bound = 1.5;
  cfg.n_rounds = 50;
  cfg.record_iterates = true;
  const FtrlResult result = ftrl_solve(std::vector<SampleBatch>{batch}, 0.1, 0.9,
                                       s.mdp.initial_dist, cfg);
  ASSERT_EQ(result.d_iterates.size(), 50u);
  ASSERT_EQ(result.h_iterates.size(), 50u);
  Matrix mean = Matrix::Zero(4, 3);
  for (const OccupancyMeasure& d : result.d_iterates) {
    EXPECT_LE(((d.values - 1.5 * s.behavior.values).array()).maxCoeff(), 1e-12);
    EXPECT_GE(d.values.minCoeff(), 0.0);
    mean += d.values / 50.0;
  }
  EXPECT_LT((mean - result.d.values).norm(), 1e-12);
  const double bound = cfg.h_norm_bound;
  for (const Vector& h : result.h_iterates) EXPECT_LE(h.norm(), bound * (1 + 1e-12));
}

TEST(Ftrl, AutomaticBetaIsTheSmoothnessOfTheDual) {
  const Problem s = make_setup(13, 2, 2);
  const SampleBatch batch = draw_samples(s.mdp, s.policy, 5000, 23);
  const EmpiricalCoefficients coef = assemble_coefficients(std::vector<SampleBatch>{batch}, 0.9);
  Matrix flow = -0.9 * coef.inflow.transpose();
  for (int st = 0; st < 2; ++st)
    for (int a = 0; a < 2; ++a) flow(st, st * 2 + a) += coef.outflow(st, a);
  const double sigma = Eigen::JacobiSVD<Matrix>(flow).singularValues()(0);
  EXPECT_NEAR(stable_ftrl_beta(coef, 0.1, 0.9), sigma * sigma / 0.2, 1e-9);
}

TEST(Ftrl, RejectsBadConfig) {
  FtrlConfig cfg;
  cfg.n_rounds = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = FtrlConfig{};
  cfg.beta = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Batches, TextRoundTrip) {
  const Problem s = make_setup(14);
  std::vector<SampleBatch> batches{draw_samples(s.mdp, s.policy, 30, 1, 4),
                                   draw_samples(s.mdp, s.policy, 20, 2, 7)};
  std::stringstream text;
  write_batches(text, batches);
  const std::vector<SampleBatch> back = read_batches(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].round_id, 4);
  EXPECT_EQ(back[1].round_id, 7);
  ASSERT_EQ(back[1].tuples.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(back[1].tuples[i].state, batches[1].tuples[i].state);
    EXPECT_EQ(back[1].tuples[i].reward, batches[1].tuples[i].reward);
  }
  std::stringstream bad("s,a\n1,2\n");
  EXPECT_THROW(read_batches(bad), std::invalid_argument);
}
