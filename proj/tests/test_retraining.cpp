#include "perfrl/errors.hpp"
#include "perfrl/retraining.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace perfrl;

namespace {

std::unique_ptr<ConvexCombinationResponse> c1_response(const TabularMdp& mdp, double w,
                                                       unsigned seed) {
  return std::make_unique<ConvexCombinationResponse>(
      w, make_policy_mixture_target(mdp.n_states(), mdp.n_actions(), 1.0, seed, &mdp.env.rewards));
}

void expect_identical(const ConvergenceTrace& a, const ConvergenceTrace& b) {
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].d.values, b.rows[i].d.values) << "row " << i;
    EXPECT_EQ(a.rows[i].dist_prev, b.rows[i].dist_prev);
    EXPECT_EQ(a.rows[i].value_estimate, b.rows[i].value_estimate);
    EXPECT_EQ(a.rows[i].samples_used, b.rows[i].samples_used);
  }
}

}  // namespace

TEST(Parse, AlgorithmsAndModes) {
  EXPECT_EQ(parse_algorithm("mdrr"), Algorithm::MDRR);
  EXPECT_EQ(parse_algorithm("DRR"), Algorithm::DRR);
  EXPECT_EQ(parse_mode("Exact"), Mode::Exact);
  EXPECT_THROW(parse_algorithm("sgd"), ConfigError);
  EXPECT_THROW(parse_mode("approx"), ConfigError);
  EXPECT_EQ(to_string(Algorithm::RR), "RR");
}

TEST(RetrainConfig, ValidateRejectsBadValues) {
  RetrainConfig cfg;
  cfg.lambda = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = RetrainConfig{};
  cfg.k = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = RetrainConfig{};
  cfg.algorithm = Algorithm::MDRR;
  cfg.mode = Mode::Finite;
  cfg.v = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.v = 1.2;
  cfg.mode = Mode::Exact;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Rr, ConstantResponseSettlesAfterOneRetraining) {
  const TabularMdp mdp = fixture::random_mdp(4, 3, 0.9, 1);
  ConstantResponse resp(fixture::random_mdp(4, 3, 0.9, 2).env);
  RetrainConfig cfg;
  cfg.n_retrainings = 3;
  const ConvergenceTrace trace = run_rr(mdp, resp, cfg);
  ASSERT_EQ(trace.rows.size(), 3u);
  EXPECT_LE(trace.rows[1].dist_prev, 1e-8);
  EXPECT_LE(trace.rows[2].dist_prev, 1e-8);
  EXPECT_EQ(trace.rows[2].round_index, 3);
}

TEST(Rr, ContractionFactorIsNoWorseThanTheory) {
  const TabularMdp mdp = fixture::random_mdp(3, 2, 0.9, 3);
  auto resp = c1_response(mdp, 0.5, 4);
  RetrainConfig cfg;
  cfg.lambda = 5.0;
  cfg.n_retrainings = 30;
  cfg.gd.dual_tol = 1e-12;
  const ConvergenceTrace trace = run_rr(mdp, *resp, cfg);
  // The environment part contracts by w; with a large lambda the occupancy
  // follows it, so successive steps shrink by at most w plus the policy effect.
  double worst = 0.0;
  for (std::size_t i = 10; i < 20; ++i) {
    worst = std::max(worst, trace.rows[i + 1].dist_prev / trace.rows[i].dist_prev);
  }
  EXPECT_LT(worst, 1.0);
}

TEST(Drr, KEqualOneIsBitIdenticalToRr) {
  const TabularMdp mdp = fixture::random_mdp(4, 3, 0.9, 5);
  for (Mode mode : {Mode::Exact, Mode::Finite}) {
    RetrainConfig cfg;
    cfg.mode = mode;
    cfg.n_retrainings = 6;
    cfg.samples_per_round = 2000;
    cfg.seed = 17;
    FtrlConfig ftrl = FtrlConfig::defaults(0.1, 4, 0.9);
    ftrl.n_rounds = 500;
    cfg.ftrl = ftrl;
    auto resp_a = c1_response(mdp, 0.5, 6);
    auto resp_b = c1_response(mdp, 0.5, 6);
    const ConvergenceTrace rr = run_rr(mdp, *resp_a, cfg);
    cfg.algorithm = Algorithm::DRR;
    cfg.k = 1;
    const ConvergenceTrace drr = run_drr(mdp, *resp_b, cfg);
    expect_identical(rr, drr);
  }
}

TEST(Mdrr, KEqualOneIsBitIdenticalToFiniteRr) {
  const TabularMdp mdp = fixture::random_mdp(3, 2, 0.9, 7);
  RetrainConfig cfg;
  cfg.mode = Mode::Finite;
  cfg.n_retrainings = 5;
  cfg.trajectories_per_round = 50;
  cfg.horizon = 20;
  cfg.seed = 3;
  FtrlConfig ftrl = FtrlConfig::defaults(0.1, 3, 0.9);
  ftrl.n_rounds = 300;
  cfg.ftrl = ftrl;
  auto resp_a = c1_response(mdp, 0.5, 8);
  auto resp_b = c1_response(mdp, 0.5, 8);
  const ConvergenceTrace rr = run_rr(mdp, *resp_a, cfg);
  cfg.algorithm = Algorithm::MDRR;
  cfg.k = 1;
  cfg.v = 1.7;
  const ConvergenceTrace mdrr = run_mdrr(mdp, *resp_b, cfg);
  expect_identical(rr, mdrr);
}

TEST(Drr, LargeKLandsOnTheLimitingEnvironmentSolution) {
  const TabularMdp mdp = fixture::random_mdp(4, 3, 0.9, 9);
  auto resp = c1_response(mdp, 0.5, 10);
  RetrainConfig cfg;
  cfg.algorithm = Algorithm::DRR;
  cfg.k = 200;
  cfg.n_retrainings = 1;
  cfg.gd.dual_tol = 1e-12;
  const ConvergenceTrace trace = run_drr(mdp, *resp, cfg);
  const OccupancyMeasure d0 = occupancy_of_policy(uniform_policy(4, 3), mdp);
  const Environment limit = limiting_environment(*resp, d0, mdp.env, 1e-14);
  GdConfig gd = cfg.gd;
  const GdSolution oracle = solve_gd(limit, mdp.initial_dist, 0.9, gd);
  EXPECT_LT(occupancy_distance(trace.rows[0].d, oracle.d), 1e-6);
  EXPECT_EQ(trace.rows[0].round_index, 200);
}

TEST(Mdrr, RecordsPerRoundDrawsAndUsage) {
  const TabularMdp mdp = fixture::random_mdp(3, 2, 0.9, 11);
  auto resp = c1_response(mdp, 0.5, 12);
  RetrainConfig cfg;
  cfg.algorithm = Algorithm::MDRR;
  cfg.mode = Mode::Finite;
  cfg.k = 3;
  cfg.v = 2.0;
  cfg.samples_per_round = 70;
  cfg.n_retrainings = 2;
  FtrlConfig ftrl = FtrlConfig::defaults(0.1, 3, 0.9);
  ftrl.n_rounds = 100;
  cfg.ftrl = ftrl;
  const ConvergenceTrace trace = run_mdrr(mdp, *resp, cfg);
  ASSERT_EQ(trace.rows.size(), 2u);
  EXPECT_EQ(trace.rows[0].round_samples, (std::vector<int>{70, 70, 70}));
  // Weights 1/7, 2/7, 4/7 on 70 per round: the last round caps the total at 122.
  const std::vector<std::size_t> sizes{70, 70, 70};
  const std::vector<double> w = mdrr_weights(2.0, 3);
  std::size_t expected = 0;
  for (std::size_t c : allocate_counts(sizes, w)) expected += c;
  EXPECT_EQ(trace.rows[0].samples_used, static_cast<int>(expected));
  EXPECT_EQ(trace.rows[1].round_index, 6);
}

TEST(Drr, DiscardsEarlyRoundsInFiniteMode) {
  const TabularMdp mdp = fixture::random_mdp(3, 2, 0.9, 13);
  auto resp = c1_response(mdp, 0.5, 14);
  RetrainConfig cfg;
  cfg.algorithm = Algorithm::DRR;
  cfg.mode = Mode::Finite;
  cfg.k = 4;
  cfg.samples_per_round = 100;
  cfg.n_retrainings = 1;
  FtrlConfig ftrl = FtrlConfig::defaults(0.1, 3, 0.9);
  ftrl.n_rounds = 50;
  cfg.ftrl = ftrl;
  const ConvergenceTrace trace = run_drr(mdp, *resp, cfg);
  EXPECT_EQ(trace.rows[0].round_samples, (std::vector<int>{0, 0, 0, 100}));
  EXPECT_EQ(trace.rows[0].samples_used, 100);
}

TEST(Trace, DistLastUsesTheFinalTenOccupancies) {
  const TabularMdp mdp = fixture::random_mdp(3, 2, 0.9, 15);
  auto resp = c1_response(mdp, 0.5, 16);
  RetrainConfig cfg;
  cfg.lambda = 1.0;
  cfg.n_retrainings = 14;
  const ConvergenceTrace trace = run_rr(mdp, *resp, cfg);
  Matrix mean = Matrix::Zero(3, 2);
  for (std::size_t i = 4; i < 14; ++i) mean += trace.rows[i].d.values / 10.0;
  for (const TraceRow& row : trace.rows) {
    EXPECT_NEAR(row.dist_last, (row.d.values - mean).norm(), 1e-12);
    EXPECT_GE(row.dist_prev, 0.0);
  }
  ConvergenceTrace short_trace = trace;
  short_trace.rows.resize(3);
  Matrix short_mean = (trace.rows[0].d.values + trace.rows[1].d.values + trace.rows[2].d.values) / 3.0;
  EXPECT_LT((short_trace.d_last().values - short_mean).norm(), 1e-14);
}

TEST(Trace, CsvHasSchemaLineAndStableColumns) {
  const TabularMdp mdp = fixture::random_mdp(2, 2, 0.9, 17);
  ConstantResponse resp(mdp.env);
  RetrainConfig cfg;
  cfg.n_retrainings = 2;
  cfg.seed = 5;
  ConvergenceTrace trace = run_rr(mdp, resp, cfg);
  std::ostringstream out;
  write_trace_csv(out, trace);
  std::istringstream lines(out.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "# schema_version=1");
  std::getline(lines, line);
  EXPECT_EQ(line,
            "algorithm,seed,retraining_index,round_index,dist_prev,dist_last,value_estimate,"
            "samples_used,elapsed_ms");
  std::getline(lines, line);
  EXPECT_EQ(line.substr(0, 9), "RR,5,1,1,");
  EXPECT_EQ(line.substr(line.size() - 2), ",0");
  std::ostringstream failed;
  write_failed_row(failed, "DRR", 3, "bad, worse");
  EXPECT_EQ(failed.str(), "DRR,3,failed,,,,,,bad; worse\n");
}

TEST(Weights, TwoThreeGivesSevenths) {
  const std::vector<double> w = mdrr_weights(2.0, 3);
  EXPECT_NEAR(w[0], 1.0 / 7, 1e-15);
  EXPECT_NEAR(w[1], 2.0 / 7, 1e-15);
  EXPECT_NEAR(w[2], 4.0 / 7, 1e-15);
  EXPECT_THROW(mdrr_weights(1.0, 3), std::invalid_argument);
}

TEST(Weights, SumToOneInExactArithmetic) {
  for (long tenths = 11; tenths <= 20; ++tenths) {
    for (int k = 1; k <= 20; ++k) {
      oracle::Rational sum = 0;
      for (const auto& w : oracle::rational_weights(tenths, 10, k)) sum += w;
      EXPECT_EQ(sum, oracle::Rational(1)) << "v " << tenths << "/10 k " << k;
    }
  }
}

TEST(Allocation, WorkedExample) {
  const std::vector<std::size_t> sizes{5, 5, 5};
  const std::vector<double> w{1.0 / 7, 2.0 / 7, 4.0 / 7};
  EXPECT_EQ(allocate_counts(sizes, w), (std::vector<std::size_t>{0, 3, 5}));
}

TEST(Allocation, EmptyInputsGiveEmptyOutput) {
  const std::vector<std::size_t> sizes{0, 0, 0};
  const std::vector<double> w{1.0 / 7, 2.0 / 7, 4.0 / 7};
  EXPECT_EQ(allocate_counts(sizes, w), (std::vector<std::size_t>{0, 0, 0}));
  const std::vector<std::vector<SampleTuple>> lists(3);
  for (const auto& f : allocate_samples(lists, w)) EXPECT_TRUE(f.empty());
}

TEST(Allocation, MatchesBruteForceOnSmallInstances) {
  for (long num : {3L, 2L}) {
    const long den = num == 3 ? 2 : 1;
    for (int k = 1; k <= 3; ++k) {
      const auto exact = oracle::rational_weights(num, den, k);
      const std::vector<double> w = mdrr_weights(static_cast<double>(num) / den, k);
      std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
      std::function<void(std::size_t)> visit = [&](std::size_t t) {
        if (t == sizes.size()) {
          const auto counts = allocate_counts(sizes, w);
          std::size_t total = 0;
          for (std::size_t i = 0; i < counts.size(); ++i) {
            EXPECT_LE(counts[i], sizes[i]);
            total += counts[i];
          }
          EXPECT_TRUE(oracle::suffix_property(counts, exact));
          EXPECT_EQ(total, oracle::brute_force_max_total(sizes, exact));
          return;
        }
        for (std::size_t c = 0; c <= 4; ++c) {
          sizes[t] = c;
          visit(t + 1);
        }
      };
      visit(0);
    }
  }
}

TEST(Allocation, SamplesArePrefixesOfTheRounds) {
  std::vector<std::vector<SampleTuple>> lists(2);
  for (int i = 0; i < 6; ++i) lists[0].push_back(SampleTuple{i, 0, 0.0, 0});
  for (int i = 0; i < 6; ++i) lists[1].push_back(SampleTuple{10 + i, 0, 0.0, 0});
  const auto chosen = allocate_samples(lists, std::vector<double>{0.5, 0.5});
  ASSERT_EQ(chosen[0].size(), 6u);
  ASSERT_EQ(chosen[1].size(), 6u);
  const auto skewed = allocate_samples(lists, std::vector<double>{0.25, 0.75});
  ASSERT_EQ(skewed[1].size(), 6u);
  ASSERT_EQ(skewed[0].size(), 2u);
  EXPECT_EQ(skewed[0][1].state, 1);
}

TEST(Theory, AlphaForTwoStatesAtHalfDiscount) {
  const TheoryConstants tc = theory_constants(2, 0.5, SensitivityParams{}, 1.0, 0.1, 1.5, 1.0);
  EXPECT_NEAR(tc.alpha, std::sqrt(3.0) + std::sqrt(7.0) * std::pow(2.0, 1.5) / 0.25, 1e-12);
  EXPECT_NEAR(tc.alpha, 31.66, 0.01);
}

TEST(Theory, BetaDominatedByItsHighOrderTerm) {
  const TheoryConstants tc = theory_constants(64, 0.9, SensitivityParams{}, 1.0, 0.1, 1.5, 1.0);
  const double high = 18 * std::sqrt(7.0) * 0.9 * std::pow(64.0, 2.5) / std::pow(0.1, 4);
  const double low = (4 * std::sqrt(7.0) * 0.9 + 3 * std::sqrt(6.0)) * 64 / 0.01;
  EXPECT_NEAR(tc.beta, high + low, 1e-6 * tc.beta);
  EXPECT_GT(high / tc.beta, 0.999);
  EXPECT_EQ(tc.phi, std::max(tc.alpha, tc.beta));
}

TEST(Theory, InstantSettlingGivesKOne) {
  SensitivityParams sens;
  sens.iota_p = 0.1;
  const TheoryConstants tc = theory_constants(4, 0.9, sens, 1.0, 1e-3, 1.2, 1.0);
  EXPECT_EQ(tc.suggested_k_drr(), 1);
}

TEST(Theory, KFormulas) {
  SensitivityParams sens;
  sens.iota_p = 0.2;
  sens.eps_pp = 0.5;
  const double d_pr = 0.8, delta = 1e-3, v = 3.0;
  const TheoryConstants tc = theory_constants(4, 0.9, sens, d_pr, delta, v, 1e9);
  EXPECT_NEAR(tc.k_drr, std::log(d_pr / (delta * 0.2)) / std::log(2.0), 1e-12);
  EXPECT_NEAR(tc.k_mdrr,
              (std::log(0.5 * 2.0 / (1.5 - 1.0)) + std::log(5 * 0.5 * d_pr / (0.2 * delta))) /
                  std::log(2.0),
              1e-12);
  EXPECT_NEAR(tc.lambda_min_rr, std::max(tc.beta / 0.5, tc.alpha), 1e-6);
  EXPECT_NEAR(tc.q_rr, std::max({0.2, 0.5 + tc.beta / 1e9, tc.alpha / 1e9}), 1e-15);
  // v * eps <= 1: the MDRR formula does not apply.
  const TheoryConstants low_v = theory_constants(4, 0.9, sens, d_pr, delta, 1.5, 1e9);
  EXPECT_TRUE(std::isnan(low_v.k_mdrr));
  EXPECT_EQ(low_v.suggested_k_mdrr(), -1);
  EXPECT_THROW(theory_constants(4, 0.9, sens, d_pr, delta, 1.0, 1.0), std::invalid_argument);
}

TEST(Theory, RetrainingBounds) {
  EXPECT_NEAR(rr_retraining_bound(0.5, 1.0, 1.0 / 1024), 11.0, 1e-12);
  EXPECT_TRUE(std::isinf(rr_retraining_bound(1.0, 1.0, 0.1)));
}

TEST(ReferenceFixedPoint, IsStableUnderFurtherRetraining) {
  const TabularMdp mdp = fixture::random_mdp(3, 2, 0.9, 18);
  auto resp = c1_response(mdp, 0.5, 19);
  GdConfig gd;
  gd.lambda = 2.0;
  gd.dual_tol = 1e-13;
  const StablePoint sp = reference_fixed_point(mdp, *resp, gd, 1e-11);
  const Environment next = resp->clone()->step(sp.d, sp.env);
  EXPECT_LT(env_distance(next, sp.env), 1e-9);
  EXPECT_LT(occupancy_distance(solve_gd(next, mdp.initial_dist, 0.9, gd).d, sp.d), 1e-9);
}
