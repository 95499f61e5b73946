#include "perfrl/retraining.hpp"

#include "perfrl/errors.hpp"
#include "perfrl/rng.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace perfrl {

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::RR: return "RR";
    case Algorithm::DRR: return "DRR";
    case Algorithm::MDRR: return "MDRR";
  }
  return "?";
}

std::string to_string(Mode mode) { return mode == Mode::Exact ? "exact" : "finite"; }

namespace {

std::string lowercase(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return text;
}

}  // namespace

Algorithm parse_algorithm(const std::string& text) {
  const std::string key = lowercase(text);
  if (key == "rr") return Algorithm::RR;
  if (key == "drr") return Algorithm::DRR;
  if (key == "mdrr") return Algorithm::MDRR;
  throw ConfigError("unknown algorithm '" + text + "'");
}

Mode parse_mode(const std::string& text) {
  const std::string key = lowercase(text);
  if (key == "exact") return Mode::Exact;
  if (key == "finite") return Mode::Finite;
  throw ConfigError("unknown mode '" + text + "'");
}

void RetrainConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (algorithm == Algorithm::MDRR) {
    if (!(v > 1.0)) throw std::invalid_argument("MDRR needs v > 1");
    if (mode != Mode::Finite) throw std::invalid_argument("MDRR runs in finite mode only");
  }
  if (n_retrainings < 1) throw std::invalid_argument("n_retrainings must be at least 1");
  if (mode == Mode::Finite && samples_per_round <= 0 &&
      (trajectories_per_round < 1 || horizon < 1)) {
    throw std::invalid_argument("finite mode needs samples or trajectories per round");
  }
  if (ftrl) ftrl->validate();
}

OccupancyMeasure ConvergenceTrace::d_last(int window) const {
  if (rows.empty()) throw std::logic_error("empty trace has no d_last");
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(std::max(window, 1)),
                                                  rows.size());
  OccupancyMeasure mean{Matrix::Zero(rows.front().d.values.rows(), rows.front().d.values.cols())};
  for (std::size_t i = rows.size() - count; i < rows.size(); ++i) mean.values += rows[i].d.values;
  mean.values /= static_cast<double>(count);
  return mean;
}

void ConvergenceTrace::finalize(int window) {
  if (rows.empty()) return;
  const OccupancyMeasure anchor = d_last(window);
  for (TraceRow& row : rows) row.dist_last = occupancy_distance(row.d, anchor);
}

namespace {

// Data gathered in one deployment round.
struct RoundData {
  std::vector<SampleTuple> tuples;
  OccupancyMeasure behavior;
  double value = 0.0;
};

RoundData collect_round(const TabularMdp& current, const Policy& policy,
                        const RetrainConfig& cfg, std::uint64_t seed, int round) {
  RoundData data;
  if (cfg.samples_per_round > 0) {
    SampleBatch batch = draw_samples(current, policy, cfg.samples_per_round, seed, round);
    data.tuples = std::move(batch.tuples);
    data.behavior = std::move(batch.behavior_occupancy);
    data.value = value_of_policy(policy, current);
  } else {
    TrajectorySet set = draw_trajectories(current, policy, cfg.trajectories_per_round,
                                          cfg.horizon, seed);
    data.value = value_estimate(set.trajectories, current.discount);
    SampleBatch batch = batch_from_trajectories(set, current.discount, round);
    data.tuples = std::move(batch.tuples);
    data.behavior = std::move(batch.behavior_occupancy);
  }
  return data;
}

}  // namespace

ConvergenceTrace run_retraining(const TabularMdp& initial, EnvResponse& resp,
                                const RetrainConfig& cfg) {
  ConvergenceTrace trace;
  run_retraining(initial, resp, cfg, trace);
  return trace;
}

void run_retraining(const TabularMdp& initial, EnvResponse& resp, const RetrainConfig& cfg,
                    ConvergenceTrace& trace) {
  cfg.validate();
  initial.validate();
  const double gamma = initial.discount;
  const Vector& rho = initial.initial_dist;
  GdConfig gd = cfg.gd;
  gd.lambda = cfg.lambda;
  const FtrlConfig ftrl =
      cfg.ftrl.value_or(FtrlConfig::defaults(cfg.lambda, initial.n_states(), gamma));
  const int window = cfg.deployments_per_retraining();
  const bool mixed = cfg.algorithm == Algorithm::MDRR;
  const std::vector<double> weights = mixed ? mdrr_weights(cfg.v, window) : std::vector<double>{};

  resp.reset();
  trace = ConvergenceTrace{};
  trace.algorithm = to_string(cfg.algorithm);
  trace.seed = cfg.seed;
  trace.rows.reserve(static_cast<std::size_t>(cfg.n_retrainings));

  Environment env = initial.env;
  OccupancyMeasure d = occupancy_of_policy(uniform_policy(initial.n_states(), initial.n_actions()),
                                           initial);
  Vector h_warm = Vector::Zero(initial.n_states());
  int round = 0;

  for (int i = 0; i < cfg.n_retrainings; ++i) {
    const auto started = std::chrono::steady_clock::now();
    const Policy policy = policy_from_occupancy(d);
    TraceRow row;
    std::vector<RoundData> window_data;

    for (int g = 1; g <= window; ++g) {
      env = resp.step(d, env);
      check_row_stochastic(env.transitions, "response output");
      ++round;
      const TabularMdp current{env, gamma, rho};
      const bool needs_data = cfg.mode == Mode::Finite && (mixed || g == window);
      if (needs_data) {
        window_data.push_back(collect_round(current, policy, cfg, derive_seed(cfg.seed, round), round));
        row.round_samples.push_back(static_cast<int>(window_data.back().tuples.size()));
        if (g == window) row.value_estimate = window_data.back().value;
      } else {
        row.round_samples.push_back(0);
        if (g == window) row.value_estimate = value_of_policy(policy, current);
      }
    }

    OccupancyMeasure next;
    if (cfg.mode == Mode::Exact) {
      GdSolution solution = solve_gd(env, rho, gamma, gd, &h_warm);
      next = std::move(solution.d);
      h_warm = std::move(solution.h);
    } else {
      std::vector<SampleBatch> batches;
      if (mixed) {
        std::vector<std::vector<SampleTuple>> available;
        for (RoundData& data : window_data) available.push_back(std::move(data.tuples));
        auto chosen = allocate_samples(available, weights);
        for (std::size_t g = 0; g < chosen.size(); ++g) {
          batches.push_back(SampleBatch{round - window + 1 + static_cast<int>(g),
                                        std::move(chosen[g]), window_data[g].behavior});
        }
      } else {
        RoundData& last = window_data.back();
        batches.push_back(SampleBatch{round, std::move(last.tuples), last.behavior});
      }
      for (const SampleBatch& batch : batches) {
        row.samples_used += static_cast<int>(batch.tuples.size());
      }
      if (row.samples_used == 0) {
        throw std::runtime_error("sample allocation produced no samples");
      }
      next = ftrl_solve(batches, cfg.lambda, gamma, rho, ftrl).d;
    }

    row.retraining_index = i + 1;
    row.round_index = round;
    row.dist_prev = occupancy_distance(next, d);
    row.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    row.d = next;
    trace.rows.push_back(std::move(row));
    d = std::move(next);
  }
  trace.final_env = std::move(env);
  trace.finalize();
}

ConvergenceTrace run_rr(const TabularMdp& initial, EnvResponse& resp, const RetrainConfig& cfg) {
  if (cfg.algorithm != Algorithm::RR) throw std::invalid_argument("run_rr needs algorithm RR");
  return run_retraining(initial, resp, cfg);
}

ConvergenceTrace run_drr(const TabularMdp& initial, EnvResponse& resp, const RetrainConfig& cfg) {
  if (cfg.algorithm != Algorithm::DRR) throw std::invalid_argument("run_drr needs algorithm DRR");
  return run_retraining(initial, resp, cfg);
}

ConvergenceTrace run_mdrr(const TabularMdp& initial, EnvResponse& resp, const RetrainConfig& cfg) {
  if (cfg.algorithm != Algorithm::MDRR) throw std::invalid_argument("run_mdrr needs algorithm MDRR");
  return run_retraining(initial, resp, cfg);
}

std::vector<double> mdrr_weights(double v, int k) {
  if (!(v > 1.0) || k < 1) throw std::invalid_argument("mdrr_weights needs v > 1 and k >= 1");
  std::vector<double> weights(static_cast<std::size_t>(k));
  const double denom = std::pow(v, k) - 1.0;
  for (int g = 1; g <= k; ++g) {
    weights[static_cast<std::size_t>(g - 1)] = (v - 1.0) * std::pow(v, g - 1) / denom;
  }
  return weights;
}

std::vector<std::size_t> allocate_counts(std::span<const std::size_t> available,
                                         std::span<const double> weights) {
  if (available.size() != weights.size()) {
    throw std::invalid_argument("allocate_counts: one weight per round required");
  }
  const std::size_t k = available.size();
  std::vector<std::size_t> chosen(k, 0);
  // Cap on the total |F|; +infinity until the first round has been absorbed.
  double cap = std::numeric_limits<double>::infinity();
  std::size_t total = 0;
  double suffix_weight = 0.0;
  for (std::size_t t = k; t-- > 0;) {
    if (cap - static_cast<double>(total) <= static_cast<double>(available[t])) {
      chosen[t] = static_cast<std::size_t>(cap) - total;
      return chosen;
    }
    chosen[t] = available[t];
    total += available[t];
    suffix_weight += weights[t];
    // Small slack so that integral ratios are not floored away by rounding.
    cap = std::floor(std::min(static_cast<double>(total) / suffix_weight, cap) + 1e-9);
  }
  return chosen;
}

std::vector<std::vector<SampleTuple>> allocate_samples(
    std::span<const std::vector<SampleTuple>> available, std::span<const double> weights) {
  std::vector<std::size_t> sizes;
  sizes.reserve(available.size());
  for (const auto& list : available) sizes.push_back(list.size());
  const auto counts = allocate_counts(sizes, weights);
  std::vector<std::vector<SampleTuple>> chosen(available.size());
  for (std::size_t t = 0; t < available.size(); ++t) {
    chosen[t].assign(available[t].begin(),
                     available[t].begin() + static_cast<std::ptrdiff_t>(counts[t]));
  }
  return chosen;
}

int TheoryConstants::suggested_k_drr() const {
  return std::isfinite(k_drr) ? std::max(1, static_cast<int>(std::ceil(k_drr))) : -1;
}

int TheoryConstants::suggested_k_mdrr() const {
  return std::isfinite(k_mdrr) ? std::max(1, static_cast<int>(std::ceil(k_mdrr))) : -1;
}

TheoryConstants theory_constants(int n_states, double gamma, const SensitivityParams& sens,
                                 double d_pr, double delta, double v, double lambda) {
  if (n_states < 1) throw std::invalid_argument("n_states must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
  if (!(v > 1.0)) throw std::invalid_argument("v must exceed 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");

  const double s = n_states;
  const double g2 = (1.0 - gamma) * (1.0 - gamma);
  const double sqrt3 = std::sqrt(3.0);
  const double sqrt6 = std::sqrt(6.0);
  const double sqrt7 = std::sqrt(7.0);
  const double inf = std::numeric_limits<double>::infinity();

  TheoryConstants tc;
  tc.sensitivity = sens;
  tc.d_pr_estimate = d_pr;
  tc.lambda = lambda;
  tc.alpha = sqrt3 + sqrt7 * s * std::sqrt(s) / g2;
  tc.beta = (4.0 * sqrt7 * gamma + 3.0 * sqrt6) * s / g2 +
            18.0 * sqrt7 * gamma * s * s * std::sqrt(s) / (g2 * g2);
  tc.phi = std::max(tc.alpha, tc.beta);

  const double eps_p = sens.eps_p();
  const double eps_r = sens.eps_r();
  const double eps = sens.eps();
  const double iota = sens.iota();
  tc.lambda_min_rr = (eps_p < 1.0 && eps_r < 1.0)
                         ? std::max(tc.beta / (1.0 - eps_p), tc.alpha / (1.0 - eps_r))
                         : inf;
  tc.q_rr = std::max({iota, eps_p + tc.beta / lambda, eps_r + tc.alpha / lambda});
  tc.lambda_min_drr_mdrr = eps < 1.0 ? 2.0 * iota * tc.phi / (1.0 - eps) : inf;
  tc.q_drr = eps < 1.0 ? 2.0 * tc.phi * iota / (lambda * (1.0 - eps)) : inf;

  if (eps <= 0.0) {
    // The environment settles in one step.
    tc.k_drr = 1.0;
    tc.k_mdrr = 1.0;
  } else if (eps >= 1.0 || iota <= 0.0) {
    tc.k_drr = inf;
    tc.k_mdrr = inf;
  } else {
    const double log_inv_eps = std::log(1.0 / eps);
    tc.k_drr = std::max(1.0, std::log(d_pr / (delta * iota)) / log_inv_eps);
    if (v * eps > 1.0) {
      tc.k_mdrr = std::max(1.0, (std::log(eps * (v - 1.0) / (v * eps - 1.0)) +
                                 std::log(5.0 * (1.0 - eps) * d_pr / (iota * delta))) /
                                    log_inv_eps);
    } else {
      tc.k_mdrr = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return tc;
}

double rr_retraining_bound(double q, double initial_distance, double delta) {
  if (!(q > 0.0 && q < 1.0)) return std::numeric_limits<double>::infinity();
  return std::max(0.0, std::log(initial_distance / delta)) / std::log(1.0 / q) + 1.0;
}

double drr_retraining_bound(const TheoryConstants& tc, double initial_distance, double delta) {
  if (!(tc.q_drr > 0.0 && tc.q_drr < 1.0)) return std::numeric_limits<double>::infinity();
  return std::max(0.0, std::log(initial_distance / delta)) / std::log(1.0 / tc.q_drr);
}

StablePoint reference_fixed_point(const TabularMdp& initial, const EnvResponse& resp,
                                  const GdConfig& gd, double tol, int max_iters) {
  initial.validate();
  auto local = resp.clone();
  local->reset();
  Environment env = initial.env;
  OccupancyMeasure d =
      occupancy_of_policy(uniform_policy(initial.n_states(), initial.n_actions()), initial);
  Vector h = Vector::Zero(initial.n_states());
  double gap = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= max_iters; ++iter) {
    Environment next_env = local->step(d, env);
    const double env_gap = env_distance(env, next_env);
    env = std::move(next_env);
    GdSolution solution = solve_gd(env, initial.initial_dist, initial.discount, gd, &h);
    gap = occupancy_distance(solution.d, d);
    d = std::move(solution.d);
    h = std::move(solution.h);
    if (gap <= tol && env_gap <= tol) return StablePoint{std::move(d), std::move(env), iter};
  }
  throw SolverError("reference_fixed_point: exact RR did not settle", gap);
}

void write_trace_csv(std::ostream& out, const ConvergenceTrace& trace, bool include_timing) {
  out << "# schema_version=" << kTraceSchemaVersion << '\n';
  out << "algorithm,seed,retraining_index,round_index,dist_prev,dist_last,value_estimate,"
         "samples_used,elapsed_ms\n";
  const auto old_precision = out.precision(17);
  for (const TraceRow& row : trace.rows) {
    out << trace.algorithm << ',' << trace.seed << ',' << row.retraining_index << ','
        << row.round_index << ',' << row.dist_prev << ',' << row.dist_last << ','
        << row.value_estimate << ',' << row.samples_used << ','
        << (include_timing ? row.elapsed_ms : 0.0) << '\n';
  }
  out.precision(old_precision);
}

void write_failed_row(std::ostream& out, const std::string& algorithm, std::uint64_t seed,
                      const std::string& message) {
  std::string clean = message;
  std::replace(clean.begin(), clean.end(), ',', ';');
  std::replace(clean.begin(), clean.end(), '\n', ' ');
  out << algorithm << ',' << seed << ",failed,,,,,," << clean << '\n';
}

}  // namespace perfrl
