#pragma once

#include "perfrl/exact_solver.hpp"
#include "perfrl/finite_sample.hpp"
#include "perfrl/mdp.hpp"
#include "perfrl/response.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace perfrl {

enum class Algorithm { RR, DRR, MDRR };
enum class Mode { Exact, Finite };

std::string to_string(Algorithm algorithm);
std::string to_string(Mode mode);
/// Accepts "RR", "DRR", "MDRR" (case-insensitive); throws ConfigError.
Algorithm parse_algorithm(const std::string& text);
Mode parse_mode(const std::string& text);

struct RetrainConfig {
  Algorithm algorithm = Algorithm::RR;
  Mode mode = Mode::Exact;
  double lambda = 0.1;
  /// Deployments per retraining (DRR, MDRR). RR always uses 1.
  int k = 1;
  /// Geometric ratio of the MDRR sample weights.
  double v = 1.2;
  /// When positive, each round draws this many i.i.d. tuples with the exact
  /// behavior occupancy. Otherwise trajectories are sampled.
  int samples_per_round = 0;
  int trajectories_per_round = 1000;
  int horizon = 50;
  int n_retrainings = 60;
  std::uint64_t seed = 0;
  GdConfig gd;
  /// Defaults to FtrlConfig::defaults(lambda, |S|, gamma) when unset.
  std::optional<FtrlConfig> ftrl;

  void validate() const;
  int deployments_per_retraining() const { return algorithm == Algorithm::RR ? 1 : k; }
};

struct TraceRow {
  int retraining_index = 0;
  /// Deployment rounds elapsed when this occupancy was computed.
  int round_index = 0;
  OccupancyMeasure d;
  /// Samples drawn in each round of the window, and how many the update used.
  std::vector<int> round_samples;
  int samples_used = 0;
  double dist_prev = 0.0;
  double dist_last = 0.0;
  /// Discounted value of the policy deployed during the window, from the
  /// training trajectories when there are any and exact otherwise.
  double value_estimate = 0.0;
  double elapsed_ms = 0.0;
};

struct ConvergenceTrace {
  std::string algorithm;
  std::uint64_t seed = 0;
  std::vector<TraceRow> rows;
  /// Final environment, so runs can be resumed or inspected.
  Environment final_env;

  /// Mean of the final min(window, n) occupancies.
  OccupancyMeasure d_last(int window = 10) const;
  /// Fills dist_last = ||d_i - d_last|| on every row.
  void finalize(int window = 10);
};

/// Retraining loop shared by all three algorithms. Starts from
/// d_0 = occupancy of the uniform policy under `initial`; each retraining
/// deploys pi_{d_i} for the algorithm's number of rounds (stepping `resp`
/// once per round) and then updates d via solve_gd (exact) or ftrl_solve
/// (finite). `resp` is reset before the first round.
ConvergenceTrace run_retraining(const TabularMdp& initial, EnvResponse& resp,
                                const RetrainConfig& cfg);
/// Same loop, appending rows to `trace` as they complete so that a caller
/// still holds the finished retrainings if a later one throws.
void run_retraining(const TabularMdp& initial, EnvResponse& resp, const RetrainConfig& cfg,
                    ConvergenceTrace& trace);

/// Repeated retraining: update after every round.
ConvergenceTrace run_rr(const TabularMdp& initial, EnvResponse& resp,
                        const RetrainConfig& cfg);
/// Delayed repeated retraining: deploy k rounds, update on the last one.
ConvergenceTrace run_drr(const TabularMdp& initial, EnvResponse& resp,
                         const RetrainConfig& cfg);
/// Mixed DRR: deploy k rounds, update on geometrically weighted samples from
/// all of them. Finite mode only.
ConvergenceTrace run_mdrr(const TabularMdp& initial, EnvResponse& resp,
                          const RetrainConfig& cfg);

/// w_g = (v - 1) v^(g-1) / (v^k - 1) for g = 1..k.
std::vector<double> mdrr_weights(double v, int k);

/// Largest per-round sample counts F_t <= available_t whose suffix sums
/// satisfy |F_t..F_k| >= (w_t + ... + w_k) |F|. Backward pass with the
/// running cap M'.
std::vector<std::size_t> allocate_counts(std::span<const std::size_t> available,
                                         std::span<const double> weights);

/// allocate_counts applied to sample lists; F_t is a prefix of S_t.
std::vector<std::vector<SampleTuple>> allocate_samples(
    std::span<const std::vector<SampleTuple>> available, std::span<const double> weights);

struct TheoryConstants {
  double alpha = 0.0;
  double beta = 0.0;
  double phi = 0.0;
  double lambda_min_rr = 0.0;
  double lambda_min_drr_mdrr = 0.0;
  /// Per-retraining contraction factor of exact RR at `lambda`.
  double q_rr = 0.0;
  /// Per-retraining contraction factor of exact DRR at `lambda`.
  double q_drr = 0.0;
  double k_drr = 0.0;
  /// NaN when v * eps <= 1 (the MDRR deployment formula does not apply).
  double k_mdrr = 0.0;
  double d_pr_estimate = 0.0;
  double lambda = 0.0;
  SensitivityParams sensitivity;

  int suggested_k_drr() const;
  int suggested_k_mdrr() const;
};

/// Evaluates the sensitivity-dependent constants for an |S|-state problem.
/// k_drr = ln(d_pr / (delta iota)) / ln(1 / eps), and
/// k_mdrr = [ln(eps (v-1) / (v eps - 1)) + ln(5 (1-eps) d_pr / (iota delta))] / ln(1/eps),
/// both clamped to at least 1.
TheoryConstants theory_constants(int n_states, double gamma, const SensitivityParams& sens,
                                 double d_pr, double delta, double v, double lambda);

/// Retraining count after which exact RR is within delta of the stable point:
/// ln(initial_distance / delta) / ln(1 / q) + 1.
double rr_retraining_bound(double q, double initial_distance, double delta);

/// Exact DRR: ln(||d_0 - d_S|| / delta) / ln(lambda (1 - eps) / (2 phi iota)).
double drr_retraining_bound(const TheoryConstants& tc, double initial_distance,
                            double delta);

struct StablePoint {
  OccupancyMeasure d;
  Environment env;
  int iterations = 0;
};

/// Reference stable occupancy: exact RR on a copy of `resp` until successive
/// occupancies differ by at most `tol`. Throws SolverError otherwise.
StablePoint reference_fixed_point(const TabularMdp& initial, const EnvResponse& resp,
                                  const GdConfig& gd, double tol = 1e-12,
                                  int max_iters = 100000);

inline constexpr int kTraceSchemaVersion = 1;

/// CSV with a `# schema_version=` comment line and the columns
/// algorithm,seed,retraining_index,round_index,dist_prev,dist_last,
/// value_estimate,samples_used,elapsed_ms.
void write_trace_csv(std::ostream& out, const ConvergenceTrace& trace,
                     bool include_timing = false);
/// Marker row appended to a partial trace after a runtime failure.
void write_failed_row(std::ostream& out, const std::string& algorithm, std::uint64_t seed,
                      const std::string& message);

}  // namespace perfrl
