#pragma once

#include "perfrl/gridworld.hpp"
#include "perfrl/retraining.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace perfrl {

inline constexpr int kConfigSchemaVersion = 1;

enum class EnvironmentKind { GridWorld, ConvexCombination, Constant };

struct EnvironmentSpec {
  EnvironmentKind kind = EnvironmentKind::GridWorld;

  // gridworld
  std::string map_path;  // empty: the shipped 8x8 map
  double w = 0.5;
  /// Fixed perturbation seed; otherwise derived from each run seed.
  std::optional<std::uint64_t> perturb_seed;
  double q_tol = 1e-8;
  CellRewards cell_rewards;
  double intervention_cost = -0.05;

  // convex_combination and constant
  int n_states = 4;
  int n_actions = 3;
  double kappa = 1.0;
  /// When false only transitions respond; rewards stay at their initial table.
  bool vary_rewards = false;
  std::uint64_t model_seed = 0;

  double discount = 0.9;
};

struct AlgorithmSpec {
  std::string label;
  RetrainConfig cfg;
};

/// Inputs of the `theory` subcommand.
struct TheorySpec {
  double delta = 1e-2;
  int n_probes = 6;
};

struct ExperimentConfig {
  EnvironmentSpec environment;
  std::vector<AlgorithmSpec> algorithms;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "results";
  bool include_timing = false;
  TheorySpec theory;

  /// Throws ConfigError on a malformed document, unknown keys, an empty
  /// seed or algorithm list or a missing map file. Relative map paths are
  /// resolved against `base_dir`, then against the shipped data directory.
  static ExperimentConfig from_json(const nlohmann::json& doc,
                                    const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::string& path);
};

/// Initial MDP and response model of one run.
struct Instance {
  TabularMdp initial;
  std::unique_ptr<EnvResponse> response;
};

/// Builds the environment for run seed `seed`. Everything random about the
/// environment itself depends only on the spec and `seed`, never on the
/// algorithm.
Instance build_instance(const EnvironmentSpec& spec, std::uint64_t seed);

/// Synthetic MDP with random kernels and rewards in [0, 1].
TabularMdp random_mdp(int n_states, int n_actions, double discount, std::uint64_t seed);

struct CellResult {
  std::string label;
  std::uint64_t seed = 0;
  ConvergenceTrace trace;
  bool failed = false;
  std::string error;
};

struct SummaryRow {
  std::string label;
  int retraining_index = 0;
  int n_seeds = 0;
  double mean = 0.0;
  double se = 0.0;
  double value_mean = 0.0;
};

/// Mean and standard error of dist_last per (algorithm, retraining index)
/// across the cells that finished.
std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

struct ValueCheck {
  std::vector<std::string> labels;
  /// Mean value estimate over the final `window` retrainings and all seeds.
  std::vector<double> converged_values;
  double best = 0.0;
  double spread = 0.0;
  std::vector<std::string> flagged;
  bool ok() const { return flagged.empty(); }
};

/// Flags every algorithm whose converged value deviates from the best one by
/// more than `threshold` relative to |best|. Needs at least two algorithms.
ValueCheck sanity_check_values(const std::vector<CellResult>& cells, int window = 10,
                               double threshold = 0.2);

struct RunOptions {
  std::string out_dir;  // overrides the config when non-empty
  int jobs = 1;
  std::uint64_t seed_offset = 0;
  std::ostream* log = nullptr;
};

struct ExperimentOutcome {
  std::vector<CellResult> cells;
  std::vector<SummaryRow> summary;
  std::optional<ValueCheck> value_check;
  std::filesystem::path out_dir;
  bool any_failed = false;
};

/// Runs every (algorithm, seed) cell on up to `jobs` threads and writes
/// `<label>_seed<seed>.csv` per cell plus `summary.csv`. Cell failures are
/// recorded (partial CSV with a failed row) rather than thrown.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Theory constants for the configured environment with sensitivities
/// estimated from random probes, one entry per algorithm's lambda and v.
nlohmann::json theory_report(const ExperimentConfig& config);

}  // namespace perfrl
