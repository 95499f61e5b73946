#include "perfrl/experiment.hpp"

#include "perfrl/errors.hpp"
#include "perfrl/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#ifndef PERFRL_DATA_DIR
#define PERFRL_DATA_DIR "data"
#endif

namespace perfrl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream tags for seeds derived from a run seed.
constexpr std::uint64_t kPerturbTag = 0x70657274;
constexpr std::uint64_t kTargetTag = 0x74617267;
constexpr std::uint64_t kProbeTag = 0x70726f62;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& item : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* key) { return item.key() == key; });
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& target, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    target = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "' in " + where);
  }
}

EnvironmentKind parse_kind(const std::string& text) {
  if (text == "gridworld") return EnvironmentKind::GridWorld;
  if (text == "convex_combination") return EnvironmentKind::ConvexCombination;
  if (text == "constant") return EnvironmentKind::Constant;
  throw ConfigError("unknown environment type '" + text + "'");
}

std::string resolve_map(const std::string& path, const fs::path& base_dir) {
  const fs::path raw(path);
  if (raw.is_absolute()) return raw.string();
  if (!base_dir.empty() && fs::exists(base_dir / raw)) return (base_dir / raw).string();
  if (fs::exists(raw)) return raw.string();
  const fs::path shipped = fs::path(PERFRL_DATA_DIR) / raw;
  if (fs::exists(shipped)) return shipped.string();
  throw ConfigError("map file '" + path + "' not found");
}

EnvironmentSpec parse_environment(const json& obj, const fs::path& base_dir) {
  const std::string where = "environment";
  check_keys(obj,
             {"type", "map", "w", "perturb_seed", "q_tol", "rewards", "intervention_cost",
              "n_states", "n_actions", "kappa", "vary_rewards", "model_seed", "discount"},
             where);
  EnvironmentSpec spec;
  std::string type = "gridworld";
  read(obj, "type", type, where);
  spec.kind = parse_kind(type);
  read(obj, "w", spec.w, where);
  read(obj, "q_tol", spec.q_tol, where);
  read(obj, "intervention_cost", spec.intervention_cost, where);
  read(obj, "n_states", spec.n_states, where);
  read(obj, "n_actions", spec.n_actions, where);
  read(obj, "kappa", spec.kappa, where);
  read(obj, "vary_rewards", spec.vary_rewards, where);
  read(obj, "model_seed", spec.model_seed, where);
  read(obj, "discount", spec.discount, where);
  if (obj.contains("perturb_seed")) {
    std::uint64_t seed = 0;
    read(obj, "perturb_seed", seed, where);
    spec.perturb_seed = seed;
  }
  if (obj.contains("rewards")) {
    const json& rewards = obj.at("rewards");
    check_keys(rewards, {"start", "blank", "fragile", "hole"}, "environment.rewards");
    read(rewards, "start", spec.cell_rewards.start, "environment.rewards");
    read(rewards, "blank", spec.cell_rewards.blank, "environment.rewards");
    read(rewards, "fragile", spec.cell_rewards.fragile, "environment.rewards");
    read(rewards, "hole", spec.cell_rewards.hole, "environment.rewards");
  }
  std::string map;
  read(obj, "map", map, where);
  if (spec.kind == EnvironmentKind::GridWorld) {
    spec.map_path = resolve_map(map.empty() ? "maps/default_8x8.txt" : map, base_dir);
  }

  if (!(spec.discount > 0.0 && spec.discount < 1.0)) throw ConfigError("discount must lie in (0, 1)");
  if (spec.kind != EnvironmentKind::Constant && !(spec.w > 0.0 && spec.w <= 1.0)) {
    throw ConfigError("w must lie in (0, 1]");
  }
  if (spec.n_states < 1 || spec.n_actions < 1) throw ConfigError("dimensions must be positive");
  if (!(spec.kappa >= 0.0 && spec.kappa <= 1.0)) throw ConfigError("kappa must lie in [0, 1]");
  if (!(spec.q_tol > 0.0)) throw ConfigError("q_tol must be positive");
  return spec;
}

void apply_algorithm_fields(const json& obj, RetrainConfig& cfg, const std::string& where) {
  std::string text;
  if (obj.contains("algorithm")) {
    read(obj, "algorithm", text, where);
    cfg.algorithm = parse_algorithm(text);
  }
  if (obj.contains("mode")) {
    read(obj, "mode", text, where);
    cfg.mode = parse_mode(text);
  }
  read(obj, "lambda", cfg.lambda, where);
  read(obj, "k", cfg.k, where);
  read(obj, "v", cfg.v, where);
  read(obj, "samples_per_round", cfg.samples_per_round, where);
  read(obj, "trajectories_per_round", cfg.trajectories_per_round, where);
  read(obj, "horizon", cfg.horizon, where);
  read(obj, "n_retrainings", cfg.n_retrainings, where);
  if (obj.contains("gd")) {
    const json& gd = obj.at("gd");
    check_keys(gd, {"dual_tol", "max_iters"}, where + ".gd");
    read(gd, "dual_tol", cfg.gd.dual_tol, where + ".gd");
    read(gd, "max_iters", cfg.gd.max_iters, where + ".gd");
  }
  if (obj.contains("ftrl")) {
    const json& ftrl = obj.at("ftrl");
    check_keys(ftrl, {"n_rounds", "beta", "h_norm_bound", "overlap_bound"}, where + ".ftrl");
    // Unset fields keep the lambda-dependent defaults, resolved later.
    json merged = cfg.ftrl ? json{{"n_rounds", cfg.ftrl->n_rounds},
                                  {"beta", cfg.ftrl->beta},
                                  {"h_norm_bound", cfg.ftrl->h_norm_bound},
                                  {"overlap_bound", cfg.ftrl->overlap_bound}}
                           : json::object();
    merged.update(ftrl);
    FtrlConfig parsed;
    parsed.beta = std::numeric_limits<double>::quiet_NaN();
    parsed.h_norm_bound = std::numeric_limits<double>::quiet_NaN();
    read(merged, "n_rounds", parsed.n_rounds, where + ".ftrl");
    read(merged, "beta", parsed.beta, where + ".ftrl");
    read(merged, "h_norm_bound", parsed.h_norm_bound, where + ".ftrl");
    read(merged, "overlap_bound", parsed.overlap_bound, where + ".ftrl");
    cfg.ftrl = parsed;
  }
}

constexpr std::initializer_list<const char*> kAlgorithmKeys = {
    "algorithm", "label", "mode", "lambda", "k", "v", "samples_per_round",
    "trajectories_per_round", "horizon", "n_retrainings", "gd", "ftrl"};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc, const fs::path& base_dir) {
  check_keys(doc,
             {"schema_version", "environment", "defaults", "algorithms", "seeds",
              "n_retrainings", "output_dir", "include_timing", "theory"},
             "config");
  int version = 0;
  read(doc, "schema_version", version, "config");
  if (version != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(version));
  }

  ExperimentConfig config;
  if (!doc.contains("environment")) throw ConfigError("config has no environment");
  config.environment = parse_environment(doc.at("environment"), base_dir);

  RetrainConfig base;
  base.mode = Mode::Finite;
  base.k = 10;
  read(doc, "n_retrainings", base.n_retrainings, "config");
  if (doc.contains("defaults")) {
    check_keys(doc.at("defaults"), kAlgorithmKeys, "defaults");
    apply_algorithm_fields(doc.at("defaults"), base, "defaults");
  }

  if (!doc.contains("algorithms") || !doc.at("algorithms").is_array() ||
      doc.at("algorithms").empty()) {
    throw ConfigError("config needs a non-empty algorithms list");
  }
  std::set<std::string> labels;
  for (const json& entry : doc.at("algorithms")) {
    const std::string where = "algorithms entry";
    check_keys(entry, kAlgorithmKeys, where);
    if (!entry.contains("algorithm")) throw ConfigError("algorithms entry needs 'algorithm'");
    AlgorithmSpec spec{"", base};
    apply_algorithm_fields(entry, spec.cfg, where);
    spec.label = to_string(spec.cfg.algorithm);
    read(entry, "label", spec.label, where);
    if (spec.label.empty() || spec.label.find_first_of(",/\\\n") != std::string::npos) {
      throw ConfigError("bad algorithm label '" + spec.label + "'");
    }
    if (!labels.insert(spec.label).second) {
      throw ConfigError("duplicate algorithm label '" + spec.label + "'");
    }
    if (spec.cfg.ftrl) {
      const FtrlConfig fallback = FtrlConfig::defaults(
          spec.cfg.lambda,
          config.environment.kind == EnvironmentKind::GridWorld
              ? GridWorld::load(config.environment.map_path).n_states()
              : config.environment.n_states,
          config.environment.discount);
      if (std::isnan(spec.cfg.ftrl->beta)) spec.cfg.ftrl->beta = fallback.beta;
      if (std::isnan(spec.cfg.ftrl->h_norm_bound)) {
        spec.cfg.ftrl->h_norm_bound = fallback.h_norm_bound;
      }
    }
    try {
      spec.cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(spec.label + ": " + e.what());
    }
    config.algorithms.push_back(std::move(spec));
  }

  if (!doc.contains("seeds")) throw ConfigError("config has no seeds");
  read(doc, "seeds", config.seeds, "config");
  if (config.seeds.empty()) throw ConfigError("config needs at least one seed");
  read(doc, "output_dir", config.output_dir, "config");
  read(doc, "include_timing", config.include_timing, "config");
  if (doc.contains("theory")) {
    check_keys(doc.at("theory"), {"delta", "n_probes"}, "theory");
    read(doc.at("theory"), "delta", config.theory.delta, "theory");
    read(doc.at("theory"), "n_probes", config.theory.n_probes, "theory");
    if (!(config.theory.delta > 0.0) || config.theory.n_probes < 2) {
      throw ConfigError("theory needs delta > 0 and at least two probes");
    }
  }
  return config;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(doc, fs::path(path).parent_path());
}

TabularMdp random_mdp(int n_states, int n_actions, double discount, std::uint64_t seed) {
  Rng rng(seed);
  Environment env{Matrix(n_states * n_actions, n_states), Matrix(n_states, n_actions)};
  for (Eigen::Index row = 0; row < env.transitions.rows(); ++row) {
    for (int next = 0; next < n_states; ++next) env.transitions(row, next) = 0.05 + rng.uniform();
    env.transitions.row(row) /= env.transitions.row(row).sum();
  }
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) env.rewards(s, a) = rng.uniform();
  return TabularMdp{std::move(env), discount, Vector::Constant(n_states, 1.0 / n_states)};
}

Instance build_instance(const EnvironmentSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case EnvironmentKind::GridWorld: {
      const std::string map = spec.map_path.empty()
                                  ? std::string(PERFRL_DATA_DIR) + "/maps/default_8x8.txt"
                                  : spec.map_path;
      GridWorld a1 = GridWorld::load(map, spec.cell_rewards, spec.intervention_cost,
                                     spec.discount);
      GridWorld a2 = perturb_grid(a1, spec.perturb_seed.value_or(derive_seed(seed, kPerturbTag)));
      TabularMdp initial = grid_mdp(a1);
      auto response = std::make_unique<TwoAgentResponse>(std::move(a1), std::move(a2), spec.w,
                                                         spec.q_tol);
      return Instance{std::move(initial), std::move(response)};
    }
    case EnvironmentKind::ConvexCombination: {
      TabularMdp initial = random_mdp(spec.n_states, spec.n_actions, spec.discount, spec.model_seed);
      TargetMap target = make_policy_mixture_target(
          spec.n_states, spec.n_actions, spec.kappa, derive_seed(spec.model_seed, kTargetTag),
          spec.vary_rewards ? nullptr : &initial.env.rewards);
      auto response = std::make_unique<ConvexCombinationResponse>(spec.w, std::move(target));
      return Instance{std::move(initial), std::move(response)};
    }
    case EnvironmentKind::Constant: {
      TabularMdp initial = random_mdp(spec.n_states, spec.n_actions, spec.discount, spec.model_seed);
      auto response = std::make_unique<ConstantResponse>(initial.env);
      return Instance{std::move(initial), std::move(response)};
    }
  }
  throw ConfigError("unknown environment kind");
}

std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells) {
  // Keeps the order in which labels first appear.
  std::vector<std::string> order;
  std::map<std::string, std::map<int, std::vector<const TraceRow*>>> grouped;
  for (const CellResult& cell : cells) {
    if (cell.failed) continue;
    if (!grouped.count(cell.label)) order.push_back(cell.label);
    auto& by_index = grouped[cell.label];
    for (const TraceRow& row : cell.trace.rows) by_index[row.retraining_index].push_back(&row);
  }
  std::vector<SummaryRow> out;
  for (const std::string& label : order) {
    for (const auto& [index, rows] : grouped[label]) {
      SummaryRow summary;
      summary.label = label;
      summary.retraining_index = index;
      summary.n_seeds = static_cast<int>(rows.size());
      double value_sum = 0.0;
      for (const TraceRow* row : rows) {
        summary.mean += row->dist_last;
        value_sum += row->value_estimate;
      }
      summary.mean /= summary.n_seeds;
      summary.value_mean = value_sum / summary.n_seeds;
      if (summary.n_seeds > 1) {
        double ss = 0.0;
        for (const TraceRow* row : rows) ss += (row->dist_last - summary.mean) * (row->dist_last - summary.mean);
        summary.se = std::sqrt(ss / (summary.n_seeds - 1) / summary.n_seeds);
      }
      out.push_back(summary);
    }
  }
  return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "# schema_version=" << kTraceSchemaVersion << '\n';
  out << "algorithm,retraining_index,n_seeds,mean_dist_last,se_dist_last,ci_low,ci_high,"
         "mean_value_estimate\n";
  const auto old_precision = out.precision(17);
  for (const SummaryRow& row : rows) {
    out << row.label << ',' << row.retraining_index << ',' << row.n_seeds << ',' << row.mean
        << ',' << row.se << ',' << row.mean - 1.96 * row.se << ',' << row.mean + 1.96 * row.se
        << ',' << row.value_mean << '\n';
  }
  out.precision(old_precision);
}

ValueCheck sanity_check_values(const std::vector<CellResult>& cells, int window,
                               double threshold) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, int>> totals;
  for (const CellResult& cell : cells) {
    if (cell.failed || cell.trace.rows.empty()) continue;
    if (!totals.count(cell.label)) order.push_back(cell.label);
    auto& [sum, count] = totals[cell.label];
    const std::size_t n = cell.trace.rows.size();
    const std::size_t take = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(window, 1)));
    for (std::size_t i = n - take; i < n; ++i) {
      sum += cell.trace.rows[i].value_estimate;
      ++count;
    }
  }
  if (order.size() < 2) throw std::invalid_argument("value check needs at least two algorithms");
  ValueCheck check;
  check.labels = order;
  for (const std::string& label : order) {
    check.converged_values.push_back(totals[label].first / totals[label].second);
  }
  check.best = *std::max_element(check.converged_values.begin(), check.converged_values.end());
  const double worst =
      *std::min_element(check.converged_values.begin(), check.converged_values.end());
  const double scale = std::abs(check.best) > 0.0 ? std::abs(check.best) : 1.0;
  check.spread = (check.best - worst) / scale;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if ((check.best - check.converged_values[i]) / scale > threshold) {
      check.flagged.push_back(order[i]);
    }
  }
  return check;
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  ExperimentOutcome outcome;
  outcome.out_dir = options.out_dir.empty() ? fs::path(config.output_dir) : fs::path(options.out_dir);
  fs::create_directories(outcome.out_dir);

  struct Task {
    const AlgorithmSpec* algorithm;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const AlgorithmSpec& algorithm : config.algorithms) {
    for (std::uint64_t seed : config.seeds) tasks.push_back({&algorithm, seed + options.seed_offset});
  }
  outcome.cells.resize(tasks.size());

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& task = tasks[i];
      CellResult& cell = outcome.cells[i];
      cell.label = task.algorithm->label;
      cell.seed = task.seed;
      RetrainConfig cfg = task.algorithm->cfg;
      cfg.seed = task.seed;
      try {
        Instance instance = build_instance(config.environment, task.seed);
        run_retraining(instance.initial, *instance.response, cfg, cell.trace);
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
        cell.trace.finalize();
      }
      cell.trace.algorithm = cell.label;
      cell.trace.seed = task.seed;
      const fs::path file =
          outcome.out_dir / (cell.label + "_seed" + std::to_string(task.seed) + ".csv");
      std::ofstream out(file);
      write_trace_csv(out, cell.trace, config.include_timing);
      if (cell.failed) write_failed_row(out, cell.label, task.seed, cell.error);
      if (options.log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        *options.log << cell.label << " seed " << task.seed
                     << (cell.failed ? " FAILED: " + cell.error : std::string(" done")) << '\n';
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> threads;
  for (int j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (std::thread& thread : threads) thread.join();

  outcome.any_failed = std::any_of(outcome.cells.begin(), outcome.cells.end(),
                                   [](const CellResult& c) { return c.failed; });
  outcome.summary = summarize(outcome.cells);
  std::ofstream summary(outcome.out_dir / "summary.csv");
  write_summary_csv(summary, outcome.summary);
  std::set<std::string> finished;
  for (const CellResult& cell : outcome.cells) {
    if (!cell.failed && !cell.trace.rows.empty()) finished.insert(cell.label);
  }
  if (finished.size() >= 2) outcome.value_check = sanity_check_values(outcome.cells);
  return outcome;
}

namespace {

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::vector<Probe> make_probes(const TabularMdp& initial, const EnvResponse& resp, int count,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Probe> probes;
  auto local = resp.clone();
  local->reset();
  for (int i = 0; i < count; ++i) {
    Policy policy{Matrix(initial.n_states(), initial.n_actions())};
    for (int s = 0; s < initial.n_states(); ++s) {
      for (int a = 0; a < initial.n_actions(); ++a) policy.probs(s, a) = 0.05 + rng.uniform();
      policy.probs.row(s) /= policy.probs.row(s).sum();
    }
    const OccupancyMeasure d = occupancy_of_policy(policy, initial);
    Environment env = initial.env;
    for (int step = 0; step <= i % 3; ++step) env = local->step(d, env);
    probes.push_back(Probe{d, std::move(env)});
  }
  return probes;
}

}  // namespace

json theory_report(const ExperimentConfig& config) {
  const std::uint64_t seed = config.seeds.front();
  Instance instance = build_instance(config.environment, seed);
  const TabularMdp& initial = instance.initial;
  const auto probes = make_probes(initial, *instance.response, config.theory.n_probes,
                                  derive_seed(seed, kProbeTag));
  const SensitivityParams sens = estimate_sensitivity(*instance.response, probes);
  const double d_pr = estimate_dpr(*instance.response, probes);

  json report;
  report["environment"] = instance.response->name();
  report["n_states"] = initial.n_states();
  report["n_actions"] = initial.n_actions();
  report["discount"] = initial.discount;
  report["delta"] = config.theory.delta;
  report["sensitivity"] = {{"iota_p", sens.iota_p}, {"iota_r", sens.iota_r},
                           {"eps_pp", sens.eps_pp}, {"eps_pr", sens.eps_pr},
                           {"eps_rp", sens.eps_rp}, {"eps_rr", sens.eps_rr},
                           {"iota", sens.iota()},   {"eps", sens.eps()},
                           {"source", "empirical lower bound from random probes"}};
  report["d_pr_estimate"] = d_pr;
  report["dual_bound_assumed"] =
      3.0 * initial.n_states() / ((1.0 - initial.discount) * (1.0 - initial.discount));

  json entries = json::array();
  for (const AlgorithmSpec& algorithm : config.algorithms) {
    const double v = algorithm.cfg.v > 1.0 ? algorithm.cfg.v : 1.2;
    const TheoryConstants tc = theory_constants(initial.n_states(), initial.discount, sens, d_pr,
                                                config.theory.delta, v, algorithm.cfg.lambda);
    GdConfig gd = algorithm.cfg.gd;
    gd.lambda = algorithm.cfg.lambda;
    json entry = {{"label", algorithm.label},
                  {"lambda", tc.lambda},
                  {"v", v},
                  {"alpha", tc.alpha},
                  {"beta", tc.beta},
                  {"phi", tc.phi},
                  {"lambda_min_rr", number_or_null(tc.lambda_min_rr)},
                  {"lambda_min_drr_mdrr", number_or_null(tc.lambda_min_drr_mdrr)},
                  {"q_rr", number_or_null(tc.q_rr)},
                  {"q_drr", number_or_null(tc.q_drr)},
                  {"k_drr", number_or_null(tc.k_drr)},
                  {"k_mdrr", number_or_null(tc.k_mdrr)},
                  {"suggested_k_drr", tc.suggested_k_drr()},
                  {"suggested_k_mdrr", tc.suggested_k_mdrr()}};
    try {
      entry["dual_norm_observed"] = solve_gd(initial, gd).h.norm();
    } catch (const SolverError& e) {
      entry["dual_norm_observed"] = nullptr;
    }
    entries.push_back(std::move(entry));
  }
  report["algorithms"] = std::move(entries);
  return report;
}

}  // namespace perfrl
