// perfrl_cli: run, sweep, theory and validate subcommands over a JSON config.

#include "perfrl/errors.hpp"
#include "perfrl/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <thread>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Args {
  std::string config;
  std::string out;
  int jobs = 0;
  std::uint64_t seed_offset = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Args& args, bool runs) {
  cmd->add_option("config_path", args.config, "Experiment config (JSON)");
  cmd->add_option("--config", args.config, "Experiment config (JSON)");
  if (!runs) return;
  cmd->add_option("--out", args.out, "Output directory (overrides output_dir)");
  cmd->add_option("--jobs", args.jobs, "Parallel cells")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed-offset", args.seed_offset, "Added to every configured seed");
  cmd->add_flag("--quiet", args.quiet, "No progress lines");
}

int do_run(const Args& args, int default_jobs) {
  const perfrl::ExperimentConfig config = perfrl::ExperimentConfig::load(args.config);
  perfrl::RunOptions options;
  options.out_dir = args.out;
  options.jobs = args.jobs > 0 ? args.jobs : default_jobs;
  options.seed_offset = args.seed_offset;
  options.log = args.quiet ? nullptr : &std::cerr;
  const perfrl::ExperimentOutcome outcome = perfrl::run_experiment(config, options);

  std::cout << "wrote " << outcome.cells.size() << " traces and summary.csv to "
            << outcome.out_dir.string() << '\n';
  for (const perfrl::SummaryRow& row : outcome.summary) {
    const bool last = &row == &outcome.summary.back() ||
                      (&row + 1)->label != row.label;
    if (last) {
      std::cout << row.label << ": final mean dist_last " << row.mean << " (se " << row.se
                << ", " << row.n_seeds << " seeds)\n";
    }
  }
  if (outcome.value_check) {
    const perfrl::ValueCheck& check = *outcome.value_check;
    std::cout << "value check: spread " << check.spread;
    if (check.ok()) {
      std::cout << ", no flag\n";
    } else {
      std::cout << ", flagged:";
      for (const std::string& label : check.flagged) std::cout << ' ' << label;
      std::cout << '\n';
    }
  }
  return outcome.any_failed ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Repeated retraining experiments in performative reinforcement learning"};
  app.require_subcommand(1);
  Args args;
  CLI::App* run = app.add_subcommand("run", "Run all cells sequentially");
  CLI::App* sweep = app.add_subcommand("sweep", "Run all cells in parallel");
  CLI::App* theory = app.add_subcommand("theory", "Print theory constants as JSON");
  CLI::App* validate = app.add_subcommand("validate", "Check a config and exit");
  add_common(run, args, true);
  add_common(sweep, args, true);
  add_common(theory, args, false);
  add_common(validate, args, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (args.config.empty()) {
    std::cerr << "error: no config given\n";
    return kExitConfig;
  }

  try {
    if (*validate) {
      const perfrl::ExperimentConfig config = perfrl::ExperimentConfig::load(args.config);
      std::cout << "ok: " << config.algorithms.size() << " algorithms, " << config.seeds.size()
                << " seeds\n";
      return kExitOk;
    }
    if (*theory) {
      const perfrl::ExperimentConfig config = perfrl::ExperimentConfig::load(args.config);
      std::cout << perfrl::theory_report(config).dump(2) << '\n';
      return kExitOk;
    }
    const int hardware = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    return do_run(args, *sweep ? hardware : 1);
  } catch (const perfrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
