// fedlwr: run federated experiments and compare their fairness.
//
//   fedlwr run --config experiment.yaml [--threads N]
//   fedlwr compare --summary results/summary.csv --a fedavg --b fed_lwr

#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "fedlwr/config.hpp"
#include "fedlwr/errors.hpp"
#include "fedlwr/experiment.hpp"
#include "fedlwr/parallel.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise re-weighting federated learning simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run every (strategy, seed) pair of an experiment config");
  std::string config_path;
  unsigned threads = 0;
  run->add_option("--config", config_path, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  run->add_option("--threads", threads, "Worker threads (default: FEDLWR_THREADS or 1)");
  bool print_config = false;
  run->add_flag("--print-config", print_config, "Print the resolved config before running");

  auto* compare = app.add_subcommand("compare", "Compare two strategies in a summary.csv");
  std::string summary_path, strategy_a, strategy_b;
  compare->add_option("--summary", summary_path, "summary.csv from a run")->required()->check(CLI::ExistingFile);
  compare->add_option("--a", strategy_a, "First strategy")->required();
  compare->add_option("--b", strategy_b, "Second strategy")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto config = fedlwr::load_config(config_path);
      fedlwr::validate_config(config);
      if (print_config) std::cout << fedlwr::render_config(config);
      const unsigned workers = threads ? threads : fedlwr::threads_from_env();
      const auto start = std::chrono::steady_clock::now();
      const auto outputs = fedlwr::run_experiment(config, workers);
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      std::cout << "wrote " << outputs.curves.size() << " curves, " << outputs.weights.size()
                << " weight logs and " << outputs.summary.string() << " in " << elapsed.count() << " s\n";
      const auto rows = fedlwr::read_summary_csv(outputs.summary);
      for (const auto& r : rows) std::cout << "  " << r.strategy << ": avg=" << r.avg << " std=" << r.std << '\n';
    } else if (*compare) {
      const auto rows = fedlwr::read_summary_csv(summary_path);
      fedlwr::print_comparison(fedlwr::compare_strategies(rows, strategy_a, strategy_b), std::cout);
    }
  } catch (const fedlwr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
