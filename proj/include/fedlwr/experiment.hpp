#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedlwr/config.hpp"
#include "fedlwr/metrics.hpp"

namespace fedlwr {

// Client datasets for one seed: generated from the benchmark, or loaded
// from config.dataset_paths.
std::vector<DatasetBundle> experiment_datasets(const ExperimentConfig& config, std::uint64_t seed);

// All round reports of one (strategy, seed) run, in round order.
std::vector<RoundReport> run_single(const ExperimentConfig& config, StrategyKind strategy, std::uint64_t seed);

struct ExperimentOutputs {
  std::vector<std::filesystem::path> curves;
  std::vector<std::filesystem::path> weights;
  std::filesystem::path summary;
};

std::filesystem::path run_directory(const ExperimentConfig& config, StrategyKind strategy, std::uint64_t seed);

// Validates the config, runs every (strategy, seed) pair on up to `threads`
// workers and writes:
//   <out>/<strategy>_<seed>/curve_<strategy>_<seed>.csv
//   <out>/<strategy>_<seed>/weights_<strategy>_<seed>.csv
//   <out>/summary.csv
// Output bytes do not depend on `threads`.
ExperimentOutputs run_experiment(const ExperimentConfig& config, unsigned threads);

void write_curve_csv(const std::vector<RoundReport>& reports, const std::filesystem::path& path);
void write_weights_csv(const std::vector<RoundReport>& reports, const std::filesystem::path& path);

struct CurveRow {
  int round = 0;
  std::vector<double> per_client;
  double avg = 0.0;
  double std = 0.0;
};

std::vector<CurveRow> read_curve_csv(const std::filesystem::path& path);

struct SummaryRow {
  std::string strategy;
  std::vector<double> per_client;  // median over seeds of final-round Dice
  double avg = 0.0;                // median over seeds of final-round avg
  double std = 0.0;                // median over seeds of final-round std
};

double median(std::vector<double> values);

// One row per strategy from the final round of each seed's run.
SummaryRow summarize(std::string strategy, const std::vector<std::vector<RoundReport>>& runs);

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

enum class AverageVerdict { a_higher, b_higher, tie };

struct Comparison {
  SummaryRow a;
  SummaryRow b;
  FairnessVerdict fairness = FairnessVerdict::tie;
  AverageVerdict average = AverageVerdict::tie;
};

// Throws InvalidArgument naming a strategy missing from the rows.
Comparison compare_strategies(const std::vector<SummaryRow>& rows, const std::string& strategy_a,
                              const std::string& strategy_b);

void print_comparison(const Comparison& comparison, std::ostream& out);

}  // namespace fedlwr
