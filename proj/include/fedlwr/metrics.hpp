#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fedlwr/data.hpp"
#include "fedlwr/nn.hpp"

namespace fedlwr {

// rho[k][m]: weight of client k for layer m (both 0-based here).
struct AggregationWeights {
  std::vector<std::vector<double>> rho;
  // Per layer: true when the layer fell back to uniform 1/K.
  std::vector<bool> uniform_fallback;

  std::size_t clients() const { return rho.size(); }
  std::size_t layers() const { return rho.empty() ? 0 : rho.front().size(); }

  static AggregationWeights uniform(std::size_t clients, std::size_t layers);

  bool operator==(const AggregationWeights&) const = default;
};

struct RoundReport {
  int round = 0;
  std::vector<double> per_client_dice;
  double avg = 0.0;
  double std = 0.0;  // population standard deviation (divisor K)
  AggregationWeights weights_used;
  // delta_log[k][m]; empty for strategies that do not measure similarity.
  std::vector<std::vector<double>> delta_log;
  std::vector<std::vector<bool>> degenerate_log;
};

double mean(std::span<const double> values);
double population_std(std::span<const double> values);

// Fills avg/std from per_client_dice.
RoundReport make_round_report(int round, std::vector<double> per_client_dice, AggregationWeights weights,
                              std::vector<std::vector<double>> delta_log = {},
                              std::vector<std::vector<bool>> degenerate_log = {});

// 2|A n B| / (|A| + |B|) over binary masks; 1 when both are empty.
double dice_coefficient(const Tensor& pred_mask, const Tensor& true_mask);

// 1 where sigmoid(logit) > 0.5, i.e. logit > 0.
Tensor binarize_logits(const Tensor& logits);

// Mean per-sample Dice of the model's binarized predictions.
double evaluate_client(const ModelParams& model, std::span<const Sample> test_set);

// Same, for an arbitrary predictor mapping an image batch to logits.
using LogitPredictor = std::function<Tensor(const Tensor& batch)>;
double evaluate_predictor(const LogitPredictor& predict, std::span<const Sample> test_set);

enum class FairnessVerdict { a_fairer, b_fairer, tie };

std::string_view to_string(FairnessVerdict verdict);

inline constexpr double kFairnessTieTolerance = 1e-9;

// Lower standard deviation is fairer.
FairnessVerdict fairer_by_std(double std_a, double std_b);
FairnessVerdict fairness_compare(const RoundReport& a, const RoundReport& b);

}  // namespace fedlwr
