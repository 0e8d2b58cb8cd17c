#include "fedlwr/metrics.hpp"

#include <cmath>

#include "fedlwr/errors.hpp"

namespace fedlwr {

AggregationWeights AggregationWeights::uniform(std::size_t clients, std::size_t layers) {
  AggregationWeights w;
  w.rho.assign(clients, std::vector<double>(layers, 1.0 / static_cast<double>(clients)));
  w.uniform_fallback.assign(layers, false);
  return w;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of an empty list");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double population_std(std::span<const double> values) {
  const double mu = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

RoundReport make_round_report(int round, std::vector<double> per_client_dice, AggregationWeights weights,
                              std::vector<std::vector<double>> delta_log,
                              std::vector<std::vector<bool>> degenerate_log) {
  RoundReport r;
  r.round = round;
  r.avg = mean(per_client_dice);
  r.std = population_std(per_client_dice);
  r.per_client_dice = std::move(per_client_dice);
  r.weights_used = std::move(weights);
  r.delta_log = std::move(delta_log);
  r.degenerate_log = std::move(degenerate_log);
  return r;
}

double dice_coefficient(const Tensor& pred_mask, const Tensor& true_mask) {
  require_same_shape(pred_mask, true_mask, "dice_coefficient");
  double inter = 0.0, a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const double p = pred_mask.data[i], t = true_mask.data[i];
    if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0)) {
      throw InvalidArgument("dice_coefficient needs binary masks");
    }
    inter += p * t;
    a += p;
    b += t;
  }
  if (a + b == 0.0) return 1.0;
  return 2.0 * inter / (a + b);
}

Tensor binarize_logits(const Tensor& logits) {
  Tensor out(logits.shape);
  for (std::size_t i = 0; i < logits.size(); ++i) out.data[i] = logits.data[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

double evaluate_predictor(const LogitPredictor& predict, std::span<const Sample> test_set) {
  if (test_set.empty()) throw InvalidArgument("evaluation needs a non-empty test set");
  const Tensor batch = stack_images(test_set);
  const Tensor logits = predict(batch);
  const Tensor masks = stack_masks(test_set);
  require_same_shape(logits, masks, "predictor output");
  const Tensor pred = binarize_logits(logits);
  const std::size_t plane = masks.size() / test_set.size();
  double total = 0.0;
  for (std::size_t s = 0; s < test_set.size(); ++s) {
    const auto first = static_cast<std::ptrdiff_t>(s * plane);
    const auto last = static_cast<std::ptrdiff_t>((s + 1) * plane);
    Tensor p({plane}, std::vector<double>(pred.data.begin() + first, pred.data.begin() + last));
    Tensor t({plane}, std::vector<double>(masks.data.begin() + first, masks.data.begin() + last));
    total += dice_coefficient(p, t);
  }
  return total / static_cast<double>(test_set.size());
}

double evaluate_client(const ModelParams& model, std::span<const Sample> test_set) {
  return evaluate_predictor([&](const Tensor& batch) { return forward(model, batch).logits; }, test_set);
}

std::string_view to_string(FairnessVerdict verdict) {
  switch (verdict) {
    case FairnessVerdict::a_fairer: return "a_fairer";
    case FairnessVerdict::b_fairer: return "b_fairer";
    case FairnessVerdict::tie: return "tie";
  }
  return "tie";
}

FairnessVerdict fairer_by_std(double std_a, double std_b) {
  if (std::abs(std_a - std_b) < kFairnessTieTolerance) return FairnessVerdict::tie;
  return std_a < std_b ? FairnessVerdict::a_fairer : FairnessVerdict::b_fairer;
}

FairnessVerdict fairness_compare(const RoundReport& a, const RoundReport& b) {
  if (a.per_client_dice.size() != b.per_client_dice.size()) {
    throw InvalidArgument("fairness_compare needs reports over the same K");
  }
  return fairer_by_std(a.std, b.std);
}

}  // namespace fedlwr
