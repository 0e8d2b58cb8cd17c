#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedlwr/tensor.hpp"

namespace fedlwr {

enum class LayerKind { conv2d, dense };

std::string_view to_string(LayerKind kind);

// Parameters of one layer. Conv weights are [out, in, 3, 3], dense weights
// are [out, in]; biases are [out].
struct LayerParams {
  int layer_id = 0;  // 1-based
  LayerKind kind = LayerKind::conv2d;
  Tensor weights;
  Tensor biases;

  bool operator==(const LayerParams&) const = default;
};

struct ModelParams {
  std::string topology_id;
  std::vector<LayerParams> layers;

  std::size_t layer_count() const { return layers.size(); }
  std::size_t parameter_count() const;

  bool operator==(const ModelParams&) const = default;
};

// Throws ShapeError unless a and b can be combined element-wise.
void require_compatible(const ModelParams& a, const ModelParams& b);

ModelParams zeros_like(const ModelParams& model);

struct LayerSpec {
  LayerKind kind;
  std::size_t in;   // channels for conv2d, features for dense
  std::size_t out;
};

struct Topology {
  std::string id;
  std::vector<LayerSpec> layers;
  // Set when the topology only accepts one spatial size (dense layers).
  std::optional<std::pair<std::size_t, std::size_t>> fixed_input;
};

// "tinyseg4": 3x3 conv 1->8->16->8->1, stride 1, zero padding 1, ReLU between
// layers, sigmoid on the output. Accepts any spatial size.
// "denseseg8": dense 64->32->64 over a flattened 8x8 image.
const Topology& find_topology(std::string_view id);
std::vector<std::string> registered_topologies();

// He-uniform weights, zero biases. Deterministic in the seed.
ModelParams build_model(std::string_view topology_id, std::uint64_t seed);

struct ForwardTrace {
  Tensor input;   // [b,1,H,W], kept for the first layer's gradient
  Tensor logits;  // [b,1,H,W], pre-sigmoid
  // Post-nonlinearity output of each layer flattened per sample, keyed by
  // layer_id. The last layer's entry is sigmoid(logits).
  std::map<int, FeatureMatrix> activations;
};

ForwardTrace forward(const ModelParams& model, const Tensor& batch);

double sigmoid(double x);

inline constexpr double kDiceSmoothing = 1.0;

// Soft Dice loss over the whole batch:
//   1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps),  p = sigmoid(logits).
double dice_loss(const Tensor& logits, const Tensor& target, double smoothing = kDiceSmoothing);

// Analytic gradient of dice_loss for the batch recorded in `trace`.
ModelParams backward(const ModelParams& model, const ForwardTrace& trace, const Tensor& target,
                     double smoothing = kDiceSmoothing);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  bool operator==(const AdamOptions&) const = default;
};

struct AdamState {
  std::int64_t step = 0;
  ModelParams first_moment;
  ModelParams second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  bool operator==(const AdamState&) const = default;
};

AdamState make_adam_state(const ModelParams& model, const AdamOptions& options = {});

// Adam with decoupled weight decay: w <- w - lr*wd*w, then the usual
// bias-corrected moment update.
std::pair<ModelParams, AdamState> adam_step(ModelParams model, const ModelParams& grads,
                                            AdamState state);

}  // namespace fedlwr
