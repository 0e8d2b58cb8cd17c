#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedlwr/cka.hpp"
#include "fedlwr/data.hpp"
#include "fedlwr/metrics.hpp"
#include "fedlwr/nn.hpp"

namespace fedlwr {

enum class StrategyKind { fedavg, fed_lwr, fed_lwr_v1_cosine, fed_lwr_v2_single_layer };

std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view name);

// Which client split feeds the similarity estimate.
enum class CkaSplit { train, val };

std::string_view to_string(CkaSplit split);
CkaSplit parse_cka_split(std::string_view name);

struct FederationConfig {
  int local_epochs = 1;
  std::size_t batch_size = 8;
  AdamOptions optimizer;
  std::size_t cka_sample_size = 64;
  CkaSplit cka_split = CkaSplit::train;
  // 1-based layer whose similarity drives the single-layer ablation;
  // 0 selects ceil(M/2).
  int v2_layer = 0;
  bool reset_optimizer_each_round = false;
  // Worker threads for per-client work inside a round.
  unsigned threads = 1;
};

struct ClientState {
  int client_id = 0;  // 1-based
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  ModelParams model;
  AdamState optimizer;
  // Root of this client's random streams (shuffling, similarity subsampling).
  std::uint64_t rng_seed = 0;

  std::size_t n_k() const { return train.size(); }
};

ClientState make_client(int client_id, const DatasetBundle& data, const ModelParams& init,
                        const AdamOptions& optimizer, std::uint64_t rng_seed);

// One client per bundle; client k gets rng_seed mix(seed, k).
std::vector<ClientState> make_clients(std::span<const DatasetBundle> data, const ModelParams& init,
                                      const AdamOptions& optimizer, std::uint64_t seed);

// Starts from global_model and runs `epochs` shuffled passes of mini-batch
// Adam over the client's training split. The client's Adam moments carry
// over unless reset_optimizer is set.
ClientState local_train(ClientState client, const ModelParams& global_model, int epochs, std::uint64_t shuffle_seed,
                        std::size_t batch_size = 8, bool reset_optimizer = false);

// Unweighted element-wise mean (1/K per client, not n_k-weighted).
ModelParams average_aggregate(std::span<const ModelParams> models);

struct SimilarityProfile {
  int client_id = 0;
  std::vector<double> delta;      // one per layer, in [0, 1]
  std::vector<bool> degenerate;   // one per layer

  std::size_t layers() const { return delta.size(); }
};

// Per-layer similarity between the client's model and the anchor on up to
// sample_size of the client's own samples, drawn deterministically from seed.
SimilarityProfile estimate_similarity(const ClientState& client, const ModelParams& anchor, SimilarityMethod method,
                                      std::size_t sample_size, std::uint64_t seed,
                                      CkaSplit split = CkaSplit::train);

inline constexpr double kUniformFallbackThreshold = 1e-9;

// rho_k^m = (1 - delta_k^m) / sum_i (1 - delta_i^m). A layer falls back to
// uniform 1/K when the denominator is below kUniformFallbackThreshold or any
// client's score for it is degenerate.
AggregationWeights convert_weights(std::span<const SimilarityProfile> profiles);

// Layer m of the result is sum_k rho[k][m] * (layer m of model k).
ModelParams layerwise_reaggregate(std::span<const ModelParams> models, const AggregationWeights& weights);

struct RoundResult {
  ModelParams global;
  RoundReport report;
};

// One communication round: local training on every client from `global`,
// server aggregation by `strategy`, then evaluation of the new global model on
// every client's test split. Clients are updated in place.
RoundResult run_round(std::vector<ClientState>& clients, const ModelParams& global, StrategyKind strategy,
                      const FederationConfig& config, int round);

// Runs `rounds` rounds starting from `init`; on_round sees each report.
ModelParams run_federation(std::vector<ClientState>& clients, const ModelParams& init, StrategyKind strategy,
                           const FederationConfig& config, int rounds,
                           const std::function<void(const RoundReport&)>& on_round = {});

}  // namespace fedlwr
