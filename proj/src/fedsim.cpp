#include "fedlwr/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedlwr/errors.hpp"
#include "fedlwr/parallel.hpp"
#include "fedlwr/rng.hpp"

namespace fedlwr {

namespace {

constexpr std::uint64_t kShuffleTag = 0x5348;
constexpr std::uint64_t kSimilarityTag = 0x434b41;

void check_same_topology(std::span<const ModelParams> models) {
  if (models.empty()) throw InvalidArgument("aggregation needs at least one model");
  for (const auto& m : models.subspan(1)) require_compatible(models.front(), m);
}

std::vector<ModelParams> client_models(const std::vector<ClientState>& clients) {
  std::vector<ModelParams> out;
  out.reserve(clients.size());
  for (const auto& c : clients) out.push_back(c.model);
  return out;
}

}  // namespace

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::fedavg: return "fedavg";
    case StrategyKind::fed_lwr: return "fed_lwr";
    case StrategyKind::fed_lwr_v1_cosine: return "fed_lwr_v1";
    case StrategyKind::fed_lwr_v2_single_layer: return "fed_lwr_v2";
  }
  return "fedavg";
}

StrategyKind parse_strategy(std::string_view name) {
  if (name == "fedavg") return StrategyKind::fedavg;
  if (name == "fed_lwr") return StrategyKind::fed_lwr;
  if (name == "fed_lwr_v1" || name == "fed_lwr_v1_cosine") return StrategyKind::fed_lwr_v1_cosine;
  if (name == "fed_lwr_v2" || name == "fed_lwr_v2_single_layer") return StrategyKind::fed_lwr_v2_single_layer;
  throw InvalidArgument("unknown strategy '" + std::string(name) + "'");
}

std::string_view to_string(CkaSplit split) { return split == CkaSplit::train ? "train" : "val"; }

CkaSplit parse_cka_split(std::string_view name) {
  if (name == "train") return CkaSplit::train;
  if (name == "val") return CkaSplit::val;
  throw InvalidArgument("unknown cka split '" + std::string(name) + "'");
}

ClientState make_client(int client_id, const DatasetBundle& data, const ModelParams& init,
                        const AdamOptions& optimizer, std::uint64_t rng_seed) {
  ClientState c;
  c.client_id = client_id;
  c.train = data.split(Split::train);
  c.val = data.split(Split::val);
  c.test = data.split(Split::test);
  c.model = init;
  c.optimizer = make_adam_state(init, optimizer);
  c.rng_seed = rng_seed;
  return c;
}

std::vector<ClientState> make_clients(std::span<const DatasetBundle> data, const ModelParams& init,
                                      const AdamOptions& optimizer, std::uint64_t seed) {
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    clients.push_back(make_client(id, data[k], init, optimizer, mix_seed({seed, static_cast<std::uint64_t>(id)})));
  }
  return clients;
}

ClientState local_train(ClientState client, const ModelParams& global_model, int epochs, std::uint64_t shuffle_seed,
                        std::size_t batch_size, bool reset_optimizer) {
  if (epochs < 1) throw InvalidArgument("local_train needs epochs >= 1");
  if (batch_size < 1) throw InvalidArgument("local_train needs batch_size >= 1");
  if (client.train.empty()) {
    throw InvalidArgument("client " + std::to_string(client.client_id) + " has an empty training split");
  }
  if (!client.model.layers.empty()) require_compatible(client.model, global_model);

  client.model = global_model;
  if (reset_optimizer || client.optimizer.first_moment.layers.empty()) {
    const AdamOptions opts{client.optimizer.lr, client.optimizer.beta1, client.optimizer.beta2,
                           client.optimizer.eps, client.optimizer.weight_decay};
    client.optimizer = make_adam_state(global_model, opts);
  }

  Rng rng(shuffle_seed);
  const std::size_t n = client.train.size();
  std::vector<Sample> batch_samples;
  for (int e = 0; e < epochs; ++e) {
    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      batch_samples.clear();
      for (std::size_t i = start; i < end; ++i) batch_samples.push_back(client.train[order[i]]);
      const Tensor images = stack_images(batch_samples);
      const Tensor masks = stack_masks(batch_samples);
      const ForwardTrace trace = forward(client.model, images);
      const ModelParams grads = backward(client.model, trace, masks);
      auto [model, state] = adam_step(std::move(client.model), grads, std::move(client.optimizer));
      client.model = std::move(model);
      client.optimizer = std::move(state);
    }
  }
  return client;
}

ModelParams average_aggregate(std::span<const ModelParams> models) {
  check_same_topology(models);
  const double inv_k = 1.0 / static_cast<double>(models.size());
  ModelParams out = zeros_like(models.front());
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& w = out.layers[l].weights.data;
    auto& b = out.layers[l].biases.data;
    for (const auto& m : models) {
      const auto& mw = m.layers[l].weights.data;
      const auto& mb = m.layers[l].biases.data;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += mw[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] += mb[i];
    }
    for (double& v : w) v *= inv_k;
    for (double& v : b) v *= inv_k;
  }
  return out;
}

SimilarityProfile estimate_similarity(const ClientState& client, const ModelParams& anchor, SimilarityMethod method,
                                      std::size_t sample_size, std::uint64_t seed, CkaSplit split) {
  require_compatible(client.model, anchor);
  const auto& pool = split == CkaSplit::train ? client.train : client.val;
  const std::size_t use = std::min(pool.size(), sample_size);
  if (use < 2) {
    throw InvalidArgument("client " + std::to_string(client.client_id) +
                          " has fewer than 2 samples for similarity estimation");
  }
  std::vector<Sample> chosen;
  chosen.reserve(use);
  if (use == pool.size()) {
    chosen = pool;
  } else {
    Rng rng(seed);
    auto order = rng.permutation(pool.size());
    order.resize(use);
    std::sort(order.begin(), order.end());
    for (auto i : order) chosen.push_back(pool[i]);
  }
  const Tensor batch = stack_images(chosen);
  const ForwardTrace local = forward(client.model, batch);
  const ForwardTrace global = forward(anchor, batch);

  SimilarityProfile profile;
  profile.client_id = client.client_id;
  for (const auto& [layer, u] : local.activations) {
    const auto score = similarity(method, u, global.activations.at(layer));
    profile.delta.push_back(score.value);
    profile.degenerate.push_back(score.degenerate);
  }
  return profile;
}

AggregationWeights convert_weights(std::span<const SimilarityProfile> profiles) {
  if (profiles.empty()) throw InvalidArgument("convert_weights needs at least one profile");
  const std::size_t k = profiles.size();
  const std::size_t m = profiles.front().layers();
  for (const auto& p : profiles) {
    if (p.layers() != m || p.degenerate.size() != m) {
      throw ShapeError("similarity profiles disagree on the layer count");
    }
    for (double d : p.delta) {
      if (!(d >= 0.0 && d <= 1.0)) throw InvalidArgument("similarity score outside [0,1]");
    }
  }

  AggregationWeights w = AggregationWeights::uniform(k, m);
  for (std::size_t layer = 0; layer < m; ++layer) {
    double denom = 0.0;
    bool degenerate = false;
    for (const auto& p : profiles) {
      denom += 1.0 - p.delta[layer];
      degenerate = degenerate || p.degenerate[layer];
    }
    if (degenerate || denom < kUniformFallbackThreshold) {
      w.uniform_fallback[layer] = true;
      continue;
    }
    for (std::size_t c = 0; c < k; ++c) w.rho[c][layer] = (1.0 - profiles[c].delta[layer]) / denom;
  }
  return w;
}

ModelParams layerwise_reaggregate(std::span<const ModelParams> models, const AggregationWeights& weights) {
  check_same_topology(models);
  const std::size_t layers = models.front().layers.size();
  if (weights.clients() != models.size() || weights.layers() != layers) {
    throw ShapeError("weights are " + std::to_string(weights.clients()) + "x" + std::to_string(weights.layers()) +
                     ", models need " + std::to_string(models.size()) + "x" + std::to_string(layers));
  }
  ModelParams out = zeros_like(models.front());
  for (std::size_t l = 0; l < layers; ++l) {
    auto& w = out.layers[l].weights.data;
    auto& b = out.layers[l].biases.data;
    for (std::size_t c = 0; c < models.size(); ++c) {
      const double rho = weights.rho[c][l];
      const auto& mw = models[c].layers[l].weights.data;
      const auto& mb = models[c].layers[l].biases.data;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += rho * mw[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] += rho * mb[i];
    }
  }
  return out;
}

RoundResult run_round(std::vector<ClientState>& clients, const ModelParams& global, StrategyKind strategy,
                      const FederationConfig& config, int round) {
  if (clients.empty()) throw InvalidArgument("run_round needs at least one client");
  const auto r = static_cast<std::uint64_t>(round);

  parallel_for(clients.size(), config.threads, [&](std::size_t k) {
    auto& c = clients[k];
    c = local_train(std::move(c), global, config.local_epochs, mix_seed({c.rng_seed, r, kShuffleTag}),
                    config.batch_size, config.reset_optimizer_each_round);
  });

  const auto models = client_models(clients);
  const ModelParams anchor = average_aggregate(models);
  const std::size_t layers = anchor.layers.size();

  RoundResult result;
  AggregationWeights weights = AggregationWeights::uniform(clients.size(), layers);
  std::vector<std::vector<double>> deltas;
  std::vector<std::vector<bool>> degenerate;

  if (strategy == StrategyKind::fedavg) {
    result.global = anchor;
  } else {
    const auto method =
        strategy == StrategyKind::fed_lwr_v1_cosine ? SimilarityMethod::cosine_mean : SimilarityMethod::cka_linear;
    std::vector<SimilarityProfile> profiles(clients.size());
    parallel_for(clients.size(), config.threads, [&](std::size_t k) {
      const auto& c = clients[k];
      profiles[k] = estimate_similarity(c, anchor, method, config.cka_sample_size,
                                        mix_seed({c.rng_seed, r, kSimilarityTag}), config.cka_split);
    });
    for (const auto& p : profiles) {
      deltas.push_back(p.delta);
      degenerate.push_back(p.degenerate);
    }

    if (strategy == StrategyKind::fed_lwr_v2_single_layer) {
      const int chosen = config.v2_layer > 0 ? config.v2_layer : static_cast<int>((layers + 1) / 2);
      if (chosen < 1 || static_cast<std::size_t>(chosen) > layers) {
        throw InvalidArgument("v2_layer " + std::to_string(chosen) + " outside 1.." + std::to_string(layers));
      }
      const auto idx = static_cast<std::size_t>(chosen - 1);
      std::vector<SimilarityProfile> single;
      for (const auto& p : profiles) single.push_back({p.client_id, {p.delta[idx]}, {p.degenerate[idx]}});
      const auto one = convert_weights(single);
      for (std::size_t c = 0; c < clients.size(); ++c) weights.rho[c].assign(layers, one.rho[c][0]);
      weights.uniform_fallback.assign(layers, one.uniform_fallback[0]);
    } else {
      weights = convert_weights(profiles);
    }
    result.global = layerwise_reaggregate(models, weights);
  }

  std::vector<double> dice(clients.size());
  parallel_for(clients.size(), config.threads,
               [&](std::size_t k) { dice[k] = evaluate_client(result.global, clients[k].test); });
  result.report = make_round_report(round, std::move(dice), std::move(weights), std::move(deltas), std::move(degenerate));
  return result;
}

ModelParams run_federation(std::vector<ClientState>& clients, const ModelParams& init, StrategyKind strategy,
                           const FederationConfig& config, int rounds,
                           const std::function<void(const RoundReport&)>& on_round) {
  if (rounds < 1) throw InvalidArgument("rounds must be >= 1");
  ModelParams global = init;
  for (int t = 1; t <= rounds; ++t) {
    auto result = run_round(clients, global, strategy, config, t);
    if (on_round) on_round(result.report);
    global = std::move(result.global);
  }
  return global;
}

}  // namespace fedlwr
