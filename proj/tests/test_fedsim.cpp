#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fedlwr/errors.hpp"
#include "fedlwr/fedsim.hpp"
#include "helpers.hpp"

using namespace fedlwr;

namespace {

ModelParams one_weight(double w) {
  ModelParams m;
  m.topology_id = "scalar";
  m.layers.push_back({1, LayerKind::dense, Tensor({1, 1}, {w}), Tensor({1}, {0.0})});
  return m;
}

ModelParams two_layers(double a, double b) {
  ModelParams m = one_weight(a);
  m.layers.push_back({2, LayerKind::dense, Tensor({1, 1}, {b}), Tensor({1}, {0.0})});
  return m;
}

SimilarityProfile profile(int id, std::vector<double> delta) {
  SimilarityProfile p{id, std::move(delta), {}};
  p.degenerate.assign(p.delta.size(), false);
  return p;
}

DatasetBundle small_bundle(std::uint64_t seed, std::size_t n = 20) {
  DomainSpec d;
  d.noise_sigma = 0.02;
  return generate_client_dataset(d, n, 8, 8, seed);
}

std::vector<ClientState> identical_clients(int k, std::uint64_t data_seed, const ModelParams& init) {
  const auto data = small_bundle(data_seed);
  std::vector<ClientState> clients;
  for (int i = 1; i <= k; ++i) clients.push_back(make_client(i, data, init, {}, 99));
  return clients;
}

}  // namespace

TEST_CASE("strategy names") {
  for (auto s : {StrategyKind::fedavg, StrategyKind::fed_lwr, StrategyKind::fed_lwr_v1_cosine,
                 StrategyKind::fed_lwr_v2_single_layer}) {
    CHECK(parse_strategy(to_string(s)) == s);
  }
  CHECK(parse_strategy("fed_lwr_v2_single_layer") == StrategyKind::fed_lwr_v2_single_layer);
  CHECK_THROWS_AS(parse_strategy("ditto"), InvalidArgument);
  CHECK(parse_cka_split("val") == CkaSplit::val);
  CHECK_THROWS_AS(parse_cka_split("test"), InvalidArgument);
}

TEST_CASE("average_aggregate examples") {
  const std::vector<ModelParams> pair{one_weight(1.0), one_weight(3.0)};
  CHECK(average_aggregate(pair).layers[0].weights.data[0] == 2.0);

  const auto m = build_model("tinyseg4", 3);
  const std::vector<ModelParams> same(5, m);
  CHECK(testing::max_abs_diff(average_aggregate(same), m) <= 1e-15);

  // Uniform over clients, not over distinct models.
  const std::vector<ModelParams> wwwx{one_weight(0.0), one_weight(0.0), one_weight(0.0), one_weight(4.0)};
  const std::vector<ModelParams> wx{one_weight(0.0), one_weight(4.0)};
  CHECK(average_aggregate(wwwx).layers[0].weights.data[0] == 1.0);
  CHECK(average_aggregate(wx).layers[0].weights.data[0] == 2.0);

  const std::vector<ModelParams> mixed{one_weight(1.0), two_layers(1.0, 2.0)};
  CHECK_THROWS_AS(average_aggregate(mixed), ShapeError);
  CHECK_THROWS_AS(average_aggregate(std::vector<ModelParams>{}), InvalidArgument);
}

TEST_CASE("convert_weights examples") {
  SUBCASE("arithmetic") {
    const std::vector<SimilarityProfile> p{profile(1, {0.9}), profile(2, {0.8}), profile(3, {0.7})};
    const auto w = convert_weights(p);
    CHECK(w.rho[0][0] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK(w.rho[1][0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(w.rho[2][0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK_FALSE(w.uniform_fallback[0]);
  }
  SUBCASE("all equal") {
    const std::vector<SimilarityProfile> p{profile(1, {0.4}), profile(2, {0.4}), profile(3, {0.4}),
                                           profile(4, {0.4})};
    const auto w = convert_weights(p);
    for (int k = 0; k < 4; ++k) CHECK(w.rho[k][0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK_FALSE(w.uniform_fallback[0]);
  }
  SUBCASE("all one falls back") {
    const std::vector<SimilarityProfile> p{profile(1, {1.0, 0.5}), profile(2, {1.0, 0.9}), profile(3, {1.0, 0.7})};
    const auto w = convert_weights(p);
    CHECK(w.uniform_fallback[0]);
    CHECK_FALSE(w.uniform_fallback[1]);
    for (int k = 0; k < 3; ++k) CHECK(w.rho[k][0] == 1.0 / 3.0);
  }
  SUBCASE("degenerate flag falls back per layer") {
    auto p = std::vector<SimilarityProfile>{profile(1, {0.2, 0.5}), profile(2, {0.6, 0.9})};
    p[1].degenerate[1] = true;
    const auto w = convert_weights(p);
    CHECK_FALSE(w.uniform_fallback[0]);
    CHECK(w.uniform_fallback[1]);
    CHECK(w.rho[0][1] == 0.5);
  }
  SUBCASE("inconsistent layer counts") {
    const std::vector<SimilarityProfile> p{profile(1, {0.2, 0.5}), profile(2, {0.6})};
    CHECK_THROWS_AS(convert_weights(p), ShapeError);
  }
}

TEST_CASE("convert_weights simplex property") {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const auto k = rng.uniform_int(2, 8);
    const auto m = rng.uniform_int(1, 6);
    std::vector<SimilarityProfile> p;
    for (int i = 0; i < k; ++i) {
      std::vector<double> d(static_cast<std::size_t>(m));
      for (auto& x : d) x = rng.uniform();
      p.push_back(profile(i + 1, d));
    }
    const auto w = convert_weights(p);
    for (std::size_t l = 0; l < w.layers(); ++l) {
      double sum = 0.0;
      for (std::size_t c = 0; c < w.clients(); ++c) {
        CHECK(w.rho[c][l] >= 0.0);
        sum += w.rho[c][l];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("convert_weights is monotone in delta") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SimilarityProfile> p;
    for (int i = 0; i < 4; ++i) p.push_back(profile(i + 1, {rng.uniform(0.2, 0.9)}));
    const double before = convert_weights(p).rho[1][0];
    p[1].delta[0] -= 0.1;
    CHECK(convert_weights(p).rho[1][0] > before);
  }
}

TEST_CASE("identical profiles reduce to averaging") {
  Rng rng(14);
  std::vector<ModelParams> models;
  for (std::uint64_t s = 0; s < 4; ++s) models.push_back(build_model("tinyseg4", s));
  std::vector<double> d{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
  std::vector<SimilarityProfile> p;
  for (int i = 0; i < 4; ++i) p.push_back(profile(i + 1, d));
  const auto lw = layerwise_reaggregate(models, convert_weights(p));
  CHECK(testing::max_abs_diff(lw, average_aggregate(models)) <= 1e-12);
}

TEST_CASE("layerwise_reaggregate examples") {
  const std::vector<ModelParams> models{two_layers(2.0, 10.0), two_layers(4.0, 20.0)};
  AggregationWeights w;
  w.rho = {{0.25, 1.0}, {0.75, 0.0}};
  w.uniform_fallback = {false, false};
  const auto out = layerwise_reaggregate(models, w);
  CHECK(out.layers[0].weights.data[0] == 3.5);
  // One-hot selection copies the chosen client's layer.
  CHECK(out.layers[1].weights == models[0].layers[1].weights);

  const std::vector<ModelParams> nets{build_model("tinyseg4", 1), build_model("tinyseg4", 2),
                                      build_model("tinyseg4", 3)};
  CHECK(testing::max_abs_diff(layerwise_reaggregate(nets, AggregationWeights::uniform(3, 4)),
                              average_aggregate(nets)) <= 1e-15);

  CHECK_THROWS_AS(layerwise_reaggregate(nets, AggregationWeights::uniform(2, 4)), ShapeError);
  CHECK_THROWS_AS(layerwise_reaggregate(nets, AggregationWeights::uniform(3, 3)), ShapeError);
}

TEST_CASE("local_train contracts") {
  const auto init = build_model("tinyseg4", 1);
  auto client = make_client(1, small_bundle(5), init, {}, 7);
  CHECK(client.n_k() == 12);

  auto empty = client;
  empty.train.clear();
  CHECK_THROWS_AS(local_train(empty, init, 1, 1), InvalidArgument);
  CHECK_THROWS_AS(local_train(client, init, 0, 1), InvalidArgument);
  CHECK_THROWS_AS(local_train(client, build_model("denseseg8", 1), 1, 1), ShapeError);

  const auto a = local_train(client, init, 1, 42);
  const auto b = local_train(client, init, 1, 42);
  CHECK(a.model == b.model);
  CHECK(a.optimizer.step == 2);  // 12 samples, batch 8
  CHECK_FALSE(a.model == init);
}

TEST_CASE("optimizer state persists unless reset") {
  const auto init = build_model("tinyseg4", 1);
  const auto client = make_client(1, small_bundle(5), init, {}, 7);
  const auto once = local_train(client, init, 1, 1);
  CHECK(local_train(once, init, 1, 2).optimizer.step == 4);
  CHECK(local_train(once, init, 1, 2, 8, true).optimizer.step == 2);
}

TEST_CASE("local training lowers the training loss") {
  std::vector<double> drops;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto init = build_model("tinyseg4", seed);
    auto client = make_client(1, small_bundle(seed, 40), init, {.lr = 1e-2}, seed);
    const auto images = stack_images(client.train);
    const auto masks = stack_masks(client.train);
    const double before = dice_loss(forward(init, images).logits, masks);
    const auto trained = local_train(client, init, 5, seed);
    drops.push_back(before - dice_loss(forward(trained.model, images).logits, masks));
  }
  std::sort(drops.begin(), drops.end());
  CHECK(drops[1] > 0.0);
}

TEST_CASE("estimate_similarity") {
  const auto init = build_model("tinyseg4", 4);
  auto client = make_client(1, small_bundle(8), init, {}, 3);

  SUBCASE("self similarity") {
    const auto p = estimate_similarity(client, client.model, SimilarityMethod::cka_linear, 64, 1);
    REQUIRE(p.layers() == 4);
    for (double d : p.delta) CHECK(d == doctest::Approx(1.0).epsilon(1e-12));
    for (bool g : p.degenerate) CHECK_FALSE(g);
  }
  SUBCASE("zero anchor is degenerate") {
    client = local_train(client, init, 1, 1);
    const auto p = estimate_similarity(client, zeros_like(init), SimilarityMethod::cka_linear, 64, 1);
    for (bool g : p.degenerate) CHECK(g);
  }
  SUBCASE("subsample is seeded") {
    client = local_train(client, init, 1, 1);
    const auto a = estimate_similarity(client, init, SimilarityMethod::cka_linear, 5, 11);
    const auto b = estimate_similarity(client, init, SimilarityMethod::cka_linear, 5, 11);
    const auto c = estimate_similarity(client, init, SimilarityMethod::cka_linear, 5, 12);
    CHECK(a.delta == b.delta);
    CHECK(a.delta != c.delta);
    for (double d : a.delta) {
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
    }
  }
  SUBCASE("validation split and cosine") {
    const auto p = estimate_similarity(client, init, SimilarityMethod::cosine_mean, 64, 1, CkaSplit::val);
    for (double d : p.delta) CHECK(d == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("too few samples") {
    CHECK_THROWS_AS(estimate_similarity(client, init, SimilarityMethod::cka_linear, 1, 1), InvalidArgument);
    client.train.resize(1);
    CHECK_THROWS_AS(estimate_similarity(client, init, SimilarityMethod::cka_linear, 64, 1), InvalidArgument);
  }
}

TEST_CASE("run_round: fedavg reports uniform weights") {
  const auto init = build_model("tinyseg4", 2);
  std::vector<DatasetBundle> data{small_bundle(1), small_bundle(2), small_bundle(3)};
  auto clients = make_clients(data, init, {}, 5);
  const auto r = run_round(clients, init, StrategyKind::fedavg, {}, 1);
  CHECK(r.report.weights_used == AggregationWeights::uniform(3, 4));
  CHECK(r.report.delta_log.empty());
  CHECK(r.report.per_client_dice.size() == 3);
  CHECK(r.report.round == 1);
}

TEST_CASE("run_round: identical clients make fed_lwr equal fedavg") {
  const auto init = build_model("tinyseg4", 6);
  auto a = identical_clients(3, 21, init);
  auto b = identical_clients(3, 21, init);
  ModelParams ga = init, gb = init;
  for (int t = 1; t <= 2; ++t) {
    auto ra = run_round(a, ga, StrategyKind::fed_lwr, {}, t);
    auto rb = run_round(b, gb, StrategyKind::fedavg, {}, t);
    for (std::size_t l = 0; l < 4; ++l) {
      const auto& d = ra.report.delta_log;
      CHECK(d[0][l] == d[1][l]);
      CHECK(d[1][l] == d[2][l]);
    }
    ga = std::move(ra.global);
    gb = std::move(rb.global);
  }
  CHECK(testing::max_abs_diff(ga, gb) <= 1e-9);
}

TEST_CASE("run_round: v2 applies one layer's weights everywhere") {
  const auto init = build_model("tinyseg4", 2);
  std::vector<DatasetBundle> data{small_bundle(1), small_bundle(2), small_bundle(3)};
  auto clients = make_clients(data, init, {}, 5);
  FederationConfig cfg;
  cfg.v2_layer = 3;
  const auto r = run_round(clients, init, StrategyKind::fed_lwr_v2_single_layer, cfg, 1);
  const auto& w = r.report.weights_used;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t m = 0; m < 4; ++m) CHECK(w.rho[k][m] == w.rho[k][2]);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < 3; ++k) sum += 1.0 - r.report.delta_log[k][2];
  if (!w.uniform_fallback[2]) {
    CHECK(w.rho[0][2] == doctest::Approx((1.0 - r.report.delta_log[0][2]) / sum).epsilon(1e-12));
  }
}

TEST_CASE("run_round is independent of thread count") {
  const auto init = build_model("tinyseg4", 2);
  std::vector<DatasetBundle> data{small_bundle(1), small_bundle(2), small_bundle(3), small_bundle(4)};
  auto serial = make_clients(data, init, {}, 5);
  auto threaded = serial;
  FederationConfig one, many;
  many.threads = 4;
  const auto a = run_round(serial, init, StrategyKind::fed_lwr, one, 1);
  const auto b = run_round(threaded, init, StrategyKind::fed_lwr, many, 1);
  CHECK(a.global == b.global);
  CHECK(a.report.per_client_dice == b.report.per_client_dice);
  CHECK(a.report.weights_used == b.report.weights_used);
}

TEST_CASE("run_federation chains rounds") {
  const auto init = build_model("tinyseg4", 2);
  std::vector<DatasetBundle> data{small_bundle(1), small_bundle(2)};
  auto clients = make_clients(data, init, {}, 5);
  auto replay = clients;
  std::vector<int> rounds;
  const auto final_model =
      run_federation(clients, init, StrategyKind::fed_lwr, {}, 3, [&](const RoundReport& r) { rounds.push_back(r.round); });
  CHECK(rounds == std::vector<int>{1, 2, 3});

  ModelParams g = init;
  for (int t = 1; t <= 3; ++t) g = run_round(replay, g, StrategyKind::fed_lwr, {}, t).global;
  CHECK(g == final_model);
}
