#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fedlwr/data.hpp"
#include "fedlwr/errors.hpp"
#include "helpers.hpp"

using namespace fedlwr;

namespace {

double mean_intensity(const DatasetBundle& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : b.samples) {
    for (double v : x.image.data) s += v;
    n += x.image.size();
  }
  return s / static_cast<double>(n);
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const auto d = benchmark_domains("shift4")[3];
  CHECK(generate_client_dataset(d, 30, 16, 16, 5) == generate_client_dataset(d, 30, 16, 16, 5));
  CHECK_FALSE(generate_client_dataset(d, 30, 16, 16, 5) == generate_client_dataset(d, 30, 16, 16, 6));
}

TEST_CASE("noise-free unit domain stays in [0, 1 + texture amplitude]") {
  DomainSpec d;
  const auto b = generate_client_dataset(d, 200, 16, 16, 1);
  for (const auto& s : b.samples) {
    for (double v : s.image.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + kTextureAmplitude + 1e-6);
    }
  }
}

TEST_CASE("foreground fraction on 16x16") {
  const auto b = generate_client_dataset(DomainSpec{}, 1000, 16, 16, 3);
  double total = 0.0;
  for (const auto& s : b.samples) {
    double fg = 0.0;
    for (double v : s.mask.data) {
      REQUIRE((v == 0.0 || v == 1.0));
      fg += v;
    }
    const double frac = fg / 256.0;
    CHECK(frac > 0.0);
    CHECK(frac < 0.6);
    total += frac;
  }
  const double mean_frac = total / 1000.0;
  CHECK(mean_frac > 0.0);
  CHECK(mean_frac < 0.6);
}

TEST_CASE("splits are disjoint, cover everything and follow 6:2:2") {
  const auto b = generate_client_dataset(DomainSpec{}, 50, 8, 8, 9);
  CHECK(b.train_index.size() == 30);
  CHECK(b.val_index.size() == 10);
  CHECK(b.test_index.size() == 10);
  std::set<std::size_t> all;
  for (const auto* idx : {&b.train_index, &b.val_index, &b.test_index}) all.insert(idx->begin(), idx->end());
  CHECK(all.size() == 50);
  CHECK(*all.rbegin() == 49);
  CHECK(b.split(Split::test).size() == 10);

  const auto odd = generate_client_dataset(DomainSpec{}, 11, 8, 8, 9, {0.5, 0.25, 0.25});
  CHECK(odd.train_index.size() + odd.val_index.size() + odd.test_index.size() == 11);
}

TEST_CASE("domain shift is visible in intensity") {
  DomainSpec a, b;
  a.gain = 0.5;
  b.gain = 1.0;
  a.noise_sigma = b.noise_sigma = 0.05;
  const auto da = generate_client_dataset(a, 200, 16, 16, 4);
  const auto db = generate_client_dataset(b, 200, 16, 16, 4);
  const double ma = mean_intensity(da), mb = mean_intensity(db);
  // Pure gain change: B's mean should sit near ratio * A's mean.
  const double implied = (b.gain / a.gain - 1.0) * ma;
  CHECK(mb - ma >= 0.9 * implied);

  // The benchmark's clients differ in their intensity statistics too.
  const auto shift = benchmark_domains("shift4");
  REQUIRE(shift.size() == 4);
  std::set<double> means;
  for (const auto& d : shift) means.insert(mean_intensity(generate_client_dataset(d, 50, 16, 16, 1)));
  CHECK(means.size() == 4);
}

TEST_CASE("generator preconditions") {
  CHECK_THROWS_AS(generate_client_dataset(DomainSpec{}, 9, 16, 16, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_client_dataset(DomainSpec{}, 10, 7, 16, 1), InvalidArgument);
  DomainSpec bad;
  bad.blob_count_min = 3;
  bad.blob_count_max = 2;
  CHECK_THROWS_AS(generate_client_dataset(bad, 10, 8, 8, 1), InvalidArgument);
  bad = {};
  bad.blob_radius_max = 1.0;
  CHECK_THROWS_AS(generate_client_dataset(bad, 10, 8, 8, 1), InvalidArgument);
  bad = {};
  bad.noise_sigma = -0.1;
  CHECK_THROWS_AS(generate_client_dataset(bad, 10, 8, 8, 1), InvalidArgument);
  CHECK_THROWS_AS(benchmark_domains("shift9"), InvalidArgument);
}

TEST_CASE("save/load round trip") {
  const auto dir = testing::scratch_dir("data_roundtrip");
  const auto shift = benchmark_domains("shift4");
  for (std::size_t k = 0; k < shift.size(); ++k) {
    const auto b = generate_client_dataset(shift[k], 12 + k, 8 + k, 9, 100 + k);
    const auto path = dir / ("c" + std::to_string(k) + ".flwr");
    save_dataset(b, path);
    const auto back = load_dataset(path);
    CHECK(back == b);
    for (const auto& s : back.samples) {
      for (double v : s.mask.data) CHECK((v == 0.0 || v == 1.0));
    }
  }
}

TEST_CASE("corrupt dataset files") {
  const auto dir = testing::scratch_dir("data_corrupt");
  const auto path = dir / "good.flwr";
  save_dataset(generate_client_dataset(DomainSpec{}, 12, 8, 8, 1), path);
  const std::string good = testing::read_file(path);

  SUBCASE("bad magic") {
    auto bytes = good;
    bytes[0] = 'X';
    write_bytes(dir / "bad.flwr", bytes);
    try {
      load_dataset(dir / "bad.flwr");
      FAIL("expected FormatError");
    } catch (const TruncatedFileError&) {
      FAIL("wrong error kind");
    } catch (const ShapeMismatchError&) {
      FAIL("wrong error kind");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("FLWRDS1") != std::string::npos);
    }
  }
  SUBCASE("truncated payload") {
    write_bytes(dir / "short.flwr", good.substr(0, good.size() / 2));
    CHECK_THROWS_AS(load_dataset(dir / "short.flwr"), TruncatedFileError);
  }
  SUBCASE("truncated footer") {
    write_bytes(dir / "short.flwr", good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_dataset(dir / "short.flwr"), TruncatedFileError);
  }
  SUBCASE("truncated header") {
    write_bytes(dir / "short.flwr", good.substr(0, 10));
    CHECK_THROWS_AS(load_dataset(dir / "short.flwr"), TruncatedFileError);
  }
  SUBCASE("header count disagrees with payload") {
    auto bytes = good;
    bytes[12] = static_cast<char>(11);
    write_bytes(dir / "shape.flwr", bytes);
    CHECK_THROWS_AS(load_dataset(dir / "shape.flwr"), ShapeMismatchError);
  }
  SUBCASE("header size disagrees with payload") {
    auto bytes = good;
    bytes[16] = static_cast<char>(4);  // H = 4
    bytes[20] = static_cast<char>(16);  // W = 16
    write_bytes(dir / "shape.flwr", bytes);
    CHECK_THROWS_AS(load_dataset(dir / "shape.flwr"), ShapeMismatchError);
  }
}

TEST_CASE("stacking") {
  const auto b = generate_client_dataset(DomainSpec{}, 10, 8, 8, 1);
  const auto imgs = stack_images(b.samples);
  CHECK(imgs.shape == Shape{10, 1, 8, 8});
  CHECK(imgs.data[64] == b.samples[1].image.data[0]);
  CHECK_THROWS_AS(stack_masks(std::span<const Sample>{}), InvalidArgument);
}
