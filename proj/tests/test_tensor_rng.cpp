#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "fedlwr/errors.hpp"
#include "fedlwr/parallel.hpp"
#include "fedlwr/rng.hpp"
#include "fedlwr/tensor.hpp"

using namespace fedlwr;

TEST_CASE("tensor construction") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(shape_string({1, 8, 8}) == "[1,8,8]");
}

TEST_CASE("finite checks") {
  Tensor t({3}, {1.0, NAN, 2.0});
  CHECK_FALSE(all_finite(t.data));
  CHECK_THROWS_AS(require_finite(t, "x"), NumericError);
  CHECK_THROWS_AS(require_same_shape(Tensor({2}), Tensor({3}), "x"), ShapeError);
}

TEST_CASE("matrix access") {
  Matrix m{{1, 2}, {3, 4}, {5, 6}};
  CHECK(m.rows() == 3);
  CHECK(m.cols() == 2);
  CHECK(m(2, 1) == 6);
  CHECK(m.row(1)[0] == 3);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng d(42);
  CHECK(d.next() != c.next());
}

TEST_CASE("mix_seed depends on order and every part") {
  CHECK(mix_seed({1, 2, 3}) == mix_seed({1, 2, 3}));
  CHECK(mix_seed({1, 2, 3}) != mix_seed({3, 2, 1}));
  CHECK(mix_seed({1, 2}) != mix_seed({1, 2, 0}));
}

TEST_CASE("rng distributions") {
  Rng rng(7);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sum2 / n - 1.0) < 0.02);

  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto k = rng.uniform_int(-2, 3);
    CHECK(k >= -2);
    CHECK(k <= 3);
    seen.insert(k);
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("permutation is a permutation") {
  Rng rng(1);
  auto p = rng.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
}

TEST_CASE("parallel_for visits every index once") {
  for (unsigned threads : {1u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
}

TEST_CASE("parallel_for rethrows") {
  CHECK_THROWS_AS(parallel_for(10, 4,
                               [](std::size_t i) {
                                 if (i == 6) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("threads_from_env") {
  ::setenv("FEDLWR_THREADS", "3", 1);
  CHECK(threads_from_env() == 3);
  ::setenv("FEDLWR_THREADS", "zero", 1);
  CHECK(threads_from_env() == 1);
  ::unsetenv("FEDLWR_THREADS");
  CHECK(threads_from_env() == 1);
}
