#include <doctest.h>

#include <cmath>
#include <set>

#include "cdplab/rng.hpp"

using namespace cdp;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same seed reproduces the stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform stays in [0,1) with sane mean") {
  Rng rng(7);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("normal has unit variance") {
  Rng rng(11);
  double sum = 0.0, sum2 = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("below produces full range without obvious bias") {
  Rng rng(3);
  std::array<int, 10> counts{};
  for (int i = 0; i < 100000; ++i) ++counts[rng.below(10)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("derive_seed separates tags and coordinates") {
  std::set<std::uint64_t> seen;
  seen.insert(derive_seed(1, "a"));
  seen.insert(derive_seed(1, "b"));
  seen.insert(derive_seed(2, "a"));
  seen.insert(derive_seed(1, "a", {0}));
  seen.insert(derive_seed(1, "a", {1}));
  seen.insert(derive_seed(1, "a", {0, 1}));
  seen.insert(derive_seed(1, "a", {1, 0}));
  CHECK(seen.size() == 7);
  CHECK(derive_seed(1, "a", {5}) == derive_seed(1, "a", {5}));
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  auto w = v;
  Rng r1(9), r2(9);
  r1.shuffle(v);
  r2.shuffle(w);
  CHECK(v == w);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 100);
}

TEST_SUITE_END();
