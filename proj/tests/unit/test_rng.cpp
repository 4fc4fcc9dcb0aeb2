#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "bbox/rng.hpp"

using namespace bbox;

TEST(Rng, StreamsAreReproducible) {
  auto a = make_rng(7, 3, "x");
  auto b = make_rng(7, 3, "x");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, KeysSeparateStreams) {
  const auto first = [](RngStream r) { return r.next_u64(); };
  std::set<std::uint64_t> seen = {first(make_rng(1, 0, "a")), first(make_rng(2, 0, "a")), first(make_rng(1, 1, "a")),
                                  first(make_rng(1, 0, "b")), first(make_rng(1, 0, "a").split("c"))};
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Rng, UniformAndIndexRanges) {
  auto r = make_rng(0, 0, "range");
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.index(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_NEAR(h, 10000, 500);
}

TEST(Rng, NormalMoments) {
  auto r = make_rng(5, 0, "normal");
  double sum = 0.0;
  double sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, CounterAdvances) {
  auto r = make_rng(0, 0, "c");
  EXPECT_EQ(r.counter(), 0u);
  r.next_u64();
  r.uniform();
  EXPECT_EQ(r.counter(), 2u);
}
