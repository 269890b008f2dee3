#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "g3/kernels.hpp"
#include "support/vectors.hpp"

using namespace g3;

namespace {

struct Block {
  std::size_t dim;
  std::vector<float> rows;
  std::vector<std::uint64_t> ids;

  Block(std::size_t n, std::size_t d, std::uint64_t seed) : dim(d), ids(n) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = test_support::random_unit(d, rng);
      rows.insert(rows.end(), v.begin(), v.end());
    }
    std::iota(ids.begin(), ids.end(), 1000);
    std::shuffle(ids.begin(), ids.end(), rng);
  }
};

}  // namespace

TEST(Kernels, InnerProductsMatchSerial) {
  const Block b(1000, 96, 1);
  std::mt19937_64 rng(2);
  const auto q = test_support::random_unit(96, rng);
  std::vector<double> par(1000), ser(1000);
  kernels::inner_products(b.rows, b.dim, q, par);
  kernels::serial::inner_products(b.rows, b.dim, q, ser);
  EXPECT_EQ(par, ser);
}

TEST(Kernels, TopKMatchesSerialAndSortedReference) {
  const Block b(2000, 64, 3);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto q = test_support::random_unit(64, rng);
    const auto par = kernels::top_k(b.rows, b.dim, b.ids, q, 17);
    const auto ser = kernels::serial::top_k(b.rows, b.dim, b.ids, q, 17);
    ASSERT_EQ(par.size(), 17u);
    std::vector<kernels::Scored> all;
    for (std::uint32_t r = 0; r < b.ids.size(); ++r) {
      all.push_back({kernels::dot(b.rows.data() + r * b.dim, q.data(), b.dim), b.ids[r], r});
    }
    std::sort(all.begin(), all.end(), kernels::ranks_before);
    for (std::size_t i = 0; i < 17; ++i) {
      EXPECT_EQ(par[i].id, ser[i].id);
      EXPECT_EQ(par[i].score, ser[i].score);
      EXPECT_EQ(par[i].id, all[i].id);
    }
  }
}

TEST(Kernels, TopKOnSubset) {
  const Block b(500, 32, 5);
  std::mt19937_64 rng(6);
  const auto q = test_support::random_unit(32, rng);
  const std::vector<std::uint32_t> subset{3, 10, 42, 499};
  const auto hits = kernels::top_k(b.rows, b.dim, b.ids, q, 10, subset);
  ASSERT_EQ(hits.size(), 4u);
  for (const auto& h : hits) EXPECT_NE(std::find(subset.begin(), subset.end(), h.row), subset.end());
  EXPECT_EQ(hits.front().id, kernels::serial::top_k(b.rows, b.dim, b.ids, q, 10, subset).front().id);
}

TEST(Kernels, AssignNearestMatchesSerialAndBreaksTiesLow) {
  const Block b(800, 48, 7);
  const Block c(12, 48, 8);
  std::vector<std::uint32_t> par(800), ser(800);
  kernels::assign_nearest(b.rows, b.dim, c.rows, par);
  kernels::serial::assign_nearest(b.rows, b.dim, c.rows, ser);
  EXPECT_EQ(par, ser);

  std::vector<float> twins(c.rows.begin(), c.rows.begin() + 48);
  twins.insert(twins.end(), c.rows.begin(), c.rows.begin() + 48);
  std::vector<std::uint32_t> a(1);
  kernels::assign_nearest({c.rows.data(), 48}, 48, twins, a);
  EXPECT_EQ(a[0], 0u);
}

TEST(Kernels, RankingOrder) {
  EXPECT_TRUE(kernels::ranks_before({0.9, 5, 0}, {0.8, 1, 0}));
  EXPECT_TRUE(kernels::ranks_before({0.5, 1, 0}, {0.5, 2, 0}));
  EXPECT_FALSE(kernels::ranks_before({0.5, 2, 0}, {0.5, 1, 0}));
}
