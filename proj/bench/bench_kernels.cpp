// Serial vs OpenMP search kernels over random unit vectors.

#include <benchmark/benchmark.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "g3/kernels.hpp"

namespace {

constexpr std::size_t kDim = 2048;

std::vector<float> unit_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      v[i * dim + d] = g(rng);
      s += double(v[i * dim + d]) * v[i * dim + d];
    }
    const float inv = float(1.0 / std::sqrt(s));
    for (std::size_t d = 0; d < dim; ++d) v[i * dim + d] *= inv;
  }
  return v;
}

struct Fixture {
  std::vector<float> rows;
  std::vector<std::uint64_t> ids;
  std::vector<float> query;

  explicit Fixture(std::size_t n)
      : rows(unit_rows(n, kDim, 1)), ids(n), query(unit_rows(1, kDim, 2)) {
    std::iota(ids.begin(), ids.end(), 0);
  }
};

template <bool kParallel>
void BM_InnerProducts(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  std::vector<double> scores(f.ids.size());
  for (auto _ : state) {
    if constexpr (kParallel) {
      g3::kernels::inner_products(f.rows, kDim, f.query, scores);
    } else {
      g3::kernels::serial::inner_products(f.rows, kDim, f.query, scores);
    }
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool kParallel>
void BM_TopK(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto hits = kParallel ? g3::kernels::top_k(f.rows, kDim, f.ids, f.query, 15)
                          : g3::kernels::serial::top_k(f.rows, kDim, f.ids, f.query, 15);
    benchmark::DoNotOptimize(hits.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool kParallel>
void BM_AssignNearest(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  const auto centroids = unit_rows(64, kDim, 3);
  std::vector<std::uint32_t> assignment(f.ids.size());
  for (auto _ : state) {
    if constexpr (kParallel) {
      g3::kernels::assign_nearest(f.rows, kDim, centroids, assignment);
    } else {
      g3::kernels::serial::assign_nearest(f.rows, kDim, centroids, assignment);
    }
    benchmark::DoNotOptimize(assignment.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_InnerProducts<false>)->Arg(4096)->Arg(32768);
BENCHMARK(BM_InnerProducts<true>)->Arg(4096)->Arg(32768);
BENCHMARK(BM_TopK<false>)->Arg(4096)->Arg(32768);
BENCHMARK(BM_TopK<true>)->Arg(4096)->Arg(32768);
BENCHMARK(BM_AssignNearest<false>)->Arg(4096);
BENCHMARK(BM_AssignNearest<true>)->Arg(4096);

BENCHMARK_MAIN();
