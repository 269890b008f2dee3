#pragma once

// Data-parallel search kernels. Each OpenMP kernel has a serial twin in
// g3::kernels::serial that tests use as the reference; both compute every
// score through the same dot product, so their outputs are bit-identical.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace g3::kernels {

struct Scored {
  double score = 0.0;
  std::uint64_t id = 0;
  std::uint32_t row = 0;
};

// Total order used for every ranking: score descending, then id ascending.
inline bool ranks_before(const Scored& a, const Scored& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

double dot(const float* a, const float* b, std::size_t dim);

// scores[i] = <rows[i], query> for the rows of a row-major n x dim block.
void inner_products(std::span<const float> rows, std::size_t dim, std::span<const float> query,
                    std::span<double> scores);

// Best k of rows (restricted to `subset` when non-empty) under ranks_before.
std::vector<Scored> top_k(std::span<const float> rows, std::size_t dim,
                          std::span<const std::uint64_t> ids, std::span<const float> query,
                          std::size_t k, std::span<const std::uint32_t> subset = {});

// assignment[i] = argmax_c <rows[i], centroid c>, lowest c on ties.
void assign_nearest(std::span<const float> rows, std::size_t dim,
                    std::span<const float> centroids, std::span<std::uint32_t> assignment);

int max_threads();

namespace serial {

void inner_products(std::span<const float> rows, std::size_t dim, std::span<const float> query,
                    std::span<double> scores);

std::vector<Scored> top_k(std::span<const float> rows, std::size_t dim,
                          std::span<const std::uint64_t> ids, std::span<const float> query,
                          std::size_t k, std::span<const std::uint32_t> subset = {});

void assign_nearest(std::span<const float> rows, std::size_t dim,
                    std::span<const float> centroids, std::span<std::uint32_t> assignment);

}  // namespace serial
}  // namespace g3::kernels
