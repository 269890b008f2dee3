#include "g3/kernels.hpp"

#include <algorithm>

#include <Eigen/Core>
#include <omp.h>

namespace g3::kernels {
namespace {

void keep_best(std::vector<Scored>& v, std::size_t k) {
  if (v.size() > k) {
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), ranks_before);
    v.resize(k);
  } else {
    std::sort(v.begin(), v.end(), ranks_before);
  }
}

std::uint32_t best_centroid(const float* row, std::span<const float> centroids, std::size_t dim) {
  const std::size_t n_centroids = centroids.size() / dim;
  std::uint32_t best = 0;
  double best_score = dot(row, centroids.data(), dim);
  for (std::size_t c = 1; c < n_centroids; ++c) {
    const double s = dot(row, centroids.data() + c * dim, dim);
    if (s > best_score) {
      best_score = s;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return best;
}

}  // namespace

double dot(const float* a, const float* b, std::size_t dim) {
  using Vec = Eigen::Map<const Eigen::VectorXf>;
  const auto d = static_cast<Eigen::Index>(dim);
  return static_cast<double>(Vec(a, d).dot(Vec(b, d)));
}

int max_threads() { return omp_get_max_threads(); }

void inner_products(std::span<const float> rows, std::size_t dim, std::span<const float> query,
                    std::span<double> scores) {
  const auto n = static_cast<std::int64_t>(scores.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    scores[i] = dot(rows.data() + static_cast<std::size_t>(i) * dim, query.data(), dim);
  }
}

std::vector<Scored> top_k(std::span<const float> rows, std::size_t dim,
                          std::span<const std::uint64_t> ids, std::span<const float> query,
                          std::size_t k, std::span<const std::uint32_t> subset) {
  const bool use_subset = !subset.empty();
  const auto n = static_cast<std::int64_t>(use_subset ? subset.size() : ids.size());
  if (k == 0 || n == 0) return {};
  std::vector<std::vector<Scored>> partial(static_cast<std::size_t>(omp_get_max_threads()));
#pragma omp parallel
  {
    auto& local = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint32_t row = use_subset ? subset[i] : static_cast<std::uint32_t>(i);
      local.push_back({dot(rows.data() + static_cast<std::size_t>(row) * dim, query.data(), dim),
                       ids[row], row});
      if (local.size() >= 4 * k + 64) keep_best(local, k);
    }
    keep_best(local, k);
  }
  std::vector<Scored> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  keep_best(merged, k);
  return merged;
}

void assign_nearest(std::span<const float> rows, std::size_t dim, std::span<const float> centroids,
                    std::span<std::uint32_t> assignment) {
  const auto n = static_cast<std::int64_t>(assignment.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    assignment[i] = best_centroid(rows.data() + static_cast<std::size_t>(i) * dim, centroids, dim);
  }
}

namespace serial {

void inner_products(std::span<const float> rows, std::size_t dim, std::span<const float> query,
                    std::span<double> scores) {
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = dot(rows.data() + i * dim, query.data(), dim);
  }
}

std::vector<Scored> top_k(std::span<const float> rows, std::size_t dim,
                          std::span<const std::uint64_t> ids, std::span<const float> query,
                          std::size_t k, std::span<const std::uint32_t> subset) {
  std::vector<Scored> all;
  if (subset.empty()) {
    for (std::size_t r = 0; r < ids.size(); ++r) {
      all.push_back({dot(rows.data() + r * dim, query.data(), dim), ids[r],
                     static_cast<std::uint32_t>(r)});
    }
  } else {
    for (std::uint32_t r : subset) {
      all.push_back({dot(rows.data() + static_cast<std::size_t>(r) * dim, query.data(), dim),
                     ids[r], r});
    }
  }
  std::sort(all.begin(), all.end(), ranks_before);
  if (all.size() > k) all.resize(k);
  return all;
}

void assign_nearest(std::span<const float> rows, std::size_t dim, std::span<const float> centroids,
                    std::span<std::uint32_t> assignment) {
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    assignment[i] = best_centroid(rows.data() + i * dim, centroids, dim);
  }
}

}  // namespace serial
}  // namespace g3::kernels
