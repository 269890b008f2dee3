#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "g3/geodesy.hpp"

namespace g3 {

inline constexpr double kUnitNormTolerance = 1e-5;

struct IndexRecord {
  std::uint64_t id = 0;
  std::vector<float> vector;  // unit length
  GeoPoint point;
  std::string text;
};

struct SearchHit {
  std::uint64_t id = 0;
  double score = 0.0;

  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

struct IvfParams {
  std::size_t n_clusters = 16;
  int kmeans_iters = 25;
  std::uint64_t seed = 0;
  std::size_t nprobe = 4;
};

// Read-only view of stored records used when assembling prompt references.
class ReferenceStore {
 public:
  virtual ~ReferenceStore() = default;
  virtual std::size_t size() const = 0;
  virtual GeoPoint point_of(std::uint64_t id) const = 0;
  // The n lowest-scoring records against `query` from a seeded sample of at
  // most `sample_size` records, ignoring ids in `exclude`; ascending score.
  virtual std::vector<SearchHit> lowest_similarity(std::span<const float> query, std::size_t n,
                                                   std::size_t sample_size, std::uint64_t seed,
                                                   std::span<const std::uint64_t> exclude) const = 0;
};

// In-memory store of unit vectors with exact inner-product search and an
// IVF approximate index. Concurrent const calls are safe; add/build_ivf need
// exclusive access.
class VectorIndex : public ReferenceStore {
 public:
  static constexpr std::size_t kDefaultDim = 2048;
  // Below this many records search() always uses the exact scan.
  static constexpr std::size_t kFlatSearchLimit = 100000;

  explicit VectorIndex(std::size_t dim = kDefaultDim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const override { return ids_.size(); }
  bool has_ivf() const { return !centroids_.empty(); }
  const IvfParams& ivf_params() const { return ivf_; }

  // All-or-nothing: on a duplicate id, wrong width or non-unit vector the
  // index is left unchanged and UsageError/DataError is thrown.
  std::size_t add(std::span<const IndexRecord> records);

  // Exact top-k, score descending, ties by ascending id. Throws UsageError
  // for k == 0 or a query that is not unit length.
  std::vector<SearchHit> search_flat(std::span<const float> query, std::size_t k) const;
  // Single-threaded reference for search_flat.
  std::vector<SearchHit> search_flat_serial(std::span<const float> query, std::size_t k) const;

  // Seeded spherical k-means over the stored vectors. Throws UsageError if
  // n_clusters is 0 or exceeds the record count, or nprobe is out of range.
  void build_ivf(const IvfParams& params);
  std::vector<SearchHit> search_ivf(std::span<const float> query, std::size_t k,
                                    std::size_t nprobe) const;

  // Flat below kFlatSearchLimit records or without IVF; IVF otherwise.
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const;

  GeoPoint point_of(std::uint64_t id) const override;
  const std::string& text_of(std::uint64_t id) const;
  std::span<const float> vector_of(std::uint64_t id) const;
  bool contains(std::uint64_t id) const { return row_of_.contains(id); }
  std::span<const std::uint64_t> ids() const { return ids_; }

  std::vector<SearchHit> lowest_similarity(std::span<const float> query, std::size_t n,
                                           std::size_t sample_size, std::uint64_t seed,
                                           std::span<const std::uint64_t> exclude) const override;

  std::size_t cluster_count() const { return centroids_.size() / dim_; }
  const std::vector<std::vector<std::uint32_t>>& posting_lists() const { return postings_; }

  // "G3IX" binary format.
  void write(std::ostream& out) const;
  static VectorIndex read(std::istream& in);
  void save(const std::string& path) const;
  static VectorIndex load(const std::string& path);

 private:
  std::size_t row(std::uint64_t id) const;
  void check_query(std::span<const float> query) const;

  std::size_t dim_;
  std::vector<float> vectors_;  // row-major size() x dim_
  std::vector<std::uint64_t> ids_;
  std::vector<GeoPoint> points_;
  std::vector<std::string> texts_;
  std::unordered_map<std::uint64_t, std::size_t> row_of_;

  IvfParams ivf_;
  std::vector<float> centroids_;  // n_clusters x dim_
  std::vector<std::vector<std::uint32_t>> postings_;
};

}  // namespace g3
