#include "g3/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include "g3/binary_io.hpp"
#include "g3/errors.hpp"
#include "g3/kernels.hpp"

namespace g3 {
namespace {

constexpr io::Magic kIndexMagic{'G', '3', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;
constexpr std::uint32_t kMetricInnerProduct = 0;

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

std::vector<SearchHit> to_hits(const std::vector<kernels::Scored>& scored) {
  std::vector<SearchHit> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back({s.id, s.score});
  return out;
}

void normalize_in_place(std::span<float> v) {
  const double n = norm_of(v);
  if (n > 0.0) {
    for (float& x : v) x = static_cast<float>(x / n);
  }
}

}  // namespace

VectorIndex::VectorIndex(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw UsageError("VectorIndex: dimension must be positive");
}

std::size_t VectorIndex::add(std::span<const IndexRecord> records) {
  std::unordered_set<std::uint64_t> batch_ids;
  for (const auto& r : records) {
    if (r.vector.size() != dim_) {
      throw UsageError("VectorIndex::add: record " + std::to_string(r.id) + " has width " +
                       std::to_string(r.vector.size()) + ", expected " + std::to_string(dim_));
    }
    if (std::abs(norm_of(r.vector) - 1.0) > kUnitNormTolerance) {
      throw DataError("VectorIndex::add: record " + std::to_string(r.id) +
                      " is not a unit vector");
    }
    if (row_of_.contains(r.id) || !batch_ids.insert(r.id).second) {
      throw UsageError("VectorIndex::add: duplicate id " + std::to_string(r.id));
    }
  }
  if (ids_.size() + records.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw UsageError("VectorIndex::add: too many records");
  }
  vectors_.reserve(vectors_.size() + records.size() * dim_);
  for (const auto& r : records) {
    const std::size_t row = ids_.size();
    vectors_.insert(vectors_.end(), r.vector.begin(), r.vector.end());
    ids_.push_back(r.id);
    points_.push_back(r.point);
    texts_.push_back(r.text);
    row_of_.emplace(r.id, row);
    if (has_ivf()) {
      std::uint32_t c = 0;
      kernels::serial::assign_nearest({vectors_.data() + row * dim_, dim_}, dim_, centroids_,
                                      {&c, 1});
      postings_[c].push_back(static_cast<std::uint32_t>(row));
    }
  }
  return records.size();
}

void VectorIndex::check_query(std::span<const float> query) const {
  if (query.size() != dim_) throw UsageError("search: query width does not match the index");
  if (std::abs(norm_of(query) - 1.0) > kUnitNormTolerance) {
    throw UsageError("search: query is not unit length");
  }
}

std::vector<SearchHit> VectorIndex::search_flat(std::span<const float> query, std::size_t k) const {
  if (k == 0) throw UsageError("search: k must be at least 1");
  check_query(query);
  return to_hits(kernels::top_k(vectors_, dim_, ids_, query, k));
}

std::vector<SearchHit> VectorIndex::search_flat_serial(std::span<const float> query,
                                                       std::size_t k) const {
  if (k == 0) throw UsageError("search: k must be at least 1");
  check_query(query);
  return to_hits(kernels::serial::top_k(vectors_, dim_, ids_, query, k));
}

void VectorIndex::build_ivf(const IvfParams& params) {
  const std::size_t n = size();
  if (params.n_clusters == 0 || params.n_clusters > n) {
    throw UsageError("build_ivf: n_clusters must be in [1, record count]");
  }
  if (params.nprobe < 1 || params.nprobe > params.n_clusters) {
    throw UsageError("build_ivf: nprobe must be in [1, n_clusters]");
  }
  if (params.kmeans_iters < 1) throw UsageError("build_ivf: kmeans_iters must be positive");
  const std::size_t nc = params.n_clusters;

  // k-means++ seeding with 1 - cosine as the distance.
  std::mt19937_64 rng(params.seed);
  std::vector<float> centroids(nc * dim_);
  std::vector<double> closest(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < nc; ++c) {
    chosen[pick] = 1;
    std::copy_n(vectors_.begin() + static_cast<std::ptrdiff_t>(pick * dim_), dim_,
                centroids.begin() + static_cast<std::ptrdiff_t>(c * dim_));
    if (c + 1 == nc) break;
    std::vector<double> scores(n);
    kernels::inner_products(vectors_, dim_, {centroids.data() + c * dim_, dim_}, scores);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::max(0.0, 1.0 - scores[i]);
      closest[i] = std::min(closest[i], d * d);
      if (chosen[i]) closest[i] = 0.0;
      total += closest[i];
    }
    if (total > 0.0) {
      std::discrete_distribution<std::size_t> dist(closest.begin(), closest.end());
      pick = dist(rng);
    } else {
      std::vector<std::size_t> free_rows;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) free_rows.push_back(i);
      }
      pick = free_rows[std::uniform_int_distribution<std::size_t>(0, free_rows.size() - 1)(rng)];
    }
  }

  std::vector<std::uint32_t> assignment(n, 0);
  std::vector<std::uint32_t> previous(n, std::numeric_limits<std::uint32_t>::max());
  for (int iter = 0; iter < params.kmeans_iters; ++iter) {
    kernels::assign_nearest(vectors_, dim_, centroids, assignment);
    if (assignment == previous) break;
    previous = assignment;
    std::vector<double> sums(nc * dim_, 0.0);
    std::vector<std::size_t> counts(nc, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = assignment[i];
      ++counts[c];
      for (std::size_t j = 0; j < dim_; ++j) sums[c * dim_ + j] += vectors_[i * dim_ + j];
    }
    for (std::size_t c = 0; c < nc; ++c) {
      if (counts[c] == 0) continue;  // keep the previous centroid
      std::span<float> dst(centroids.data() + c * dim_, dim_);
      for (std::size_t j = 0; j < dim_; ++j) dst[j] = static_cast<float>(sums[c * dim_ + j]);
      normalize_in_place(dst);
    }
  }
  kernels::assign_nearest(vectors_, dim_, centroids, assignment);

  std::vector<std::vector<std::uint32_t>> postings(nc);
  for (std::size_t i = 0; i < n; ++i) postings[assignment[i]].push_back(static_cast<std::uint32_t>(i));
  ivf_ = params;
  centroids_ = std::move(centroids);
  postings_ = std::move(postings);
}

std::vector<SearchHit> VectorIndex::search_ivf(std::span<const float> query, std::size_t k,
                                               std::size_t nprobe) const {
  if (!has_ivf()) throw UsageError("search_ivf: IVF index not built");
  if (k == 0) throw UsageError("search: k must be at least 1");
  const std::size_t nc = cluster_count();
  if (nprobe < 1 || nprobe > nc) throw UsageError("search_ivf: nprobe must be in [1, n_clusters]");
  check_query(query);

  std::vector<kernels::Scored> clusters(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    clusters[c] = {kernels::dot(centroids_.data() + c * dim_, query.data(), dim_), c,
                   static_cast<std::uint32_t>(c)};
  }
  std::partial_sort(clusters.begin(), clusters.begin() + static_cast<std::ptrdiff_t>(nprobe),
                    clusters.end(), kernels::ranks_before);
  std::vector<std::uint32_t> rows;
  for (std::size_t p = 0; p < nprobe; ++p) {
    const auto& list = postings_[clusters[p].row];
    rows.insert(rows.end(), list.begin(), list.end());
  }
  if (rows.empty()) return {};
  return to_hits(kernels::top_k(vectors_, dim_, ids_, query, k, rows));
}

std::vector<SearchHit> VectorIndex::search(std::span<const float> query, std::size_t k) const {
  if (has_ivf() && size() >= kFlatSearchLimit) return search_ivf(query, k, ivf_.nprobe);
  return search_flat(query, k);
}

std::size_t VectorIndex::row(std::uint64_t id) const {
  const auto it = row_of_.find(id);
  if (it == row_of_.end()) throw UsageError("VectorIndex: unknown id " + std::to_string(id));
  return it->second;
}

GeoPoint VectorIndex::point_of(std::uint64_t id) const { return points_[row(id)]; }

const std::string& VectorIndex::text_of(std::uint64_t id) const { return texts_[row(id)]; }

std::span<const float> VectorIndex::vector_of(std::uint64_t id) const {
  return {vectors_.data() + row(id) * dim_, dim_};
}

std::vector<SearchHit> VectorIndex::lowest_similarity(std::span<const float> query, std::size_t n,
                                                      std::size_t sample_size, std::uint64_t seed,
                                                      std::span<const std::uint64_t> exclude) const {
  if (n == 0) return {};
  check_query(query);
  const std::unordered_set<std::uint64_t> excluded(exclude.begin(), exclude.end());
  std::vector<std::uint32_t> eligible;
  for (std::size_t r = 0; r < size(); ++r) {
    if (!excluded.contains(ids_[r])) eligible.push_back(static_cast<std::uint32_t>(r));
  }
  std::vector<std::uint32_t> sample;
  if (eligible.size() <= sample_size) {
    sample = std::move(eligible);
  } else {
    std::mt19937_64 rng(seed);
    std::sample(eligible.begin(), eligible.end(), std::back_inserter(sample), sample_size, rng);
  }
  if (sample.size() < n) {
    throw UsageError("lowest_similarity: only " + std::to_string(sample.size()) +
                     " records available for " + std::to_string(n) + " negatives");
  }
  std::vector<kernels::Scored> scored;
  scored.reserve(sample.size());
  for (std::uint32_t r : sample) {
    scored.push_back({kernels::dot(vectors_.data() + static_cast<std::size_t>(r) * dim_,
                                   query.data(), dim_),
                      ids_[r], r});
  }
  // Ascending score, ties by ascending id.
  std::sort(scored.begin(), scored.end(), [](const kernels::Scored& a, const kernels::Scored& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id < b.id;
  });
  scored.resize(n);
  return to_hits(scored);
}

// ---- persistence -----------------------------------------------------------

void VectorIndex::write(std::ostream& out) const {
  io::BinaryWriter w(out);
  w.magic(kIndexMagic);
  w.u32(kIndexVersion);
  w.u32(kMetricInnerProduct);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u64(size());
  for (std::size_t r = 0; r < size(); ++r) {
    w.u64(ids_[r]);
    w.f32s({vectors_.data() + r * dim_, dim_});
    w.f64(points_[r].lat_deg());
    w.f64(points_[r].lon_deg());
    w.str(texts_[r]);
  }
  w.u8(has_ivf() ? 1 : 0);
  if (has_ivf()) {
    w.u64(ivf_.n_clusters);
    w.u32(static_cast<std::uint32_t>(ivf_.kmeans_iters));
    w.u64(ivf_.seed);
    w.u64(ivf_.nprobe);
    w.f32s(centroids_);
    for (const auto& list : postings_) {
      w.u64(list.size());
      for (std::uint32_t r : list) w.u64(ids_[r]);
    }
  }
  w.check();
}

VectorIndex VectorIndex::read(std::istream& in) {
  io::BinaryReader r(in);
  r.expect_magic(kIndexMagic);
  const auto version = r.u32();
  if (version != kIndexVersion) {
    throw FormatError("index: unsupported version " + std::to_string(version));
  }
  if (r.u32() != kMetricInnerProduct) throw FormatError("index: unknown metric tag");
  const std::size_t dim = r.u32();
  if (dim == 0) throw FormatError("index: zero dimension");
  const std::uint64_t count = r.u64();

  std::vector<IndexRecord> records;
  records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    IndexRecord rec;
    rec.id = r.u64();
    rec.vector.resize(dim);
    r.f32s(rec.vector);
    const double lat = r.f64();
    const double lon = r.f64();
    try {
      rec.point = GeoPoint(lat, lon);
    } catch (const RangeError& e) {
      throw FormatError(std::string("index: ") + e.what());
    }
    rec.text = r.str();
    records.push_back(std::move(rec));
  }
  VectorIndex index(dim);
  try {
    index.add(records);
  } catch (const Error& e) {
    throw FormatError(std::string("index: ") + e.what());
  }

  if (r.u8() != 0) {
    IvfParams p;
    p.n_clusters = r.u64();
    p.kmeans_iters = static_cast<int>(r.u32());
    p.seed = r.u64();
    p.nprobe = r.u64();
    if (p.n_clusters == 0 || p.n_clusters > index.size() || p.nprobe < 1 ||
        p.nprobe > p.n_clusters) {
      throw FormatError("index: inconsistent IVF parameters");
    }
    std::vector<float> centroids(p.n_clusters * dim);
    r.f32s(centroids);
    std::vector<std::vector<std::uint32_t>> postings(p.n_clusters);
    std::size_t total = 0;
    for (auto& list : postings) {
      const std::uint64_t len = r.u64();
      if (len > index.size()) throw FormatError("index: posting list too long");
      for (std::uint64_t j = 0; j < len; ++j) {
        const std::uint64_t id = r.u64();
        if (!index.contains(id)) throw FormatError("index: posting list names unknown id");
        list.push_back(static_cast<std::uint32_t>(index.row(id)));
      }
      total += list.size();
    }
    if (total != index.size()) throw FormatError("index: posting lists do not cover all records");
    index.ivf_ = p;
    index.centroids_ = std::move(centroids);
    index.postings_ = std::move(postings);
  }
  if (!r.at_eof()) throw FormatError("index: trailing bytes after IVF section");
  return index;
}

void VectorIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write(out);
}

VectorIndex VectorIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open index: " + path);
  return read(in);
}

}  // namespace g3
