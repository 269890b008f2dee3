#pragma once

// End-to-end orchestration: vectorize -> retrieve -> diversify -> verify for
// a query set, plus the retrieval distance statistics used to compare raw
// and aligned database vectors.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "g3/alignment.hpp"
#include "g3/diversify.hpp"
#include "g3/vector_index.hpp"

namespace g3 {

// Database records with id = row index and the description as text.
VectorIndex build_index(std::span<const MetadataRecord> records, const nn::Matrix<float>& vectors);

struct QuerySet {
  std::vector<std::string> ids;
  nn::Matrix<float> image;          // frozen vision features, one row per query
  std::vector<GeoPoint> truths;     // may be empty when only predicting
  std::vector<std::string> image_refs;  // optional, forwarded to the LMM client

  std::size_t size() const { return ids.size(); }
  void validate() const;
};

struct PipelineConfig {
  PromptSet prompts;
  std::size_t generation_parallelism = 4;
  int transport_retries = 1;
  std::uint64_t seed = 0;
  // Failed queries count as misses unless excluded; either way they are
  // listed in the result.
  bool exclude_failed = false;
};

enum class QueryFailure { kNone, kTransport, kData, kOther };

struct Prediction {
  std::string img_id;
  std::optional<GeoPoint> pred;
  std::string provenance;
  std::size_t pool_size = 0;
  std::vector<DropRecord> drops;
  QueryFailure failure = QueryFailure::kNone;
  std::string error;
};

struct PipelineResult {
  std::vector<Prediction> predictions;  // query order
  std::optional<ThresholdReport> report;  // when truths are given
  std::size_t n_failed = 0;
  std::size_t n_excluded = 0;
};

std::uint64_t query_seed(std::uint64_t seed, std::size_t query_index);

PipelineResult run_pipeline(const QuerySet& queries, const AlignmentModel<float>& model,
                            const VectorIndex& index, LmmClient& client,
                            const PipelineConfig& config);

// {img_id, pred_lat, pred_lon, chosen_provenance, pool_size}; failures carry
// null coordinates and an error field.
nlohmann::json prediction_json(const Prediction& p);

struct DistanceStats {
  double avg = 0.0;
  double median = 0.0;
  double max = 0.0;
  double min = 0.0;
};

// For each n: mean/median/max/min geodesic distance of the top-n hits to the
// query's true location, each averaged over the queries.
std::vector<DistanceStats> retrieval_distance_stats(const VectorIndex& index,
                                                    const nn::Matrix<float>& query_vectors,
                                                    std::span<const GeoPoint> truths,
                                                    std::span<const std::size_t> top_ns);

struct RetrievalComparison {
  std::vector<std::size_t> top_ns;
  std::vector<DistanceStats> raw;
  std::vector<DistanceStats> aligned;
};

inline constexpr std::size_t kDefaultTopNs[] = {5, 10, 15};

// Raw database: unit-normalized vision features. Aligned: vectorize_images.
RetrievalComparison compare_retrieval(std::span<const MetadataRecord> database,
                                      const nn::Matrix<float>& database_image,
                                      const nn::Matrix<float>& query_image,
                                      std::span<const GeoPoint> query_truths,
                                      const AlignmentModel<float>& model,
                                      std::span<const std::size_t> top_ns = kDefaultTopNs);

nlohmann::json comparison_json(const RetrievalComparison& c);

}  // namespace g3
