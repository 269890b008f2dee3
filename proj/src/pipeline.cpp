#include "g3/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "g3/errors.hpp"
#include "g3/verify.hpp"

namespace g3 {
namespace {

std::span<const float> row_span(const nn::Matrix<float>& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Prediction predict_one(const QuerySet& queries, std::size_t q, const nn::Matrix<float>& vectors,
                       const AlignmentModel<float>& model, const VectorIndex& index,
                       LmmClient& client, const PipelineConfig& config) {
  Prediction out;
  out.img_id = queries.ids[q];
  const auto query_vec = row_span(vectors, static_cast<Eigen::Index>(q));
  const std::size_t depth = std::max<std::size_t>(config.prompts.retrieval_depth(), 1);

  RetrievalContext ctx;
  ctx.query.assign(query_vec.begin(), query_vec.end());
  ctx.store = &index;
  ctx.seed = query_seed(config.seed, q);
  for (const auto& hit : index.search(query_vec, depth)) {
    ctx.hits.push_back({hit.id, hit.score, index.point_of(hit.id)});
  }

  GenerationOptions gen;
  gen.parallelism = config.generation_parallelism;
  gen.transport_retries = config.transport_retries;
  gen.seed = ctx.seed;
  if (q < queries.image_refs.size()) gen.image_ref = queries.image_refs[q];

  CandidatePool pool = generate_candidates(client, config.prompts, ctx, gen);
  out.pool_size = pool.size();
  out.drops = pool.drops;
  if (pool.size() == 0) throw DataError("every candidate was dropped");
  const Verdict v = verify(row_span(queries.image, static_cast<Eigen::Index>(q)), pool, model);
  out.pred = v.chosen;
  out.provenance = pool.candidates[v.chosen_index].provenance.label();
  return out;
}

}  // namespace

VectorIndex build_index(std::span<const MetadataRecord> records, const nn::Matrix<float>& vectors) {
  if (static_cast<std::size_t>(vectors.rows()) != records.size()) {
    throw UsageError("build_index: record and vector counts differ");
  }
  VectorIndex index(static_cast<std::size_t>(vectors.cols()));
  std::vector<IndexRecord> batch;
  batch.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto v = row_span(vectors, static_cast<Eigen::Index>(i));
    batch.push_back({i, {v.begin(), v.end()}, records[i].point, text_description(records[i])});
  }
  index.add(batch);
  return index;
}

void QuerySet::validate() const {
  if (ids.empty()) throw UsageError("query set is empty");
  if (static_cast<std::size_t>(image.rows()) != ids.size()) {
    throw UsageError("query set: image rows and ids differ");
  }
  if (!truths.empty() && truths.size() != ids.size()) {
    throw UsageError("query set: truths and ids differ");
  }
}

std::uint64_t query_seed(std::uint64_t seed, std::size_t query_index) {
  return splitmix64(splitmix64(seed ^ 0x5155455259000000ull) + query_index);
}

PipelineResult run_pipeline(const QuerySet& queries, const AlignmentModel<float>& model,
                            const VectorIndex& index, LmmClient& client,
                            const PipelineConfig& config) {
  queries.validate();
  config.prompts.validate();
  if (static_cast<int>(index.dim()) != model.dims.vector_dim()) {
    throw UsageError("index width does not match the model's vector width");
  }
  const nn::Matrix<float> vectors = vectorize_images(queries.image, model);

  PipelineResult result;
  result.predictions.resize(queries.size());
  const auto n = static_cast<std::int64_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t q = 0; q < n; ++q) {
    auto& slot = result.predictions[static_cast<std::size_t>(q)];
    try {
      slot = predict_one(queries, static_cast<std::size_t>(q), vectors, model, index, client,
                         config);
    } catch (const TransportError& e) {
      slot.failure = QueryFailure::kTransport;
      slot.error = e.what();
    } catch (const DataError& e) {
      slot.failure = QueryFailure::kData;
      slot.error = e.what();
    } catch (const std::exception& e) {
      slot.failure = QueryFailure::kOther;
      slot.error = e.what();
    }
    if (slot.failure != QueryFailure::kNone) slot.img_id = queries.ids[static_cast<std::size_t>(q)];
  }

  std::vector<double> distances;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& p = result.predictions[q];
    if (!p.pred) {
      ++result.n_failed;
      if (config.exclude_failed) {
        ++result.n_excluded;
        continue;
      }
    }
    if (!queries.truths.empty()) {
      distances.push_back(p.pred ? haversine_km(*p.pred, queries.truths[q])
                                 : std::numeric_limits<double>::infinity());
    }
  }
  if (!queries.truths.empty() && !distances.empty()) {
    result.report = ThresholdReport::from_distances(distances);
  }
  return result;
}

nlohmann::json prediction_json(const Prediction& p) {
  nlohmann::json j;
  j["img_id"] = p.img_id;
  if (p.pred) {
    j["pred_lat"] = p.pred->lat_deg();
    j["pred_lon"] = p.pred->lon_deg();
    j["chosen_provenance"] = p.provenance;
  } else {
    j["pred_lat"] = nullptr;
    j["pred_lon"] = nullptr;
    j["chosen_provenance"] = nullptr;
    j["error"] = p.error;
  }
  j["pool_size"] = p.pool_size;
  return j;
}

std::vector<DistanceStats> retrieval_distance_stats(const VectorIndex& index,
                                                    const nn::Matrix<float>& query_vectors,
                                                    std::span<const GeoPoint> truths,
                                                    std::span<const std::size_t> top_ns) {
  if (static_cast<std::size_t>(query_vectors.rows()) != truths.size() || truths.empty()) {
    throw UsageError("retrieval_distance_stats: need one truth per query");
  }
  if (top_ns.empty()) throw UsageError("retrieval_distance_stats: no top-n values");
  const std::size_t depth = *std::max_element(top_ns.begin(), top_ns.end());
  if (depth == 0 || depth > index.size()) {
    throw UsageError("retrieval_distance_stats: top-n out of range");
  }
  const auto nq = static_cast<std::int64_t>(truths.size());
  std::vector<std::vector<double>> per_query(truths.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t q = 0; q < nq; ++q) {
    const auto hits = index.search(row_span(query_vectors, q), depth);
    auto& d = per_query[static_cast<std::size_t>(q)];
    for (const auto& h : hits) d.push_back(haversine_km(index.point_of(h.id), truths[q]));
  }

  std::vector<DistanceStats> out(top_ns.size());
  for (std::size_t t = 0; t < top_ns.size(); ++t) {
    const std::size_t n = top_ns[t];
    for (const auto& d : per_query) {
      std::vector<double> top(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n));
      std::sort(top.begin(), top.end());
      double sum = 0.0;
      for (double x : top) sum += x;
      const double median =
          n % 2 == 1 ? top[n / 2] : 0.5 * (top[n / 2 - 1] + top[n / 2]);
      out[t].avg += sum / static_cast<double>(n);
      out[t].median += median;
      out[t].max += top.back();
      out[t].min += top.front();
    }
    const double nqd = static_cast<double>(per_query.size());
    out[t].avg /= nqd;
    out[t].median /= nqd;
    out[t].max /= nqd;
    out[t].min /= nqd;
  }
  return out;
}

RetrievalComparison compare_retrieval(std::span<const MetadataRecord> database,
                                      const nn::Matrix<float>& database_image,
                                      const nn::Matrix<float>& query_image,
                                      std::span<const GeoPoint> query_truths,
                                      const AlignmentModel<float>& model,
                                      std::span<const std::size_t> top_ns) {
  RetrievalComparison c;
  c.top_ns.assign(top_ns.begin(), top_ns.end());
  {
    const VectorIndex raw = build_index(database, normalize_rows(database_image));
    c.raw = retrieval_distance_stats(raw, normalize_rows(query_image), query_truths, top_ns);
  }
  const VectorIndex aligned = build_index(database, vectorize_images(database_image, model));
  c.aligned = retrieval_distance_stats(aligned, vectorize_images(query_image, model),
                                       query_truths, top_ns);
  return c;
}

nlohmann::json comparison_json(const RetrievalComparison& c) {
  auto stats = [](const DistanceStats& s) {
    return nlohmann::json{{"avg_km", s.avg}, {"median_km", s.median}, {"max_km", s.max},
                          {"min_km", s.min}};
  };
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < c.top_ns.size(); ++i) {
    rows.push_back({{"top_n", c.top_ns[i]}, {"raw", stats(c.raw[i])}, {"aligned", stats(c.aligned[i])}});
  }
  return rows;
}

}  // namespace g3
