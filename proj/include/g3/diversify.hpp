#pragma once

// Geo-diversification: K retrieval-augmented prompts with different numbers
// of reference coordinates, N generations each, plus the top-S retrieved
// coordinates, gathered into one candidate pool.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "g3/geodesy.hpp"
#include "g3/lmm.hpp"
#include "g3/vector_index.hpp"

namespace g3 {

// Bumped whenever render_prompt output changes.
inline constexpr int kPromptTemplateVersion = 1;
inline constexpr std::size_t kNegativeSampleSize = 1024;

struct PromptSpec {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  bool zero_shot() const { return n_pos == 0 && n_neg == 0; }
  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct PromptSet {
  std::vector<PromptSpec> specs{{0, 0}, {5, 5}, {10, 10}, {15, 15}};
  std::size_t n_generations = 5;  // N
  std::size_t s_retrieved = 0;    // S
  double temperature = kDefaultLmmTemperature;

  // m = K * N + S
  std::size_t pool_capacity() const { return specs.size() * n_generations + s_retrieved; }
  // Retrieval depth needed by the largest positive block or S.
  std::size_t retrieval_depth() const;
  void validate() const;
};

// "0:0,5:5,10:10" <-> specs.
std::vector<PromptSpec> parse_prompt_specs(std::string_view text);
std::string format_prompt_specs(std::span<const PromptSpec> specs);

struct RetrievedRef {
  std::uint64_t id = 0;
  double score = 0.0;
  GeoPoint point;
};

struct RetrievalContext {
  std::vector<RetrievedRef> hits;  // ranked, best first
  std::vector<float> query;        // unit query vector, for negatives
  const ReferenceStore* store = nullptr;
  std::uint64_t seed = 0;
};

struct References {
  std::vector<GeoPoint> positives;
  std::vector<GeoPoint> negatives;
  std::vector<double> positive_scores;
  std::vector<double> negative_scores;
};

// Positives are the top n_pos hits. Negatives are the n_neg lowest-scoring
// records of a seeded sample of kNegativeSampleSize records that excludes
// the positives. A zero-shot spec touches neither the hits nor the store.
References select_references(const RetrievalContext& context, const PromptSpec& spec);

std::string render_prompt(const PromptSpec& spec, std::span<const GeoPoint> positives,
                          std::span<const GeoPoint> negatives);

// First consecutive pair of signed decimals that is a valid (lat, lon).
// ParseError when the text holds fewer than two numbers, RangeError when
// pairs exist but none is in range.
GeoPoint parse_coordinates(std::string_view text);

enum class Origin { kGenerated, kRetrieved };

struct Provenance {
  Origin origin = Origin::kGenerated;
  std::size_t prompt = 0;      // k, generated only
  std::size_t generation = 0;  // j, generated only
  std::size_t rank = 0;        // 1-based, retrieved only

  std::string label() const;  // "generated(k,j)" or "retrieved(r)"
};

struct Candidate {
  GeoPoint point;
  Provenance provenance;
};

struct DropRecord {
  std::size_t prompt = 0;
  std::size_t generation = 0;
  std::string reason;
  std::string raw_text;
};

struct CandidatePool {
  std::vector<Candidate> candidates;
  std::vector<DropRecord> drops;

  std::size_t size() const { return candidates.size(); }
  std::size_t count(Origin origin) const;
  std::vector<GeoPoint> points() const;
};

struct GenerationOptions {
  std::size_t parallelism = 4;
  int transport_retries = 1;
  std::uint64_t seed = 0;
  std::string image_ref;
  std::string image_bytes;
};

// Seed of request (k, j) derived from the query seed.
std::uint64_t request_seed(std::uint64_t seed, std::size_t prompt, std::size_t generation);

// Issues K * N requests, drops unparsable answers into pool.drops, and
// appends the top-S retrieved coordinates. Candidates are ordered by (k, j)
// then by retrieval rank whatever order the requests complete in. Throws
// TransportError when a request still fails after the configured retries.
CandidatePool generate_candidates(LmmClient& client, const PromptSet& prompt_set,
                                  const RetrievalContext& context,
                                  const GenerationOptions& options = {});

}  // namespace g3
