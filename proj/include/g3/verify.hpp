#pragma once

#include <span>
#include <vector>

#include "g3/alignment.hpp"
#include "g3/diversify.hpp"

namespace g3 {

struct Verdict {
  GeoPoint chosen;
  std::vector<double> scores;
  std::size_t chosen_index = 0;
};

// Cosine similarity between normalize(image_to_gps(image)) and
// normalize(gps_encoder(c)) for each candidate c; the argmax wins, lowest
// index on ties. Throws UsageError for an empty pool.
Verdict verify(std::span<const float> image_emb, std::span<const GeoPoint> candidates,
               const AlignmentModel<float>& model);
Verdict verify(std::span<const float> image_emb, const CandidatePool& pool,
               const AlignmentModel<float>& model);

}  // namespace g3
