#include "g3/verify.hpp"

#include <algorithm>

#include "g3/errors.hpp"

namespace g3 {

Verdict verify(std::span<const float> image_emb, std::span<const GeoPoint> candidates,
               const AlignmentModel<float>& model) {
  if (candidates.empty()) throw UsageError("verify: empty candidate pool");
  if (image_emb.size() != static_cast<std::size_t>(model.dims.image)) {
    throw UsageError("verify: image embedding width does not match the model");
  }
  nn::Matrix<float> image(1, model.dims.image);
  std::copy(image_emb.begin(), image_emb.end(), image.data());
  const nn::Matrix<float> query = normalize_rows(nn::mlp_infer(model.image_to_gps, image));
  const nn::Matrix<float> gps = normalize_rows(model.gps_encoder.encode(candidates));

  Verdict v;
  v.scores.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < gps.cols(); ++j) {
      s += static_cast<double>(query(0, j)) * gps(static_cast<Eigen::Index>(i), j);
    }
    v.scores[i] = s;
  }
  // max_element keeps the first of equal maxima.
  v.chosen_index = static_cast<std::size_t>(
      std::max_element(v.scores.begin(), v.scores.end()) - v.scores.begin());
  v.chosen = candidates[v.chosen_index];
  return v;
}

Verdict verify(std::span<const float> image_emb, const CandidatePool& pool,
               const AlignmentModel<float>& model) {
  const auto points = pool.points();
  return verify(image_emb, points, model);
}

}  // namespace g3
