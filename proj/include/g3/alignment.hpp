#pragma once

// Geo-alignment: three projection heads plus the GPS encoder, trained with a
// symmetric image/text and image/GPS contrastive objective, and the
// concatenated image vectors stored in the retrieval database.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "g3/gps_encoder.hpp"
#include "g3/nn.hpp"
#include "g3/records.hpp"

namespace g3 {

// Upper bound on exp(t) applied in the forward pass.
inline constexpr double kMaxLogitScale = 100.0;

enum class Reduction { kSum, kMean };

struct AlignmentDims {
  int image = 768;
  int text = 768;
  int hidden = 768;
  int text_space = 768;
  int gps_space = 512;  // also the GPS encoder output
  int gps_rff_rows = 256;
  int gps_hidden = 1024;

  GpsEncoderDims gps() const { return {gps_rff_rows, gps_hidden, gps_space}; }
  int vector_dim() const { return image + text_space + gps_space; }
  void validate() const;
};

template <typename T>
struct AlignmentModel {
  AlignmentDims dims;
  nn::Mlp<T> image_to_text;  // image -> text space
  nn::Mlp<T> image_to_gps;   // image -> GPS space
  nn::Mlp<T> text_head;      // text encoder output -> text space
  GpsEncoder<T> gps_encoder;
  T t_image_text = T(3.99);
  T t_image_gps = T(3.99);
  std::uint64_t seed = 0;

  static AlignmentModel create(const AlignmentDims& dims, const HierarchySpec& hierarchy,
                               Projection projection, double t_init, std::uint64_t seed);

  std::size_t parameter_count() const;

  template <typename U>
  AlignmentModel<U> cast() const;
};

template <typename T>
struct PairLoss {
  T loss = T(0);
  nn::Matrix<T> grad_a;
  nn::Matrix<T> grad_b;
  T grad_t = T(0);
};

// Loss of modality a to modality b: rows of both sides are L2-normalized,
// logits = a_hat * b_hat^T * min(exp(t), kMaxLogitScale), and the loss is
// the sum over rows of -log softmax(logits row)_ii. The gradient w.r.t. t is
// zero while the scale is clamped. Throws UsageError on a zero-norm row or
// mismatched shapes.
template <typename T>
PairLoss<T> contrastive_pair_loss(const nn::Matrix<T>& ea, const nn::Matrix<T>& eb, T t,
                                  Reduction reduction = Reduction::kSum);

template <typename T>
struct TriModalBatch {
  nn::Matrix<T> image;  // n x dims.image, frozen vision features
  nn::Matrix<T> text;   // n x dims.text, frozen text features
  std::vector<GeoPoint> points;

  std::size_t size() const { return points.size(); }
  void validate() const;
};

template <typename T>
struct AlignmentGrads {
  nn::MlpGrads<T> image_to_text;
  nn::MlpGrads<T> image_to_gps;
  nn::MlpGrads<T> text_head;
  std::vector<nn::MlpGrads<T>> gps_heads;
  T t_image_text = T(0);
  T t_image_gps = T(0);
};

template <typename T>
struct LossBreakdown {
  T total = T(0);
  T image_text = T(0);
  T image_gps = T(0);
  T text_image = T(0);
  T gps_image = T(0);
};

// (L_image,text + L_image,gps + L_text,image + L_gps,image) / 2.
// Fills `grads` when non-null.
template <typename T>
LossBreakdown<T> total_loss(const TriModalBatch<T>& batch, const AlignmentModel<T>& model,
                            AlignmentGrads<T>* grads = nullptr,
                            Reduction reduction = Reduction::kSum);

// Applies one optimizer step for the given gradients.
template <typename T>
void apply_gradients(AlignmentModel<T>& model, const AlignmentGrads<T>& grads,
                     nn::AdamW<T>& optimizer);

struct TrainConfig {
  int batch_size = 256;
  double lr = 3e-5;
  double weight_decay = 1e-6;
  int epochs = 10;
  double gamma = 0.87;
  double t_init = 3.99;
  std::uint64_t seed = 0;
  Reduction reduction = Reduction::kSum;
  AlignmentDims dims;
  HierarchySpec hierarchy;
  Projection projection = Projection::kMercator;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double mean_loss = 0.0;
};

struct TrainResult {
  AlignmentModel<float> model;
  std::vector<EpochLog> log;
};

// Deterministic given config.seed: init, RFF sampling and shuffling are all
// derived from it. Throws UsageError on an empty dataset.
TrainResult train(const TriModalBatch<float>& dataset, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Same loop starting from an existing model.
std::vector<EpochLog> train_model(AlignmentModel<float>& model,
                                  const TriModalBatch<float>& dataset,
                                  const TrainConfig& config,
                                  const std::function<void(const EpochLog&)>& on_epoch = {});

// concat(normalize(image), normalize(image_to_text(image)),
// normalize(image_to_gps(image))), normalized as a whole. One row per image.
// Throws UsageError if any segment has zero norm.
nn::Matrix<float> vectorize_images(const nn::Matrix<float>& image_emb,
                                   const AlignmentModel<float>& model);
std::vector<float> vectorize_image(std::span<const float> image_emb,
                                   const AlignmentModel<float>& model);

// Unit-normalized raw vision features, the baseline database vectors.
nn::Matrix<float> normalize_rows(const nn::Matrix<float>& m);

// "A photo taken from {city}, {county}, {country}." with missing levels
// skipped; "A photo." when all three are missing.
std::string text_description(const MetadataRecord& record);

void save_model(const std::string& path, const AlignmentModel<float>& model);
AlignmentModel<float> load_model(const std::string& path);
nn::Checkpoint to_checkpoint(const AlignmentModel<float>& model);
AlignmentModel<float> from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace g3
