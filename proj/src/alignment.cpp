#include "g3/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "g3/errors.hpp"

namespace g3 {
namespace {

using nn::Matrix;

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 1> row_norms(const Matrix<T>& m, const char* what) {
  Eigen::Matrix<T, Eigen::Dynamic, 1> n = m.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    if (!(n[i] > T(0))) {
      throw UsageError(std::string(what) + ": zero-norm row " + std::to_string(i));
    }
  }
  return n;
}

// d/dx of x/|x| applied row-wise: (g - xhat * <xhat, g>) / |x|.
template <typename T>
Matrix<T> normalize_backward(const Matrix<T>& xhat, const Eigen::Matrix<T, Eigen::Dynamic, 1>& norms,
                             const Matrix<T>& g) {
  const Eigen::Matrix<T, Eigen::Dynamic, 1> dots = xhat.cwiseProduct(g).rowwise().sum();
  Matrix<T> out = g - (xhat.array().colwise() * dots.array()).matrix();
  return out.array().colwise() / norms.array();
}

template <typename T>
void scale_grads(nn::MlpGrads<T>& g, T s) {
  for (auto& w : g.weight) w *= s;
  for (auto& b : g.bias) b *= s;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

const char* projection_name(Projection p) {
  return p == Projection::kMercator ? "mercator" : "equal_earth";
}

}  // namespace

void AlignmentDims::validate() const {
  for (int d : {image, text, hidden, text_space, gps_space, gps_rff_rows, gps_hidden}) {
    if (d <= 0) throw UsageError("AlignmentDims: dimensions must be positive");
  }
}

template <typename T>
AlignmentModel<T> AlignmentModel<T>::create(const AlignmentDims& dims,
                                            const HierarchySpec& hierarchy,
                                            Projection projection, double t_init,
                                            std::uint64_t seed) {
  dims.validate();
  if (!std::isfinite(t_init)) throw UsageError("AlignmentModel: t_init must be finite");
  AlignmentModel m;
  m.dims = dims;
  m.seed = seed;
  m.image_to_text = nn::Mlp<T>(nn::MlpSpec::two_layer(dims.image, dims.hidden, dims.text_space));
  m.image_to_gps = nn::Mlp<T>(nn::MlpSpec::two_layer(dims.image, dims.hidden, dims.gps_space));
  m.text_head = nn::Mlp<T>(nn::MlpSpec::two_layer(dims.text, dims.hidden, dims.text_space));
  m.gps_encoder = GpsEncoder<T>(hierarchy, dims.gps(), projection, mix_seed(seed, 0x475053));
  std::mt19937_64 rng(mix_seed(seed, 0x494e4954));
  m.image_to_text.init_kaiming_uniform(rng);
  m.image_to_gps.init_kaiming_uniform(rng);
  m.text_head.init_kaiming_uniform(rng);
  m.gps_encoder.init_heads(rng);
  m.t_image_text = static_cast<T>(t_init);
  m.t_image_gps = static_cast<T>(t_init);
  return m;
}

template <typename T>
std::size_t AlignmentModel<T>::parameter_count() const {
  std::size_t n = image_to_text.parameter_count() + image_to_gps.parameter_count() +
                  text_head.parameter_count() + 2;
  for (const auto& h : gps_encoder.hierarchies()) n += h.head.parameter_count();
  return n;
}

template <typename T>
template <typename U>
AlignmentModel<U> AlignmentModel<T>::cast() const {
  AlignmentModel<U> m;
  m.dims = dims;
  m.seed = seed;
  m.image_to_text = image_to_text.template cast<U>();
  m.image_to_gps = image_to_gps.template cast<U>();
  m.text_head = text_head.template cast<U>();
  m.gps_encoder = gps_encoder.template cast<U>();
  m.t_image_text = static_cast<U>(t_image_text);
  m.t_image_gps = static_cast<U>(t_image_gps);
  return m;
}

template <typename T>
PairLoss<T> contrastive_pair_loss(const Matrix<T>& ea, const Matrix<T>& eb, T t,
                                  Reduction reduction) {
  const Eigen::Index n = ea.rows();
  if (n < 1) throw UsageError("contrastive_pair_loss: empty batch");
  if (eb.rows() != n || eb.cols() != ea.cols()) {
    throw UsageError("contrastive_pair_loss: shape mismatch");
  }
  const auto na = row_norms(ea, "contrastive_pair_loss");
  const auto nb = row_norms(eb, "contrastive_pair_loss");
  const Matrix<T> ha = ea.array().colwise() / na.array();
  const Matrix<T> hb = eb.array().colwise() / nb.array();

  const T raw_scale = std::exp(t);
  const bool clamped = raw_scale > T(kMaxLogitScale);
  const T scale = clamped ? T(kMaxLogitScale) : raw_scale;

  const Matrix<T> sim = ha * hb.transpose();
  const Matrix<T> logits = sim * scale;

  PairLoss<T> out;
  // dL/dlogits = softmax(row) - I.
  Matrix<T> g(n, n);
  T loss = T(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T m = logits.row(i).maxCoeff();
    T denom = T(0);
    for (Eigen::Index j = 0; j < n; ++j) {
      g(i, j) = std::exp(logits(i, j) - m);
      denom += g(i, j);
    }
    loss += m + std::log(denom) - logits(i, i);
    g.row(i) /= denom;
    g(i, i) -= T(1);
  }
  if (reduction == Reduction::kMean) {
    loss /= static_cast<T>(n);
    g /= static_cast<T>(n);
  }
  out.loss = loss;

  const Matrix<T> dha = (g * hb) * scale;
  const Matrix<T> dhb = (g.transpose() * ha) * scale;
  out.grad_a = normalize_backward(ha, na, dha);
  out.grad_b = normalize_backward(hb, nb, dhb);
  out.grad_t = clamped ? T(0) : scale * g.cwiseProduct(sim).sum();
  return out;
}

template <typename T>
void TriModalBatch<T>::validate() const {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (image.rows() != n || text.rows() != n) {
    throw UsageError("TriModalBatch: row counts differ between modalities");
  }
  if (!image.allFinite() || !text.allFinite()) {
    throw DataError("TriModalBatch: non-finite embedding entries");
  }
}

template <typename T>
LossBreakdown<T> total_loss(const TriModalBatch<T>& batch, const AlignmentModel<T>& model,
                            AlignmentGrads<T>* grads, Reduction reduction) {
  batch.validate();
  if (batch.size() == 0) throw UsageError("total_loss: empty batch");

  auto img_text = nn::mlp_forward(model.image_to_text, batch.image);
  auto img_gps = nn::mlp_forward(model.image_to_gps, batch.image);
  auto txt = nn::mlp_forward(model.text_head, batch.text);
  typename GpsEncoder<T>::Cache gps_cache;
  const Matrix<T> gps = model.gps_encoder.forward(batch.points, gps_cache);

  const auto l_it = contrastive_pair_loss(img_text.output, txt.output, model.t_image_text, reduction);
  const auto l_ti = contrastive_pair_loss(txt.output, img_text.output, model.t_image_text, reduction);
  const auto l_ig = contrastive_pair_loss(img_gps.output, gps, model.t_image_gps, reduction);
  const auto l_gi = contrastive_pair_loss(gps, img_gps.output, model.t_image_gps, reduction);

  LossBreakdown<T> out;
  out.image_text = l_it.loss;
  out.text_image = l_ti.loss;
  out.image_gps = l_ig.loss;
  out.gps_image = l_gi.loss;
  out.total = (l_it.loss + l_ig.loss + l_ti.loss + l_gi.loss) / T(2);

  if (grads != nullptr) {
    const T half = T(0.5);
    const Matrix<T> d_img_text = (l_it.grad_a + l_ti.grad_b) * half;
    const Matrix<T> d_txt = (l_it.grad_b + l_ti.grad_a) * half;
    const Matrix<T> d_img_gps = (l_ig.grad_a + l_gi.grad_b) * half;
    const Matrix<T> d_gps = (l_ig.grad_b + l_gi.grad_a) * half;
    grads->image_to_text = nn::mlp_backward(model.image_to_text, img_text.cache, d_img_text).grads;
    grads->text_head = nn::mlp_backward(model.text_head, txt.cache, d_txt).grads;
    grads->image_to_gps = nn::mlp_backward(model.image_to_gps, img_gps.cache, d_img_gps).grads;
    grads->gps_heads = model.gps_encoder.backward(gps_cache, d_gps);
    grads->t_image_text = (l_it.grad_t + l_ti.grad_t) * half;
    grads->t_image_gps = (l_ig.grad_t + l_gi.grad_t) * half;
  }
  return out;
}

template <typename T>
void apply_gradients(AlignmentModel<T>& model, const AlignmentGrads<T>& grads,
                     nn::AdamW<T>& optimizer) {
  std::vector<nn::ParamSlot<T>> slots;
  nn::collect_slots(model.image_to_text, grads.image_to_text, slots);
  nn::collect_slots(model.image_to_gps, grads.image_to_gps, slots);
  nn::collect_slots(model.text_head, grads.text_head, slots);
  auto& hierarchies = model.gps_encoder.mutable_hierarchies();
  if (grads.gps_heads.size() != hierarchies.size()) {
    throw UsageError("apply_gradients: hierarchy count mismatch");
  }
  for (std::size_t k = 0; k < hierarchies.size(); ++k) {
    nn::collect_slots(hierarchies[k].head, grads.gps_heads[k], slots);
  }
  slots.push_back({{&model.t_image_text, 1}, {&grads.t_image_text, 1}});
  slots.push_back({{&model.t_image_gps, 1}, {&grads.t_image_gps, 1}});
  optimizer.step(slots);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("TrainConfig: batch_size must be positive");
  if (epochs < 1) throw UsageError("TrainConfig: epochs must be positive");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw UsageError("TrainConfig: lr and weight_decay must be non-negative");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw UsageError("TrainConfig: gamma must be in (0, 1]");
  if (!std::isfinite(t_init)) throw UsageError("TrainConfig: t_init must be finite");
  dims.validate();
}

std::vector<EpochLog> train_model(AlignmentModel<float>& model,
                                  const TriModalBatch<float>& dataset, const TrainConfig& config,
                                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  dataset.validate();
  const std::size_t n = dataset.size();
  if (n == 0) throw UsageError("train: empty dataset");
  if (dataset.image.cols() != model.dims.image || dataset.text.cols() != model.dims.text) {
    throw UsageError("train: embedding widths do not match the model");
  }

  nn::AdamW<float> optimizer({config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const nn::StepLrSchedule schedule{config.lr, config.gamma};
  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x53485546));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochLog> log;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    optimizer.set_lr(schedule.lr_at(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const auto rows = static_cast<Eigen::Index>(end - start);
      TriModalBatch<float> batch;
      batch.image.resize(rows, dataset.image.cols());
      batch.text.resize(rows, dataset.text.cols());
      batch.points.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto src = static_cast<Eigen::Index>(order[i]);
        const auto dst = static_cast<Eigen::Index>(i - start);
        batch.image.row(dst) = dataset.image.row(src);
        batch.text.row(dst) = dataset.text.row(src);
        batch.points.push_back(dataset.points[order[i]]);
      }
      AlignmentGrads<float> grads;
      const auto loss = total_loss(batch, model, &grads, config.reduction);
      apply_gradients(model, grads, optimizer);
      loss_sum += static_cast<double>(loss.total);
      ++n_batches;
    }
    EpochLog entry{epoch + 1, optimizer.lr(), loss_sum / static_cast<double>(n_batches)};
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

TrainResult train(const TriModalBatch<float>& dataset, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (dataset.size() == 0) throw UsageError("train: empty dataset");
  TrainResult r{AlignmentModel<float>::create(config.dims, config.hierarchy, config.projection,
                                              config.t_init, config.seed),
                {}};
  r.log = train_model(r.model, dataset, config, on_epoch);
  return r;
}

nn::Matrix<float> normalize_rows(const nn::Matrix<float>& m) {
  const auto norms = row_norms(m, "normalize_rows");
  return m.array().colwise() / norms.array();
}

nn::Matrix<float> vectorize_images(const nn::Matrix<float>& image_emb,
                                   const AlignmentModel<float>& model) {
  const auto& d = model.dims;
  if (image_emb.cols() != d.image) throw UsageError("vectorize_images: wrong embedding width");
  const Eigen::Index n = image_emb.rows();
  nn::Matrix<float> out(n, d.vector_dim());
  out.leftCols(d.image) = normalize_rows(image_emb);
  out.middleCols(d.image, d.text_space) = normalize_rows(nn::mlp_infer(model.image_to_text, image_emb));
  out.rightCols(d.gps_space) = normalize_rows(nn::mlp_infer(model.image_to_gps, image_emb));
  // Each segment is unit length, so the concatenation has norm sqrt(3).
  return normalize_rows(out);
}

std::vector<float> vectorize_image(std::span<const float> image_emb,
                                   const AlignmentModel<float>& model) {
  nn::Matrix<float> row(1, static_cast<Eigen::Index>(image_emb.size()));
  std::copy(image_emb.begin(), image_emb.end(), row.data());
  const auto v = vectorize_images(row, model);
  return {v.data(), v.data() + v.size()};
}

std::string text_description(const MetadataRecord& record) {
  std::string parts;
  for (const auto* field : {&record.city, &record.county, &record.country}) {
    if (!field->has_value() || (*field)->empty()) continue;
    if (!parts.empty()) parts += ", ";
    parts += **field;
  }
  if (parts.empty()) return "A photo.";
  return "A photo taken from " + parts + ".";
}

// ---- persistence ---------------------------------------------------------

nn::Checkpoint to_checkpoint(const AlignmentModel<float>& model) {
  const auto& d = model.dims;
  const auto& enc = model.gps_encoder;
  nlohmann::json meta;
  meta["format"] = "g3-alignment";
  meta["dims"] = {{"image", d.image},           {"text", d.text},
                  {"hidden", d.hidden},         {"text_space", d.text_space},
                  {"gps_space", d.gps_space},   {"gps_rff_rows", d.gps_rff_rows},
                  {"gps_hidden", d.gps_hidden}};
  meta["hierarchy"] = {{"n_hierarchies", enc.spec().n_hierarchies},
                       {"sigma_min", enc.spec().sigma_min},
                       {"sigma_max", enc.spec().sigma_max}};
  meta["projection"] = projection_name(enc.projection());
  meta["seed"] = model.seed;
  meta["gps_seed"] = enc.seed();
  nlohmann::json rff = nlohmann::json::array();
  for (const auto& h : enc.hierarchies()) rff.push_back({{"sigma", h.rff.sigma}, {"seed", h.rff.seed}});
  meta["rff"] = rff;

  nn::Checkpoint ckpt;
  ckpt.metadata_json = meta.dump();
  nn::append_mlp(ckpt, "image_to_text", model.image_to_text);
  nn::append_mlp(ckpt, "image_to_gps", model.image_to_gps);
  nn::append_mlp(ckpt, "text_head", model.text_head);
  for (std::size_t k = 0; k < enc.hierarchies().size(); ++k) {
    const auto& h = enc.hierarchies()[k];
    const std::string prefix = "gps." + std::to_string(k);
    nn::append_mlp(ckpt, prefix + ".head", h.head);
    ckpt.add(nn::to_tensor(prefix + ".rff", h.rff.entries));
  }
  ckpt.add({"t_image_text", {1}, {model.t_image_text}});
  ckpt.add({"t_image_gps", {1}, {model.t_image_gps}});
  return ckpt;
}

AlignmentModel<float> from_checkpoint(const nn::Checkpoint& ckpt) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  if (meta.value("format", "") != "g3-alignment") {
    throw FormatError("checkpoint is not an alignment model");
  }
  try {
    AlignmentDims d;
    const auto& jd = meta.at("dims");
    d.image = jd.at("image");
    d.text = jd.at("text");
    d.hidden = jd.at("hidden");
    d.text_space = jd.at("text_space");
    d.gps_space = jd.at("gps_space");
    d.gps_rff_rows = jd.at("gps_rff_rows");
    d.gps_hidden = jd.at("gps_hidden");
    HierarchySpec h;
    h.n_hierarchies = meta.at("hierarchy").at("n_hierarchies");
    h.sigma_min = meta.at("hierarchy").at("sigma_min");
    h.sigma_max = meta.at("hierarchy").at("sigma_max");
    const Projection projection =
        meta.at("projection") == "mercator" ? Projection::kMercator : Projection::kEqualEarth;

    AlignmentModel<float> m;
    m.dims = d;
    m.seed = meta.at("seed");
    m.image_to_text = nn::Mlp<float>(nn::MlpSpec::two_layer(d.image, d.hidden, d.text_space));
    m.image_to_gps = nn::Mlp<float>(nn::MlpSpec::two_layer(d.image, d.hidden, d.gps_space));
    m.text_head = nn::Mlp<float>(nn::MlpSpec::two_layer(d.text, d.hidden, d.text_space));
    m.gps_encoder = GpsEncoder<float>(h, d.gps(), projection, meta.at("gps_seed"));
    nn::read_mlp(ckpt, "image_to_text", m.image_to_text);
    nn::read_mlp(ckpt, "image_to_gps", m.image_to_gps);
    nn::read_mlp(ckpt, "text_head", m.text_head);
    auto& hierarchies = m.gps_encoder.mutable_hierarchies();
    for (std::size_t k = 0; k < hierarchies.size(); ++k) {
      const std::string prefix = "gps." + std::to_string(k);
      nn::read_mlp(ckpt, prefix + ".head", hierarchies[k].head);
      hierarchies[k].rff.entries =
          nn::matrix_from<double>(ckpt.get(prefix + ".rff"), d.gps_rff_rows, 2);
    }
    m.t_image_text = nn::vector_from<float>(ckpt.get("t_image_text"), 1)[0];
    m.t_image_gps = nn::vector_from<float>(ckpt.get("t_image_gps"), 1)[0];
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

void save_model(const std::string& path, const AlignmentModel<float>& model) {
  nn::save_checkpoint(path, to_checkpoint(model));
}

AlignmentModel<float> load_model(const std::string& path) {
  return from_checkpoint(nn::load_checkpoint(path));
}

#define G3_ALIGN_INSTANTIATE(T)                                                             \
  template struct AlignmentModel<T>;                                                        \
  template struct TriModalBatch<T>;                                                         \
  template PairLoss<T> contrastive_pair_loss(const Matrix<T>&, const Matrix<T>&, T,         \
                                             Reduction);                                    \
  template LossBreakdown<T> total_loss(const TriModalBatch<T>&, const AlignmentModel<T>&,   \
                                       AlignmentGrads<T>*, Reduction);                      \
  template void apply_gradients(AlignmentModel<T>&, const AlignmentGrads<T>&, nn::AdamW<T>&);

G3_ALIGN_INSTANTIATE(float)
G3_ALIGN_INSTANTIATE(double)
#undef G3_ALIGN_INSTANTIATE

template AlignmentModel<double> AlignmentModel<float>::cast<double>() const;
template AlignmentModel<float> AlignmentModel<double>::cast<float>() const;

}  // namespace g3
