#include "g3/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "g3/errors.hpp"

namespace g3 {
namespace {

using Vec = Eigen::VectorXd;

constexpr int kFieldFeatures = 64;

Vec unit_gaussian(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = n(rng);
  return v / v.norm();
}

// Smooth random field over local (north, east) km offsets, approximated by
// random Fourier features; unit variance per output dimension.
struct LocationField {
  Eigen::MatrixXd weights;      // dim x F
  Eigen::MatrixXd frequencies;  // F x 2, rad per km
  Vec phases;                   // F

  LocationField(int dim, double length_scale_km, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    weights.resize(dim, kFieldFeatures);
    for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = n(rng);
    frequencies.resize(kFieldFeatures, 2);
    for (Eigen::Index i = 0; i < frequencies.size(); ++i) {
      frequencies.data()[i] = n(rng) / length_scale_km;
    }
    phases.resize(kFieldFeatures);
    for (int i = 0; i < kFieldFeatures; ++i) phases[i] = u(rng);
  }

  Vec at(double north_km, double east_km) const {
    Vec phi(kFieldFeatures);
    for (int f = 0; f < kFieldFeatures; ++f) {
      phi[f] = std::cos(frequencies(f, 0) * north_km + frequencies(f, 1) * east_km + phases[f]);
    }
    return weights * phi * std::sqrt(2.0 / kFieldFeatures);
  }
};

struct Cluster {
  GeoPoint center;
  Vec signature;
  Vec text;
  LocationField field;
};

GeoPoint random_center(std::mt19937_64& rng) {
  // Uniform on the sphere, kept away from the poles.
  std::uniform_real_distribution<double> z(-std::sin(70.0 * std::numbers::pi / 180.0),
                                           std::sin(70.0 * std::numbers::pi / 180.0));
  std::uniform_real_distribution<double> lon(-180.0, 180.0);
  return {std::asin(z(rng)) * 180.0 / std::numbers::pi, lon(rng)};
}

void emit(const Cluster& c, std::size_t cluster_index, std::size_t count, const char* tag,
          const SyntheticWorldConfig& cfg, std::mt19937_64& rng, WorldSplit& split,
          std::vector<Eigen::VectorXf>& image_rows, std::vector<Eigen::VectorXf>& text_rows) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const double field_w = std::sqrt(cfg.field_fraction);
  const double white_w = std::sqrt(1.0 - cfg.field_fraction);
  for (std::size_t i = 0; i < count; ++i) {
    // Uniform over a disc of the configured radius.
    const double r = cfg.cluster_radius_km * std::sqrt(unit(rng));
    const double a = 2.0 * std::numbers::pi * unit(rng);
    const double north = r * std::cos(a);
    const double east = r * std::sin(a);
    Vec white(cfg.image_dim);
    for (int d = 0; d < cfg.image_dim; ++d) white[d] = n(rng);
    const Vec image = c.signature + cfg.embedding_noise_sigma *
                                        (field_w * c.field.at(north, east) + white_w * white);

    MetadataRecord rec;
    rec.img_id = "c" + std::to_string(cluster_index) + "/" + tag + std::to_string(i);
    rec.point = offset_km(c.center, north, east);
    rec.city = "City " + std::to_string(cluster_index) + "-" + std::to_string(a < std::numbers::pi ? 0 : 1);
    rec.county = "County " + std::to_string(cluster_index);
    rec.state = "State " + std::to_string(cluster_index);
    rec.country = "Country " + std::to_string(cluster_index);
    split.metadata.push_back(std::move(rec));
    image_rows.push_back(image.cast<float>());
    text_rows.push_back(c.text.cast<float>());
  }
}

nn::Matrix<float> stack(const std::vector<Eigen::VectorXf>& rows, int dim) {
  nn::Matrix<float> m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

}  // namespace

void SyntheticWorldConfig::validate() const {
  if (n_clusters == 0 || points_per_cluster == 0) {
    throw UsageError("synthetic world: counts must be positive");
  }
  if (!(cluster_radius_km > 0.0 && cluster_radius_km < 2500.0)) {
    throw UsageError("synthetic world: cluster radius must be in (0, 2500) km");
  }
  if (!(embedding_noise_sigma >= 0.0)) throw UsageError("synthetic world: noise must be >= 0");
  if (image_dim <= 0 || text_dim <= 0) throw UsageError("synthetic world: dims must be positive");
  if (!(field_fraction >= 0.0 && field_fraction <= 1.0)) {
    throw UsageError("synthetic world: field_fraction must be in [0, 1]");
  }
}

SyntheticWorld synthesize_world(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SyntheticWorld world;

  std::vector<Cluster> clusters;
  for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
    GeoPoint center = random_center(rng);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      bool ok = true;
      for (const auto& other : clusters) {
        if (haversine_km(center, other.center) < cfg.min_center_separation_km) ok = false;
      }
      if (ok) break;
      center = random_center(rng);
    }
    world.centers.push_back(center);
    clusters.push_back({center, Vec(), unit_gaussian(cfg.text_dim, rng),
                        LocationField(cfg.image_dim, cfg.cluster_radius_km / 2.0, rng)});
  }
  // Look-alike pairs (0,1), (2,3), ... share a base signature.
  for (std::size_t c = 0; c < cfg.n_clusters; c += 2) {
    const Vec shared = unit_gaussian(cfg.image_dim, rng);
    for (std::size_t m = c; m < std::min(c + 2, cfg.n_clusters); ++m) {
      clusters[m].signature = shared + cfg.own_signature_weight * unit_gaussian(cfg.image_dim, rng);
    }
  }

  std::vector<Eigen::VectorXf> db_img, db_txt, q_img, q_txt;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    emit(clusters[c], c, cfg.points_per_cluster, "db", cfg, rng, world.database, db_img, db_txt);
    emit(clusters[c], c, cfg.queries_per_cluster, "q", cfg, rng, world.queries, q_img, q_txt);
  }
  world.database.image = stack(db_img, cfg.image_dim);
  world.database.text = stack(db_txt, cfg.text_dim);
  world.queries.image = stack(q_img, cfg.image_dim);
  world.queries.text = stack(q_txt, cfg.text_dim);
  return world;
}

}  // namespace g3
