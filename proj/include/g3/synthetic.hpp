#pragma once

// Desk-scale stand-in for a geotagged photo corpus. Clusters of points
// scattered over the sphere; clusters come in visually look-alike pairs that
// share most of their image signature, so raw visual retrieval confuses
// places thousands of kilometres apart while the country text separates them.

#include <cstdint>
#include <vector>

#include "g3/nn.hpp"
#include "g3/records.hpp"

namespace g3 {

struct SyntheticWorldConfig {
  std::uint64_t seed = 0;
  std::size_t n_clusters = 8;
  std::size_t points_per_cluster = 256;
  std::size_t queries_per_cluster = 64;
  // Scale of the per-point deviation from the cluster signature, per
  // dimension. Part of it is a smooth field over location, the rest white.
  double embedding_noise_sigma = 0.1;
  double cluster_radius_km = 200.0;
  int image_dim = 768;
  int text_dim = 768;
  // Weight of the cluster's own signature relative to the signature it
  // shares with its look-alike partner.
  double own_signature_weight = 0.2;
  // Fraction of the noise variance carried by the location field.
  double field_fraction = 0.05;
  double min_center_separation_km = 2000.0;

  void validate() const;
};

struct WorldSplit {
  std::vector<MetadataRecord> metadata;
  nn::Matrix<float> image;
  nn::Matrix<float> text;
};

struct SyntheticWorld {
  std::vector<GeoPoint> centers;
  WorldSplit database;
  WorldSplit queries;
};

// Fully determined by config.seed.
SyntheticWorld synthesize_world(const SyntheticWorldConfig& config);

}  // namespace g3
