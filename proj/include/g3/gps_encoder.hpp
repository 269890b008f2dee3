#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "g3/geodesy.hpp"
#include "g3/nn.hpp"

namespace g3 {

enum class Projection { kMercator, kEqualEarth };

// Geometric interpolation of sigma between sigma_min and sigma_max in log2
// space. Throws UsageError for n < 2 or a non-increasing range.
std::vector<double> sigma_schedule(int n, double sigma_min, double sigma_max);

struct HierarchySpec {
  int n_hierarchies = 3;
  double sigma_min = 1.0;    // 2^0
  double sigma_max = 256.0;  // 2^8

  // A single hierarchy uses sigma_min alone.
  std::vector<double> sigmas() const;
};

struct GpsEncoderDims {
  int rff_rows = 256;  // D/2; features are 2 * rff_rows wide
  int hidden = 1024;
  int output = 512;
};

// Frozen Gaussian frequency matrix, rows x 2, entries ~ N(0, sigma).
// Entries are rounded to float on sampling so a checkpoint reproduces them
// exactly.
struct RffMatrix {
  nn::Matrix<double> entries;
  std::uint64_t seed = 0;
  double sigma = 1.0;

  static RffMatrix sample(int rows, double sigma, std::uint64_t seed);
};

// Projected coordinates scaled into roughly [-1, 1]^2 (Mercator: divided by
// pi * R, so the latitude clamp lands on +-1).
std::array<double, 2> scaled_plane(const GeoPoint& p, Projection projection);

// [cos(2 pi M p), sin(2 pi M p)] with the same M for both halves.
std::vector<double> rff_features(const std::array<double, 2>& p, const RffMatrix& m);

template <typename T>
class GpsEncoder {
 public:
  struct Hierarchy {
    RffMatrix rff;
    nn::Mlp<T> head;  // 2*rff_rows -> hidden -> output
  };

  struct Cache {
    std::vector<nn::MlpCache<T>> heads;
  };

  GpsEncoder() = default;
  // Samples the RFF matrices from `seed`; heads start at zero.
  GpsEncoder(HierarchySpec spec, GpsEncoderDims dims, Projection projection, std::uint64_t seed);

  void init_heads(std::mt19937_64& rng);

  const HierarchySpec& spec() const { return spec_; }
  const GpsEncoderDims& dims() const { return dims_; }
  Projection projection() const { return projection_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Hierarchy>& hierarchies() const { return hierarchies_; }
  std::vector<Hierarchy>& mutable_hierarchies() { return hierarchies_; }

  // Input to head k for a batch of points, n x 2*rff_rows.
  nn::Matrix<T> features(std::span<const GeoPoint> points, std::size_t k) const;

  // n x output. Sum over hierarchies of head_k(features_k).
  nn::Matrix<T> encode(std::span<const GeoPoint> points) const;
  nn::Matrix<T> forward(std::span<const GeoPoint> points, Cache& cache) const;
  // Gradients for the heads only; RFF matrices are frozen.
  std::vector<nn::MlpGrads<T>> backward(const Cache& cache, const nn::Matrix<T>& upstream) const;

  template <typename U>
  GpsEncoder<U> cast() const;

 private:
  template <typename U>
  friend class GpsEncoder;

  HierarchySpec spec_;
  GpsEncoderDims dims_;
  Projection projection_ = Projection::kMercator;
  std::uint64_t seed_ = 0;
  std::vector<Hierarchy> hierarchies_;
};

template <typename T>
std::vector<T> encode_gps(const GeoPoint& p, const GpsEncoder<T>& encoder);

// Per-hierarchy RFF seed derived from the encoder seed.
std::uint64_t rff_seed(std::uint64_t encoder_seed, std::size_t hierarchy);

}  // namespace g3
