#include "g3/gps_encoder.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "g3/errors.hpp"

namespace g3 {
namespace {

// Equal Earth polynomial coefficients.
constexpr double kA1 = 1.340264;
constexpr double kA2 = -0.081106;
constexpr double kA3 = 0.000893;
constexpr double kA4 = 0.003796;

std::array<double, 2> equal_earth_unit(double lat_deg, double lon_deg) {
  const double phi = lat_deg * std::numbers::pi / 180.0;
  const double lambda = lon_deg * std::numbers::pi / 180.0;
  const double theta = std::asin(std::sqrt(3.0) / 2.0 * std::sin(phi));
  const double t2 = theta * theta;
  const double t6 = t2 * t2 * t2;
  const double x = 2.0 * std::sqrt(3.0) * lambda * std::cos(theta) /
                   (3.0 * (9.0 * kA4 * t6 * t2 + 7.0 * kA3 * t6 + 3.0 * kA2 * t2 + kA1));
  const double y = theta * (kA1 + kA2 * t2 + t6 * (kA3 + kA4 * t2));
  return {x, y};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<double> sigma_schedule(int n, double sigma_min, double sigma_max) {
  if (n < 2) throw UsageError("sigma_schedule: need at least two hierarchies");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw UsageError("sigma_schedule: require 0 < sigma_min < sigma_max");
  }
  const double lo = std::log2(sigma_min);
  const double step = (std::log2(sigma_max) - lo) / static_cast<double>(n - 1);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out[k] = std::exp2(lo + k * step);
  out.back() = sigma_max;
  return out;
}

std::vector<double> HierarchySpec::sigmas() const {
  if (n_hierarchies == 1) return {sigma_min};
  return sigma_schedule(n_hierarchies, sigma_min, sigma_max);
}

std::uint64_t rff_seed(std::uint64_t encoder_seed, std::size_t hierarchy) {
  return splitmix64(encoder_seed ^ splitmix64(0x5246460000000000ull + hierarchy));
}

RffMatrix RffMatrix::sample(int rows, double sigma, std::uint64_t seed) {
  if (rows <= 0) throw UsageError("RffMatrix: rows must be positive");
  RffMatrix m;
  m.seed = seed;
  m.sigma = sigma;
  m.entries.resize(rows, 2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (Eigen::Index i = 0; i < m.entries.size(); ++i) {
    m.entries.data()[i] = static_cast<double>(static_cast<float>(dist(rng)));
  }
  return m;
}

std::array<double, 2> scaled_plane(const GeoPoint& p, Projection projection) {
  switch (projection) {
    case Projection::kMercator: {
      const PlanePoint q = mercator_project(p);
      const double scale = std::numbers::pi * kProjectionRadiusM;
      return {q.x / scale, q.y / scale};
    }
    case Projection::kEqualEarth: {
      static const double extent = equal_earth_unit(0.0, 180.0)[0];
      const auto q = equal_earth_unit(p.lat_deg(), p.lon_deg());
      return {q[0] / extent, q[1] / extent};
    }
  }
  throw UsageError("scaled_plane: unknown projection");
}

std::vector<double> rff_features(const std::array<double, 2>& p, const RffMatrix& m) {
  const auto rows = static_cast<std::size_t>(m.entries.rows());
  std::vector<double> out(2 * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double phase =
        2.0 * std::numbers::pi * (m.entries(r, 0) * p[0] + m.entries(r, 1) * p[1]);
    out[r] = std::cos(phase);
    out[rows + r] = std::sin(phase);
  }
  return out;
}

template <typename T>
GpsEncoder<T>::GpsEncoder(HierarchySpec spec, GpsEncoderDims dims, Projection projection,
                          std::uint64_t seed)
    : spec_(spec), dims_(dims), projection_(projection), seed_(seed) {
  if (spec_.n_hierarchies < 1) throw UsageError("GpsEncoder: need at least one hierarchy");
  const auto sigmas = spec_.sigmas();
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    hierarchies_.push_back(
        {RffMatrix::sample(dims_.rff_rows, sigmas[k], rff_seed(seed, k)),
         nn::Mlp<T>(nn::MlpSpec::two_layer(2 * dims_.rff_rows, dims_.hidden, dims_.output))});
  }
}

template <typename T>
void GpsEncoder<T>::init_heads(std::mt19937_64& rng) {
  for (auto& h : hierarchies_) h.head.init_kaiming_uniform(rng);
}

template <typename T>
nn::Matrix<T> GpsEncoder<T>::features(std::span<const GeoPoint> points, std::size_t k) const {
  const auto& rff = hierarchies_.at(k).rff;
  nn::Matrix<T> f(static_cast<Eigen::Index>(points.size()), 2 * rff.entries.rows());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto row = rff_features(scaled_plane(points[i], projection_), rff);
    for (std::size_t j = 0; j < row.size(); ++j) {
      f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<T>(row[j]);
    }
  }
  return f;
}

template <typename T>
nn::Matrix<T> GpsEncoder<T>::encode(std::span<const GeoPoint> points) const {
  nn::Matrix<T> out = nn::Matrix<T>::Zero(static_cast<Eigen::Index>(points.size()), dims_.output);
  for (std::size_t k = 0; k < hierarchies_.size(); ++k) {
    out += nn::mlp_infer(hierarchies_[k].head, features(points, k));
  }
  return out;
}

template <typename T>
nn::Matrix<T> GpsEncoder<T>::forward(std::span<const GeoPoint> points, Cache& cache) const {
  cache.heads.clear();
  nn::Matrix<T> out = nn::Matrix<T>::Zero(static_cast<Eigen::Index>(points.size()), dims_.output);
  for (std::size_t k = 0; k < hierarchies_.size(); ++k) {
    auto r = nn::mlp_forward(hierarchies_[k].head, features(points, k));
    out += r.output;
    cache.heads.push_back(std::move(r.cache));
  }
  return out;
}

template <typename T>
std::vector<nn::MlpGrads<T>> GpsEncoder<T>::backward(const Cache& cache,
                                                     const nn::Matrix<T>& upstream) const {
  if (cache.heads.size() != hierarchies_.size()) {
    throw UsageError("GpsEncoder::backward: cache does not match hierarchy count");
  }
  std::vector<nn::MlpGrads<T>> grads;
  grads.reserve(hierarchies_.size());
  for (std::size_t k = 0; k < hierarchies_.size(); ++k) {
    grads.push_back(nn::mlp_backward(hierarchies_[k].head, cache.heads[k], upstream).grads);
  }
  return grads;
}

template <typename T>
template <typename U>
GpsEncoder<U> GpsEncoder<T>::cast() const {
  GpsEncoder<U> out;
  out.spec_ = spec_;
  out.dims_ = dims_;
  out.projection_ = projection_;
  out.seed_ = seed_;
  for (const auto& h : hierarchies_) {
    out.hierarchies_.push_back({h.rff, h.head.template cast<U>()});
  }
  return out;
}

template <typename T>
std::vector<T> encode_gps(const GeoPoint& p, const GpsEncoder<T>& encoder) {
  const nn::Matrix<T> e = encoder.encode(std::span<const GeoPoint>(&p, 1));
  return {e.data(), e.data() + e.size()};
}

template class GpsEncoder<float>;
template class GpsEncoder<double>;
template GpsEncoder<double> GpsEncoder<float>::cast<double>() const;
template GpsEncoder<float> GpsEncoder<double>::cast<float>() const;
template std::vector<float> encode_gps(const GeoPoint&, const GpsEncoder<float>&);
template std::vector<double> encode_gps(const GeoPoint&, const GpsEncoder<double>&);

}  // namespace g3
