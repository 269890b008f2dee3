#include "g3/geodesy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "g3/errors.hpp"

namespace g3 {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Wraps a longitude difference in degrees into [-180, 180].
double wrap_lon(double lon) {
  if (lon >= -180.0 && lon <= 180.0) return lon;
  double w = std::fmod(lon + 180.0, 360.0);
  if (w < 0) w += 360.0;
  return w - 180.0;
}

}  // namespace

GeoPoint::GeoPoint(double lat_deg, double lon_deg) : lat_(lat_deg), lon_(lon_deg) {
  if (!std::isfinite(lat_deg) || !std::isfinite(lon_deg)) {
    throw RangeError("GeoPoint: non-finite coordinate");
  }
  if (lat_deg < -90.0 || lat_deg > 90.0) {
    throw RangeError("GeoPoint: latitude out of range: " + std::to_string(lat_deg));
  }
  if (lon_deg < -180.0 || lon_deg > 180.0) {
    throw RangeError("GeoPoint: longitude out of range: " + std::to_string(lon_deg));
  }
}

PlanePoint mercator_project(const GeoPoint& p, double lambda0_deg, double radius_m) {
  if (!(lambda0_deg >= -180.0 && lambda0_deg <= 180.0)) {
    throw UsageError("mercator_project: central meridian out of range");
  }
  const double lat = std::clamp(p.lat_deg(), -kMercatorMaxLatDeg, kMercatorMaxLatDeg);
  const double phi = lat * kDegToRad;
  const double dlambda = wrap_lon(p.lon_deg() - lambda0_deg) * kDegToRad;
  // asinh(tan(phi)) == ln(tan(pi/4 + phi/2)), but exact at 0 and odd.
  return {radius_m * dlambda, radius_m * std::asinh(std::tan(phi))};
}

GeoPoint mercator_unproject(const PlanePoint& p, double lambda0_deg, double radius_m) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
    throw UsageError("mercator_unproject: non-finite plane point");
  }
  const double lat = std::atan(std::sinh(p.y / radius_m)) * kRadToDeg;
  const double lon = wrap_lon(p.x / radius_m * kRadToDeg + lambda0_deg);
  return {std::clamp(lat, -90.0, 90.0), lon};
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = a.lat_deg() * kDegToRad;
  const double phi2 = b.lat_deg() * kDegToRad;
  const double dphi = phi2 - phi1;
  const double dlambda = (b.lon_deg() - a.lon_deg()) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  // 1 - h written as a sum of squares, so near-antipodal pairs keep full
  // precision where asin(sqrt(h)) would not.
  const double c1 = std::cos(dphi / 2.0);
  const double c2 = std::cos(dlambda / 2.0);
  const double s3 = std::sin((phi1 + phi2) / 2.0);
  const double g = c1 * c1 * c2 * c2 + s3 * s3 * s2 * s2;
  return 2.0 * kMeanEarthRadiusKm * std::atan2(std::sqrt(h), std::sqrt(g));
}

GeoPoint offset_km(const GeoPoint& origin, double north_km, double east_km) {
  double lat = origin.lat_deg() + north_km / kMeanEarthRadiusKm * kRadToDeg;
  lat = std::clamp(lat, -89.999, 89.999);
  const double coslat = std::cos(lat * kDegToRad);
  const double lon = origin.lon_deg() + east_km / (kMeanEarthRadiusKm * coslat) * kRadToDeg;
  return {lat, wrap_lon(lon)};
}

ThresholdReport ThresholdReport::from_distances(std::span<const double> distances_km) {
  if (distances_km.empty()) throw UsageError("threshold report: no samples");
  ThresholdReport r;
  r.n_samples = distances_km.size();
  std::array<std::size_t, 5> hits{};
  for (double d : distances_km) {
    for (std::size_t t = 0; t < kThresholdsKm.size(); ++t) {
      if (d <= kThresholdsKm[t]) ++hits[t];
    }
  }
  for (std::size_t t = 0; t < hits.size(); ++t) {
    r.fractions[t] = static_cast<double>(hits[t]) / static_cast<double>(r.n_samples);
  }
  return r;
}

ThresholdReport threshold_accuracy(std::span<const GeoPoint> preds,
                                   std::span<const GeoPoint> truths) {
  if (preds.size() != truths.size()) {
    throw UsageError("threshold_accuracy: " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(truths.size()) + " truths");
  }
  if (preds.empty()) throw UsageError("threshold_accuracy: empty input");
  std::vector<double> d(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) d[i] = haversine_km(preds[i], truths[i]);
  return ThresholdReport::from_distances(d);
}

}  // namespace g3
