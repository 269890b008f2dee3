#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace g3 {

// Spherical-earth radius used for distances (IUGG mean radius).
inline constexpr double kMeanEarthRadiusKm = 6371.0088;
// Default Mercator projection radius (WGS84 semi-major axis).
inline constexpr double kProjectionRadiusM = 6378137.0;
// Web-Mercator cutoff; latitudes beyond are clamped before projecting.
inline constexpr double kMercatorMaxLatDeg = 85.05113;

// Latitude/longitude in degrees. Construction validates ranges and rejects
// NaN/inf, so every GeoPoint in the system is a legal coordinate.
class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat_deg, double lon_deg);

  double lat_deg() const { return lat_; }
  double lon_deg() const { return lon_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

// Plane coordinates in metres.
struct PlanePoint {
  double x = 0.0;
  double y = 0.0;
};

PlanePoint mercator_project(const GeoPoint& p, double lambda0_deg = 0.0,
                            double radius_m = kProjectionRadiusM);

GeoPoint mercator_unproject(const PlanePoint& p, double lambda0_deg = 0.0,
                            double radius_m = kProjectionRadiusM);

// Great-circle distance on a sphere of radius kMeanEarthRadiusKm.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

// Point reached by travelling `north_km` then `east_km` from `origin` on the
// spherical earth. Small-offset helper used by the synthetic world and tests.
GeoPoint offset_km(const GeoPoint& origin, double north_km, double east_km);

struct ThresholdReport {
  static constexpr std::array<double, 5> kThresholdsKm{1.0, 25.0, 200.0, 750.0, 2500.0};

  std::array<double, 5> fractions{};
  std::size_t n_samples = 0;

  // Builds a report from per-sample errors; +inf marks a sample that
  // produced no prediction and counts as a miss at every threshold.
  static ThresholdReport from_distances(std::span<const double> distances_km);
};

// Throws UsageError on empty input or length mismatch.
ThresholdReport threshold_accuracy(std::span<const GeoPoint> preds,
                                   std::span<const GeoPoint> truths);

}  // namespace g3
