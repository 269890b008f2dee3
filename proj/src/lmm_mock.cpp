#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "g3/diversify.hpp"
#include "g3/errors.hpp"
#include "g3/lmm.hpp"

namespace g3 {
namespace {

// Coordinates listed under "Similar locations:" in a rendered prompt.
std::vector<GeoPoint> similar_locations(const std::string& prompt) {
  std::vector<GeoPoint> out;
  std::istringstream in(prompt);
  std::string line;
  bool inside = false;
  while (std::getline(in, line)) {
    if (line == "Similar locations:") {
      inside = true;
      continue;
    }
    if (!inside) continue;
    try {
      out.push_back(parse_coordinates(line));
    } catch (const DataError&) {
      break;
    }
  }
  return out;
}

// Spherical mean, so clusters straddling the antimeridian average correctly.
GeoPoint centroid(const std::vector<GeoPoint>& points) {
  constexpr double kRad = std::numbers::pi / 180.0;
  double x = 0, y = 0, z = 0;
  for (const auto& p : points) {
    const double lat = p.lat_deg() * kRad;
    const double lon = p.lon_deg() * kRad;
    x += std::cos(lat) * std::cos(lon);
    y += std::cos(lat) * std::sin(lon);
    z += std::sin(lat);
  }
  const double hyp = std::hypot(x, y);
  return {std::atan2(z, hyp) / kRad, std::atan2(y, x) / kRad};
}

std::string answer(const GeoPoint& p) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.6f, %.6f", p.lat_deg(), p.lon_deg());
  return buf;
}

}  // namespace

LmmResponse MockLmmClient::complete(const LmmRequest& request) {
  calls_.fetch_add(1);
  const auto key = std::make_pair(request.prompt_index, request.generation);
  int attempt = 0;
  {
    std::lock_guard lock(mutex_);
    attempt = attempts_[key]++;
  }
  if (config_.transport_failures.contains(key) ||
      (attempt == 0 && config_.transient_failures.contains(key))) {
    return {"", LmmStatus::kTransportError, "mock transport failure"};
  }
  if (config_.unparsable.contains(key)) return {"I cannot tell where this photo was taken.", {}, {}};

  const auto refs = similar_locations(request.prompt);
  if (refs.empty()) return {answer(config_.landmark), {}, {}};
  if (config_.mode == MockLmmConfig::Mode::kEchoFirstReference) return {answer(refs.front()), {}, {}};

  std::mt19937_64 rng(request.seed);
  std::normal_distribution<double> noise(0.0, config_.noise_km);
  const double north = noise(rng);
  const double east = noise(rng);
  return {answer(offset_km(centroid(refs), north, east)), {}, {}};
}

}  // namespace g3
