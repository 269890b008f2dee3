#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "g3/vector_index.hpp"

namespace g3::test_support {

inline void normalize(std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += double(x) * x;
  const double inv = 1.0 / std::sqrt(s);
  for (float& x : v) x = static_cast<float>(x * inv);
}

inline std::vector<float> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (float& x : v) x = g(rng);
  normalize(v);
  return v;
}

// Unit vectors drawn around `n_modes` random directions.
struct Mixture {
  std::vector<std::vector<float>> modes;
  double spread;

  Mixture(std::size_t n_modes, std::size_t dim, double spread_, std::mt19937_64& rng)
      : spread(spread_) {
    for (std::size_t i = 0; i < n_modes; ++i) modes.push_back(random_unit(dim, rng));
  }

  std::vector<float> around(const std::vector<float>& center, double s, std::mt19937_64& rng) const {
    std::normal_distribution<double> g(0.0, s / std::sqrt(double(center.size())));
    std::vector<float> v(center);
    for (float& x : v) x = static_cast<float>(x + g(rng));
    normalize(v);
    return v;
  }

  std::vector<float> sample(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> m(0, modes.size() - 1);
    return around(modes[m(rng)], spread, rng);
  }
};

inline std::vector<IndexRecord> mixture_records(const Mixture& mix, std::size_t n,
                                                std::mt19937_64& rng, std::uint64_t first_id = 0) {
  std::uniform_real_distribution<double> lat(-80.0, 80.0), lon(-180.0, 180.0);
  std::vector<IndexRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({first_id + i, mix.sample(rng), GeoPoint(lat(rng), lon(rng)),
                   "record " + std::to_string(first_id + i)});
  }
  return out;
}

}  // namespace g3::test_support
