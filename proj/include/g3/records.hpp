#pragma once

#include <optional>
#include <string>

#include "g3/geodesy.hpp"

namespace g3 {

// One image's location metadata with the eight reverse-geocoded unit
// levels. Absent levels ("NA" in the source files) are nullopt.
struct MetadataRecord {
  std::string img_id;
  GeoPoint point;
  std::optional<std::string> neighbourhood;
  std::optional<std::string> city;
  std::optional<std::string> county;
  std::optional<std::string> state;
  std::optional<std::string> region;
  std::optional<std::string> country;
  std::optional<std::string> country_code;
  std::optional<std::string> continent;
};

}  // namespace g3
