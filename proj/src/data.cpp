#include "g3/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "g3/binary_io.hpp"
#include "g3/errors.hpp"

namespace g3 {
namespace {

constexpr io::Magic kEmbeddingMagic{'G', '3', 'E', 'M'};

using OptionalField = std::optional<std::string> MetadataRecord::*;

const std::vector<std::pair<const char*, OptionalField>>& unit_fields() {
  static const std::vector<std::pair<const char*, OptionalField>> fields{
      {"neighbourhood", &MetadataRecord::neighbourhood},
      {"city", &MetadataRecord::city},
      {"county", &MetadataRecord::county},
      {"state", &MetadataRecord::state},
      {"region", &MetadataRecord::region},
      {"country", &MetadataRecord::country},
      {"country_code", &MetadataRecord::country_code},
      {"continent", &MetadataRecord::continent}};
  return fields;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<std::string> optional_value(const std::string& raw) {
  const std::string v = trim(raw);
  if (v.empty() || v == "NA") return std::nullopt;
  return v;
}

// RFC 4180 fields of one line: quoted fields may contain commas and "" for
// a literal quote. Embedded newlines are not supported.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw DataError("unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double parse_double(const std::string& raw, const char* what) {
  const std::string v = trim(raw);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw DataError(std::string("bad ") + what + " value '" + v + "'");
  }
  return out;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void finish(IngestResult& result, std::size_t data_rows) {
  if (data_rows == 0) throw DataError("metadata file has no data rows");
  if (static_cast<double>(result.errors.size()) >
      kMaxMalformedFraction * static_cast<double>(data_rows)) {
    std::string msg = std::to_string(result.errors.size()) + " of " + std::to_string(data_rows) +
                      " metadata rows are malformed";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, result.errors.size()); ++i) {
      msg += "; line " + std::to_string(result.errors[i].line) + ": " + result.errors[i].message;
    }
    throw DataError(msg);
  }
}

IngestResult parse_csv(std::istream& in) {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("metadata file is empty");
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string name = lower(trim(header[i]));
    if (name == "neighborhood") name = "neighbourhood";
    column.emplace(name, i);
  }
  for (const char* required : {"img_id", "lat", "lon"}) {
    if (!column.contains(required)) {
      throw DataError(std::string("metadata header lacks column ") + required);
    }
  }

  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++data_rows;
    try {
      const auto cells = split_csv_line(line);
      if (cells.size() != header.size()) {
        throw DataError("expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
      }
      MetadataRecord rec;
      rec.img_id = trim(cells[column["img_id"]]);
      if (rec.img_id.empty()) throw DataError("empty img_id");
      rec.point = GeoPoint(parse_double(cells[column["lat"]], "lat"),
                           parse_double(cells[column["lon"]], "lon"));
      for (const auto& [name, member] : unit_fields()) {
        const auto it = column.find(name);
        if (it != column.end()) rec.*member = optional_value(cells[it->second]);
      }
      result.records.push_back(std::move(rec));
    } catch (const DataError& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }
  finish(result, data_rows);
  return result;
}

std::optional<std::string> json_optional(const nlohmann::json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return optional_value(it->get<std::string>());
  return it->dump();
}

double json_number(const nlohmann::json& obj, const char* key, const char* alt) {
  auto it = obj.find(key);
  if (it == obj.end()) it = obj.find(alt);
  if (it == obj.end()) throw DataError(std::string("missing ") + key);
  if (it->is_number()) return it->get<double>();
  if (it->is_string()) return parse_double(it->get<std::string>(), key);
  throw DataError(std::string("bad ") + key + " value");
}

IngestResult parse_jsonl(std::istream& in) {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++data_rows;
    try {
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid JSON: ") + e.what());
      }
      if (!obj.is_object()) throw DataError("row is not a JSON object");
      MetadataRecord rec;
      auto id = json_optional(obj, "img_id");
      if (!id) id = json_optional(obj, "IMG_ID");
      if (!id) throw DataError("missing img_id");
      rec.img_id = *id;
      rec.point = GeoPoint(json_number(obj, "lat", "LAT"), json_number(obj, "lon", "LON"));
      for (const auto& [name, member] : unit_fields()) rec.*member = json_optional(obj, name);
      if (!rec.neighbourhood) rec.neighbourhood = json_optional(obj, "neighborhood");
      result.records.push_back(std::move(rec));
    } catch (const DataError& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }
  finish(result, data_rows);
  return result;
}

}  // namespace

MetadataFormat metadata_format_for(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : lower(path.substr(dot));
  return (ext == ".jsonl" || ext == ".json") ? MetadataFormat::kJsonl : MetadataFormat::kCsv;
}

IngestResult parse_metadata(std::istream& in, MetadataFormat format) {
  return format == MetadataFormat::kCsv ? parse_csv(in) : parse_jsonl(in);
}

IngestResult ingest_metadata(const std::string& path, MetadataFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metadata file: " + path);
  return parse_metadata(in, format);
}

void write_metadata_csv(std::ostream& out, std::span<const MetadataRecord> records) {
  out << "IMG_ID,LAT,LON";
  for (const auto& [name, member] : unit_fields()) out << ',' << name;
  out << '\n';
  for (const auto& r : records) {
    out << csv_escape(r.img_id) << ',' << shortest(r.point.lat_deg()) << ','
        << shortest(r.point.lon_deg());
    for (const auto& [name, member] : unit_fields()) {
      const auto& v = r.*member;
      out << ',' << (v ? csv_escape(*v) : std::string("NA"));
    }
    out << '\n';
  }
}

void write_metadata_csv(const std::string& path, std::span<const MetadataRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  write_metadata_csv(out, records);
}

void write_embeddings(std::ostream& out, const EmbeddingFile& file) {
  if (static_cast<std::size_t>(file.rows.rows()) != file.ids.size()) {
    throw UsageError("write_embeddings: id count does not match row count");
  }
  io::BinaryWriter w(out);
  w.magic(kEmbeddingMagic);
  w.u32(kEmbeddingFileVersion);
  w.u32(static_cast<std::uint32_t>(file.dim()));
  w.u64(file.size());
  for (std::size_t i = 0; i < file.size(); ++i) {
    w.str(file.ids[i]);
    w.f32s({file.rows.data() + i * file.dim(), file.dim()});
  }
  w.check();
}

void write_embeddings(const std::string& path, const EmbeddingFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_embeddings(out, file);
}

EmbeddingFile read_embeddings(std::istream& in) {
  io::BinaryReader r(in);
  r.expect_magic(kEmbeddingMagic);
  const auto version = r.u32();
  if (version != kEmbeddingFileVersion) {
    throw FormatError("embedding file: unsupported version " + std::to_string(version));
  }
  const std::size_t dim = r.u32();
  const std::uint64_t count = r.u64();
  if (dim == 0) throw FormatError("embedding file: zero dimension");
  if (count > (1ull << 32)) throw FormatError("embedding file: implausible row count");
  EmbeddingFile file;
  std::vector<float> data;
  std::vector<float> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    file.ids.push_back(r.str(4096));
    r.f32s(row);
    data.insert(data.end(), row.begin(), row.end());
  }
  if (!r.at_eof()) throw FormatError("embedding file: trailing bytes");
  file.rows = Eigen::Map<nn::Matrix<float>>(data.data(), static_cast<Eigen::Index>(count),
                                            static_cast<Eigen::Index>(dim));
  return file;
}

EmbeddingFile read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file: " + path);
  return read_embeddings(in);
}

nn::Matrix<float> rows_for(const EmbeddingFile& file, std::span<const MetadataRecord> records) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < file.ids.size(); ++i) row_of.emplace(file.ids[i], i);
  nn::Matrix<float> out(static_cast<Eigen::Index>(records.size()), file.rows.cols());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto it = row_of.find(records[i].img_id);
    if (it == row_of.end()) {
      throw DataError("no embedding for img_id '" + records[i].img_id + "'");
    }
    out.row(static_cast<Eigen::Index>(i)) = file.rows.row(static_cast<Eigen::Index>(it->second));
  }
  return out;
}

TriModalBatch<float> assemble_dataset(std::span<const MetadataRecord> records,
                                      const EmbeddingFile& image, const EmbeddingFile& text) {
  TriModalBatch<float> batch;
  batch.image = rows_for(image, records);
  batch.text = rows_for(text, records);
  for (const auto& r : records) batch.points.push_back(r.point);
  batch.validate();
  return batch;
}

}  // namespace g3
