#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "g3/alignment.hpp"
#include "g3/nn.hpp"
#include "g3/records.hpp"

namespace g3 {

// ---- metadata ---------------------------------------------------------------

enum class MetadataFormat { kCsv, kJsonl };

// Rows with more than this fraction malformed fail the whole file.
inline constexpr double kMaxMalformedFraction = 0.10;

struct RowError {
  std::size_t line = 0;  // 1-based line in the source file
  std::string message;
};

struct IngestResult {
  std::vector<MetadataRecord> records;
  std::vector<RowError> errors;
};

// ".jsonl" / ".json" -> JSON lines, anything else -> CSV.
MetadataFormat metadata_format_for(const std::string& path);

// CSV needs a header naming at least IMG_ID, LAT and LON (any case); the
// eight unit-level columns are optional. "NA" and empty cells are missing.
// Malformed rows are skipped and reported; DataError if there are no data
// rows or more than kMaxMalformedFraction of them are malformed.
IngestResult parse_metadata(std::istream& in, MetadataFormat format);
IngestResult ingest_metadata(const std::string& path, MetadataFormat format);

void write_metadata_csv(std::ostream& out, std::span<const MetadataRecord> records);
void write_metadata_csv(const std::string& path, std::span<const MetadataRecord> records);

// ---- "G3EM" embedding files --------------------------------------------------
//
// magic "G3EM" | version u32 | dim u32 | count u64 |
// per row: id (u32 len + UTF-8), f32 x dim little-endian.

inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

struct EmbeddingFile {
  std::vector<std::string> ids;
  nn::Matrix<float> rows;  // count x dim

  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
  std::size_t size() const { return ids.size(); }
};

void write_embeddings(std::ostream& out, const EmbeddingFile& file);
void write_embeddings(const std::string& path, const EmbeddingFile& file);
EmbeddingFile read_embeddings(std::istream& in);
EmbeddingFile read_embeddings(const std::string& path);

// Rows of `file` reordered to follow `records` by img_id. DataError when an
// id is missing.
nn::Matrix<float> rows_for(const EmbeddingFile& file, std::span<const MetadataRecord> records);

TriModalBatch<float> assemble_dataset(std::span<const MetadataRecord> records,
                                      const EmbeddingFile& image, const EmbeddingFile& text);

}  // namespace g3
