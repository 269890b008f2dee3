#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "g3/data.hpp"
#include "g3/errors.hpp"

using namespace g3;

namespace {

const std::string kFixtureDir = G3_TEST_DATA_DIR "/golden/embed_extract";

const char* kHeader =
    "IMG_ID,LAT,LON,neighbourhood,city,county,state,region,country,country_code,continent\n";
const char* kSolothurn =
    "4f/a0/3963216890.jpg,47.217578,7.542092,Wengistein,Solothurn,Amtei Solothurn-Lebern,"
    "Solothurn,NA,Switzerland,ch,NA\n";

IngestResult parse_csv(const std::string& text) {
  std::istringstream in(text);
  return parse_metadata(in, MetadataFormat::kCsv);
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

float fixture_value(int row, int col, int salt) {
  return static_cast<float>(((col * 7 + row * 3 + salt) % 17 - 8) / 64.0);
}

}  // namespace

TEST(Metadata, SolothurnRowRoundTrips) {
  const auto r = parse_csv(std::string(kHeader) + kSolothurn);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_TRUE(r.errors.empty());
  const auto& rec = r.records[0];
  EXPECT_EQ(rec.img_id, "4f/a0/3963216890.jpg");
  EXPECT_EQ(rec.point.lat_deg(), 47.217578);
  EXPECT_EQ(rec.point.lon_deg(), 7.542092);
  EXPECT_EQ(rec.neighbourhood, "Wengistein");
  EXPECT_EQ(rec.county, "Amtei Solothurn-Lebern");
  EXPECT_EQ(rec.country_code, "ch");
  EXPECT_FALSE(rec.region.has_value());
  EXPECT_FALSE(rec.continent.has_value());

  std::stringstream out;
  write_metadata_csv(out, r.records);
  EXPECT_EQ(out.str(), std::string(kHeader) + kSolothurn);
  const auto again = parse_metadata(out, MetadataFormat::kCsv);
  EXPECT_EQ(again.records[0].point.lat_deg(), 47.217578);
}

TEST(Metadata, QuotedFieldsAndHeaderCase) {
  const auto r = parse_csv("img_id,lat,lon,city\n\"a,1\",1.5,2.5,\"Say \"\"hi\"\"\"\n");
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].img_id, "a,1");
  EXPECT_EQ(r.records[0].city, "Say \"hi\"");
  EXPECT_FALSE(r.records[0].country.has_value());
  std::stringstream out;
  write_metadata_csv(out, r.records);
  EXPECT_EQ(parse_metadata(out, MetadataFormat::kCsv).records[0].city, "Say \"hi\"");
}

TEST(Metadata, OutOfRangeRowIsSkippedAndReported) {
  std::string text = kHeader;
  for (int i = 0; i < 10; ++i) text += "id" + std::to_string(i) + ",10,20,NA,NA,NA,NA,NA,NA,NA,NA\n";
  text += "bad,95,20,NA,NA,NA,NA,NA,NA,NA,NA\n";
  const auto r = parse_csv(text);
  EXPECT_EQ(r.records.size(), 10u);
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_EQ(r.errors[0].line, 12u);
  EXPECT_NE(r.errors[0].message.find("latitude"), std::string::npos);
}

TEST(Metadata, HardErrors) {
  EXPECT_THROW(parse_csv(""), DataError);
  EXPECT_THROW(parse_csv(kHeader), DataError);
  EXPECT_THROW(parse_csv("IMG_ID,LAT\nx,1\n"), DataError);
  // 2 of 11 rows malformed is over the limit.
  std::string text = kHeader;
  for (int i = 0; i < 9; ++i) text += "id" + std::to_string(i) + ",10,20,NA,NA,NA,NA,NA,NA,NA,NA\n";
  text += "x,abc,20,NA,NA,NA,NA,NA,NA,NA,NA\ny,1,2,too,few\n";
  EXPECT_THROW(parse_csv(text), DataError);
  EXPECT_THROW(ingest_metadata("/nonexistent/meta.csv", MetadataFormat::kCsv), DataError);
}

TEST(Metadata, ExactlyTenPercentMalformedIsAccepted) {
  std::string text = kHeader;
  for (int i = 0; i < 9; ++i) text += "id" + std::to_string(i) + ",10,20,NA,NA,NA,NA,NA,NA,NA,NA\n";
  text += "x,abc,20,NA,NA,NA,NA,NA,NA,NA,NA\n";
  const auto r = parse_csv(text);
  EXPECT_EQ(r.records.size(), 9u);
  EXPECT_EQ(r.errors.size(), 1u);
}

TEST(Metadata, JsonLines) {
  std::istringstream in(
      R"({"img_id": "a", "lat": 47.217578, "lon": 7.542092, "city": "Solothurn", "region": "NA"})" "\n"
      "\n"
      R"({"IMG_ID": "b", "LAT": "39.950477", "LON": "-75.157535", "neighborhood": "Center City"})" "\n"
      R"({"img_id": "c", "lat": 100, "lon": 0})" "\n"
      R"(not json)" "\n");
  // 2 of 4 malformed: over the limit.
  EXPECT_THROW(parse_metadata(in, MetadataFormat::kJsonl), DataError);

  std::string ok;
  for (int i = 0; i < 9; ++i) ok += R"({"img_id": "x)" + std::to_string(i) + R"(", "lat": 1, "lon": 2})" "\n";
  ok += R"({"IMG_ID": "b", "LAT": "39.950477", "LON": "-75.157535", "neighborhood": "Center City", "region": "NA"})" "\n";
  ok += "[1, 2]\n";
  std::istringstream in2(ok);
  const auto r = parse_metadata(in2, MetadataFormat::kJsonl);
  ASSERT_EQ(r.records.size(), 10u);
  EXPECT_EQ(r.records[9].neighbourhood, "Center City");
  EXPECT_EQ(r.records[9].point.lon_deg(), -75.157535);
  EXPECT_FALSE(r.records[9].region.has_value());
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_EQ(r.errors[0].line, 11u);
}

TEST(Metadata, FormatFromExtension) {
  EXPECT_EQ(metadata_format_for("a/b.jsonl"), MetadataFormat::kJsonl);
  EXPECT_EQ(metadata_format_for("B.JSON"), MetadataFormat::kJsonl);
  EXPECT_EQ(metadata_format_for("x.csv"), MetadataFormat::kCsv);
  EXPECT_EQ(metadata_format_for("noext"), MetadataFormat::kCsv);
}

TEST(Embeddings, RoundTrip) {
  EmbeddingFile f;
  f.ids = {"a", "bé", ""};
  f.rows = nn::Matrix<float>::Random(3, 5);
  std::stringstream buf;
  write_embeddings(buf, f);
  EXPECT_EQ(buf.str().size(), 4u + 4 + 4 + 8 + (4 + 1) + (4 + 3) + 4 + 3 * 5 * 4);
  const auto back = read_embeddings(buf);
  EXPECT_EQ(back.ids, f.ids);
  EXPECT_EQ(back.rows, f.rows);
}

TEST(Embeddings, CorruptFiles) {
  EmbeddingFile f;
  f.ids = {"a", "b"};
  f.rows = nn::Matrix<float>::Ones(2, 4);
  std::stringstream buf;
  write_embeddings(buf, f);
  const std::string bytes = buf.str();
  for (std::size_t cut : {std::size_t(2), std::size_t(10), bytes.size() - 1}) {
    std::stringstream s(bytes.substr(0, cut));
    EXPECT_THROW(read_embeddings(s), FormatError) << cut;
  }
  std::stringstream trailing(bytes + '\0');
  EXPECT_THROW(read_embeddings(trailing), FormatError);
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  std::stringstream v(wrong_version);
  EXPECT_THROW(read_embeddings(v), FormatError);
  f.ids.pop_back();
  EXPECT_THROW(write_embeddings(buf, f), UsageError);
}

TEST(Embeddings, RowsFollowMetadataOrder) {
  EmbeddingFile f;
  f.ids = {"x", "y"};
  f.rows.resize(2, 1);
  f.rows << 1.0f, 2.0f;
  std::vector<MetadataRecord> recs(2);
  recs[0].img_id = "y";
  recs[1].img_id = "x";
  const auto m = rows_for(f, recs);
  EXPECT_EQ(m(0, 0), 2.0f);
  EXPECT_EQ(m(1, 0), 1.0f);
  recs[1].img_id = "z";
  EXPECT_THROW(rows_for(f, recs), DataError);
}

TEST(EmbedExtractContract, FixtureIngestsCleanly) {
  const auto meta = ingest_metadata(kFixtureDir + "/metadata.csv", MetadataFormat::kCsv);
  ASSERT_EQ(meta.records.size(), 3u);
  EXPECT_TRUE(meta.errors.empty());
  EXPECT_EQ(meta.records[1].city, "Philadelphia");
  EXPECT_FALSE(meta.records[2].county.has_value());

  const auto image = read_embeddings(kFixtureDir + "/image.g3em");
  const auto text = read_embeddings(kFixtureDir + "/text.g3em");
  EXPECT_EQ(image.dim(), 768u);
  EXPECT_EQ(image.size(), 3u);
  EXPECT_EQ(text.ids.front(), "4b/5c/8178901047.jpg");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 768; c += 97) EXPECT_EQ(image.rows(r, c), fixture_value(r, c, 0));

  const auto batch = assemble_dataset(meta.records, image, text);
  EXPECT_EQ(batch.image.rows(), 3);
  EXPECT_EQ(batch.text(0, 0), fixture_value(2, 0, 5));
  EXPECT_EQ(batch.points[0], GeoPoint(47.217578, 7.542092));
}

TEST(EmbedExtractContract, RewriteIsByteIdentical) {
  const auto path = kFixtureDir + "/image.g3em";
  std::stringstream out;
  write_embeddings(out, read_embeddings(path));
  EXPECT_EQ(out.str(), file_bytes(path));

  const auto meta = ingest_metadata(kFixtureDir + "/metadata.csv", MetadataFormat::kCsv);
  std::stringstream csv;
  write_metadata_csv(csv, meta.records);
  EXPECT_EQ(csv.str(), file_bytes(kFixtureDir + "/metadata.csv"));
}
