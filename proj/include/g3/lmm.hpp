#pragma once

// Large multimodal model clients. Implementations must be safe to call from
// several threads at once; generate_candidates issues requests concurrently.

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <utility>

#include "g3/geodesy.hpp"

namespace g3 {

inline constexpr double kDefaultLmmTemperature = 1.2;

struct LmmRequest {
  std::string prompt;
  std::string image_ref;    // path or id of the query image
  std::string image_bytes;  // raw encoded image; read from image_ref when empty
  std::string image_mime = "image/jpeg";
  double temperature = kDefaultLmmTemperature;
  std::uint64_t seed = 0;  // used by the mock only
  // Position in the prompt ensemble; never sent over the wire.
  std::size_t prompt_index = 0;
  std::size_t generation = 0;
};

enum class LmmStatus { kOk, kTransportError };

struct LmmResponse {
  std::string text;
  LmmStatus status = LmmStatus::kOk;
  std::string error;
};

class LmmClient {
 public:
  virtual ~LmmClient() = default;
  virtual LmmResponse complete(const LmmRequest& request) = 0;
};

// Deterministic stand-in for a hosted model. Reads the "Similar locations"
// block of the prompt back out and answers from it.
struct MockLmmConfig {
  enum class Mode {
    kCentroidNoise,      // centroid of the positives plus Gaussian noise
    kEchoFirstReference  // the first positive reference verbatim
  };
  Mode mode = Mode::kCentroidNoise;
  double noise_km = 50.0;  // std dev of the north/east offsets
  // Answer for prompts without positive references.
  GeoPoint landmark{48.8584, 2.2945};
  // (prompt_index, generation) pairs answered with text holding no coordinates.
  std::set<std::pair<std::size_t, std::size_t>> unparsable;
  // Pairs whose every attempt fails at the transport level.
  std::set<std::pair<std::size_t, std::size_t>> transport_failures;
  // Pairs whose first attempt fails at the transport level.
  std::set<std::pair<std::size_t, std::size_t>> transient_failures;
};

class MockLmmClient : public LmmClient {
 public:
  explicit MockLmmClient(MockLmmConfig config = {}) : config_(std::move(config)) {}

  LmmResponse complete(const LmmRequest& request) override;

  std::size_t call_count() const { return calls_.load(); }
  const MockLmmConfig& config() const { return config_; }

 private:
  MockLmmConfig config_;
  std::atomic<std::size_t> calls_{0};
  std::mutex mutex_;
  std::map<std::pair<std::size_t, std::size_t>, int> attempts_;
};

// Chat-completion style HTTP endpoint. The bearer token is read from the
// environment variable named by api_key_env at construction.
struct HttpLmmConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4-vision-preview";
  std::string api_key_env = "G3_LMM_API_KEY";
  int connect_timeout_s = 10;
  int read_timeout_s = 120;
};

class HttpLmmClient : public LmmClient {
 public:
  explicit HttpLmmClient(HttpLmmConfig config);

  LmmResponse complete(const LmmRequest& request) override;

  // Request body as sent on the wire.
  std::string build_body(const LmmRequest& request) const;

 private:
  HttpLmmConfig config_;
  std::string api_key_;
};

// Text of the first choice of a chat-completion response body. Throws
// DataError if the body does not have that shape.
std::string extract_completion_text(const std::string& body);

std::string base64_encode(std::string_view bytes);

}  // namespace g3
