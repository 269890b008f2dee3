#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <iterator>

#include "g3/errors.hpp"
#include "g3/lmm.hpp"

namespace g3 {

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string extract_completion_text(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    // Some servers answer with content parts.
    std::string text;
    for (const auto& part : content) {
      if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
    }
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed completion response: ") + e.what());
  }
}

HttpLmmClient::HttpLmmClient(HttpLmmConfig config) : config_(std::move(config)) {
  if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

std::string HttpLmmClient::build_body(const LmmRequest& request) const {
  std::string image = request.image_bytes;
  if (image.empty() && !request.image_ref.empty()) {
    std::ifstream in(request.image_ref, std::ios::binary);
    if (in) image.assign(std::istreambuf_iterator<char>(in), {});
  }
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", request.prompt}});
  if (!image.empty()) {
    content.push_back(
        {{"type", "image_url"},
         {"image_url", {{"url", "data:" + request.image_mime + ";base64," + base64_encode(image)}}}});
  }
  nlohmann::json body{{"model", config_.model},
                      {"temperature", request.temperature},
                      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
  return body.dump();
}

LmmResponse HttpLmmClient::complete(const LmmRequest& request) {
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.connect_timeout_s, 0);
  client.set_read_timeout(config_.read_timeout_s, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto res = client.Post(config_.path, headers, build_body(request), "application/json");
  if (!res) {
    return {"", LmmStatus::kTransportError, "HTTP error: " + httplib::to_string(res.error())};
  }
  if (res->status < 200 || res->status >= 300) {
    return {"", LmmStatus::kTransportError, "HTTP status " + std::to_string(res->status)};
  }
  try {
    return {extract_completion_text(res->body), LmmStatus::kOk, {}};
  } catch (const DataError& e) {
    // A malformed body is treated like an unparsable answer, not a transport failure.
    return {res->body, LmmStatus::kOk, e.what()};
  }
}

}  // namespace g3
