#include "g3/diversify.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <regex>
#include <sstream>
#include <thread>

#include "g3/errors.hpp"

namespace g3 {
namespace {

std::string format_point(const GeoPoint& p) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f, %.4f", p.lat_deg(), p.lon_deg());
  return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Slot {
  LmmResponse response;
  std::exception_ptr error;
};

}  // namespace

std::size_t PromptSet::retrieval_depth() const {
  std::size_t depth = s_retrieved;
  for (const auto& s : specs) depth = std::max(depth, s.n_pos);
  return depth;
}

void PromptSet::validate() const {
  if (specs.empty()) throw UsageError("PromptSet: need at least one prompt spec");
  if (n_generations < 1) throw UsageError("PromptSet: n_generations must be at least 1");
  if (!(temperature > 0.0)) throw UsageError("PromptSet: temperature must be positive");
}

std::vector<PromptSpec> parse_prompt_specs(std::string_view text) {
  std::vector<PromptSpec> out;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("prompt spec '" + item + "' is not pos:neg");
    try {
      std::size_t used = 0;
      const auto pos_text = item.substr(0, colon);
      const auto neg_text = item.substr(colon + 1);
      const long pos = std::stol(pos_text, &used);
      if (used != pos_text.size()) throw std::invalid_argument(pos_text);
      const long neg = std::stol(neg_text, &used);
      if (used != neg_text.size()) throw std::invalid_argument(neg_text);
      if (pos < 0 || neg < 0) throw UsageError("prompt spec counts must be non-negative");
      out.push_back({static_cast<std::size_t>(pos), static_cast<std::size_t>(neg)});
    } catch (const std::logic_error&) {
      throw UsageError("prompt spec '" + item + "' is not pos:neg");
    }
  }
  if (out.empty()) throw UsageError("empty prompt spec list");
  return out;
}

std::string format_prompt_specs(std::span<const PromptSpec> specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += ',';
    out += std::to_string(s.n_pos) + ':' + std::to_string(s.n_neg);
  }
  return out;
}

References select_references(const RetrievalContext& context, const PromptSpec& spec) {
  References refs;
  if (spec.zero_shot()) return refs;
  if (context.hits.size() < spec.n_pos) {
    throw UsageError("select_references: " + std::to_string(context.hits.size()) +
                     " retrieved hits for " + std::to_string(spec.n_pos) + " positives");
  }
  std::vector<std::uint64_t> positive_ids;
  for (std::size_t i = 0; i < spec.n_pos; ++i) {
    refs.positives.push_back(context.hits[i].point);
    refs.positive_scores.push_back(context.hits[i].score);
    positive_ids.push_back(context.hits[i].id);
  }
  if (spec.n_neg > 0) {
    if (context.store == nullptr) throw UsageError("select_references: no store for negatives");
    const auto lows = context.store->lowest_similarity(context.query, spec.n_neg,
                                                       kNegativeSampleSize, context.seed,
                                                       positive_ids);
    for (const auto& hit : lows) {
      refs.negatives.push_back(context.store->point_of(hit.id));
      refs.negative_scores.push_back(hit.score);
    }
  }
  return refs;
}

std::string render_prompt(const PromptSpec& spec, std::span<const GeoPoint> positives,
                          std::span<const GeoPoint> negatives) {
  if (positives.size() != spec.n_pos || negatives.size() != spec.n_neg) {
    throw UsageError("render_prompt: reference counts do not match the prompt spec");
  }
  std::string out =
      "You are an expert in worldwide image geolocalization. "
      "Estimate the GPS coordinates where the attached photo was taken.\n";
  if (!positives.empty()) {
    out += "Similar locations:\n";
    for (const auto& p : positives) out += format_point(p) + "\n";
  }
  if (!negatives.empty()) {
    out += "Dissimilar locations:\n";
    for (const auto& p : negatives) out += format_point(p) + "\n";
  }
  out += "Answer only: latitude, longitude\n";
  return out;
}

GeoPoint parse_coordinates(std::string_view text) {
  // Signed decimal, optionally followed by a degree sign and a hemisphere letter.
  static const std::regex kNumber(
      R"(([-+]?\d+(?:\.\d+)?)(?:\s*(?:\xC2\xB0)?\s*([NSEWnsew])(?![A-Za-z]))?)");
  std::vector<double> values;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kNumber); it != std::sregex_iterator();
       ++it) {
    double v = std::stod((*it)[1].str());
    if ((*it)[2].matched) {
      const char h = static_cast<char>(std::toupper(static_cast<unsigned char>((*it)[2].str()[0])));
      if (h == 'S' || h == 'W') v = -std::abs(v);
    }
    values.push_back(v);
  }
  if (values.size() < 2) throw ParseError("no coordinate pair in: " + s.substr(0, 200));
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    const double lat = values[i];
    const double lon = values[i + 1];
    if (lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0) return {lat, lon};
  }
  throw RangeError("coordinate pair out of range in: " + s.substr(0, 200));
}

std::string Provenance::label() const {
  if (origin == Origin::kRetrieved) return "retrieved(" + std::to_string(rank) + ")";
  return "generated(" + std::to_string(prompt) + "," + std::to_string(generation) + ")";
}

std::size_t CandidatePool::count(Origin origin) const {
  return static_cast<std::size_t>(std::count_if(
      candidates.begin(), candidates.end(),
      [origin](const Candidate& c) { return c.provenance.origin == origin; }));
}

std::vector<GeoPoint> CandidatePool::points() const {
  std::vector<GeoPoint> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(c.point);
  return out;
}

std::uint64_t request_seed(std::uint64_t seed, std::size_t prompt, std::size_t generation) {
  return splitmix64(splitmix64(seed) ^ splitmix64((static_cast<std::uint64_t>(prompt) << 32) |
                                                  static_cast<std::uint64_t>(generation)));
}

CandidatePool generate_candidates(LmmClient& client, const PromptSet& prompt_set,
                                  const RetrievalContext& context,
                                  const GenerationOptions& options) {
  prompt_set.validate();
  if (context.hits.size() < prompt_set.s_retrieved) {
    throw UsageError("generate_candidates: fewer retrieved hits than S");
  }
  const std::size_t k_prompts = prompt_set.specs.size();
  const std::size_t n_gen = prompt_set.n_generations;

  std::vector<std::string> prompts;
  prompts.reserve(k_prompts);
  for (const auto& spec : prompt_set.specs) {
    const auto refs = select_references(context, spec);
    prompts.push_back(render_prompt(spec, refs.positives, refs.negatives));
  }

  const std::size_t total = k_prompts * n_gen;
  std::vector<Slot> slots(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < total; i = next.fetch_add(1)) {
      const std::size_t k = i / n_gen;
      const std::size_t j = i % n_gen;
      LmmRequest req;
      req.prompt = prompts[k];
      req.image_ref = options.image_ref;
      req.image_bytes = options.image_bytes;
      req.temperature = prompt_set.temperature;
      req.seed = request_seed(options.seed, k, j);
      req.prompt_index = k;
      req.generation = j;
      try {
        LmmResponse resp;
        for (int attempt = 0; attempt <= options.transport_retries; ++attempt) {
          resp = client.complete(req);
          if (resp.status == LmmStatus::kOk) break;
        }
        if (resp.status != LmmStatus::kOk) {
          throw TransportError("LMM request (" + std::to_string(k) + "," + std::to_string(j) +
                               ") failed: " + resp.error);
        }
        slots[i].response = std::move(resp);
      } catch (...) {
        slots[i].error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(options.parallelism, 1, total);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  }

  CandidatePool pool;
  for (std::size_t i = 0; i < total; ++i) {
    if (slots[i].error) std::rethrow_exception(slots[i].error);
    const std::size_t k = i / n_gen;
    const std::size_t j = i % n_gen;
    try {
      pool.candidates.push_back(
          {parse_coordinates(slots[i].response.text), {Origin::kGenerated, k, j, 0}});
    } catch (const DataError& e) {
      pool.drops.push_back({k, j, e.what(), slots[i].response.text});
    }
  }
  for (std::size_t r = 0; r < prompt_set.s_retrieved; ++r) {
    pool.candidates.push_back({context.hits[r].point, {Origin::kRetrieved, 0, 0, r + 1}});
  }
  return pool;
}

}  // namespace g3
