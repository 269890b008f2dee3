// g3: command-line driver for the geolocalization pipeline.
//
//   g3 synth             write a synthetic world (metadata + embeddings)
//   g3 train             fit the alignment heads and GPS encoder
//   g3 build-index       vectorize a database and persist the index
//   g3 predict           retrieve, diversify and verify for a query set
//   g3 evaluate          threshold accuracy of a predictions file
//   g3 compare-retrieval distance statistics of raw vs aligned retrieval
//
// Exit codes: 0 success, 1 usage, 2 data, 3 transport.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "g3/data.hpp"
#include "g3/errors.hpp"
#include "g3/pipeline.hpp"
#include "g3/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kTransport = 3 };

// Option text as a JSON scalar: numbers and booleans keep their type.
json typed(const std::string& s) {
  if (s == "true" || s == "false") return s == "true";
  if (!s.empty() && s.find_first_not_of("+-0123456789.eE") == std::string::npos) {
    const json j = json::parse(s, nullptr, false);
    if (j.is_number()) return j;
  }
  return s;
}

// Effective value of every option of a subcommand, defaults included.
json options_json(const CLI::App& sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    const bool flag = opt->get_expected_min() == 0;
    if (flag) {
      out[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto res = opt->reduced_results();
      if (res.size() == 1) {
        out[name] = typed(res.front());
      } else {
        json arr = json::array();
        for (const auto& r : res) arr.push_back(typed(r));
        out[name] = arr;
      }
    } else {
      out[name] = typed(opt->get_default_str());
    }
  }
  return out;
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw g3::DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json report_json(const g3::ThresholdReport& r) {
  return {{"thresholds_km", g3::ThresholdReport::kThresholdsKm},
          {"fractions", r.fractions},
          {"n_samples", r.n_samples}};
}

g3::EmbeddingFile embedding_file(const g3::WorldSplit& split, bool image) {
  g3::EmbeddingFile f;
  for (const auto& r : split.metadata) f.ids.push_back(r.img_id);
  f.rows = image ? split.image : split.text;
  return f;
}

std::vector<g3::MetadataRecord> load_records(const std::string& path) {
  auto result = g3::ingest_metadata(path, g3::metadata_format_for(path));
  for (const auto& e : result.errors) {
    std::cerr << path << ':' << e.line << ": skipped: " << e.message << '\n';
  }
  return std::move(result.records);
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  g3::SyntheticWorldConfig world;
  std::string out_dir;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  app.add_option("--out-dir", a.out_dir, "Output directory")->required();
  app.add_option("--seed", a.world.seed, "World seed");
  app.add_option("--n-clusters", a.world.n_clusters);
  app.add_option("--points-per-cluster", a.world.points_per_cluster);
  app.add_option("--queries-per-cluster", a.world.queries_per_cluster);
  app.add_option("--noise-sigma", a.world.embedding_noise_sigma);
  app.add_option("--cluster-radius-km", a.world.cluster_radius_km);
  app.add_option("--image-dim", a.world.image_dim);
  app.add_option("--text-dim", a.world.text_dim);
  app.add_option("--own-signature-weight", a.world.own_signature_weight);
  app.add_option("--field-fraction", a.world.field_fraction);
  app.add_option("--min-center-separation-km", a.world.min_center_separation_km);
}

int run_synth(const SynthArgs& a, const CLI::App& sub) {
  const auto world = g3::synthesize_world(a.world);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  g3::write_metadata_csv((dir / "database.csv").string(), world.database.metadata);
  g3::write_metadata_csv((dir / "queries.csv").string(), world.queries.metadata);
  g3::write_embeddings((dir / "database_image.g3em").string(), embedding_file(world.database, true));
  g3::write_embeddings((dir / "database_text.g3em").string(), embedding_file(world.database, false));
  g3::write_embeddings((dir / "queries_image.g3em").string(), embedding_file(world.queries, true));
  json centers = json::array();
  for (const auto& c : world.centers) centers.push_back({c.lat_deg(), c.lon_deg()});
  write_json((dir / "world.json").string(), {{"config", options_json(sub)}, {"centers", centers}});
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  g3::TrainConfig config;
  std::string metadata, image, text, out, log;
  std::string reduction = "sum";
  std::string projection = "mercator";
};

void add_projection(CLI::App& app, std::string& projection) {
  app.add_option("--projection", projection, "GPS projection")
      ->check(CLI::IsMember({"mercator", "equal-earth"}));
}

g3::Projection projection_of(const std::string& s) {
  return s == "equal-earth" ? g3::Projection::kEqualEarth : g3::Projection::kMercator;
}

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--metadata", a.metadata, "Database metadata (CSV or JSONL)")->required();
  app.add_option("--image", a.image, "Image embeddings (G3EM)")->required();
  app.add_option("--text", a.text, "Text embeddings (G3EM)")->required();
  app.add_option("--out", a.out, "Model checkpoint to write")->required();
  app.add_option("--log", a.log, "Training log (JSON lines); stdout when omitted");
  auto& c = a.config;
  app.add_option("--seed", c.seed);
  app.add_option("--batch-size", c.batch_size);
  app.add_option("--lr", c.lr);
  app.add_option("--weight-decay", c.weight_decay);
  app.add_option("--epochs", c.epochs);
  app.add_option("--gamma", c.gamma);
  app.add_option("--t-init", c.t_init);
  app.add_option("--reduction", a.reduction)->check(CLI::IsMember({"sum", "mean"}));
  app.add_option("--hidden", c.dims.hidden);
  app.add_option("--text-space", c.dims.text_space);
  app.add_option("--gps-space", c.dims.gps_space);
  app.add_option("--gps-hidden", c.dims.gps_hidden);
  app.add_option("--rff-rows", c.dims.gps_rff_rows);
  app.add_option("--hierarchies", c.hierarchy.n_hierarchies);
  app.add_option("--sigma-min", c.hierarchy.sigma_min);
  app.add_option("--sigma-max", c.hierarchy.sigma_max);
  add_projection(app, a.projection);
}

int run_train(TrainArgs& a) {
  const auto records = load_records(a.metadata);
  const auto image = g3::read_embeddings(a.image);
  const auto text = g3::read_embeddings(a.text);
  auto& c = a.config;
  c.dims.image = static_cast<int>(image.dim());
  c.dims.text = static_cast<int>(text.dim());
  c.reduction = a.reduction == "mean" ? g3::Reduction::kMean : g3::Reduction::kSum;
  c.projection = projection_of(a.projection);
  const auto dataset = g3::assemble_dataset(records, image, text);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw g3::DataError("cannot write " + a.log);
    log = &log_file;
  }
  const auto result = g3::train(dataset, c, [&](const g3::EpochLog& e) {
    *log << json{{"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss}}.dump() << '\n';
    log->flush();
  });
  g3::save_model(a.out, result.model);
  return kOk;
}

// ---- build-index -------------------------------------------------------------

struct IndexArgs {
  std::string metadata, image, model, out;
  g3::IvfParams ivf{0, 25, 0, 1};
};

void add_index(CLI::App& app, IndexArgs& a) {
  app.add_option("--metadata", a.metadata)->required();
  app.add_option("--image", a.image)->required();
  app.add_option("--model", a.model)->required();
  app.add_option("--out", a.out)->required();
  app.add_option("--ivf-clusters", a.ivf.n_clusters, "0 keeps the index flat");
  app.add_option("--kmeans-iters", a.ivf.kmeans_iters);
  app.add_option("--nprobe", a.ivf.nprobe);
  app.add_option("--seed", a.ivf.seed);
}

int run_index(const IndexArgs& a) {
  const auto records = load_records(a.metadata);
  const auto image = g3::read_embeddings(a.image);
  const auto model = g3::load_model(a.model);
  const auto vectors = g3::vectorize_images(g3::rows_for(image, records), model);
  auto index = g3::build_index(records, vectors);
  if (a.ivf.n_clusters > 0) index.build_ivf(a.ivf);
  index.save(a.out);
  return kOk;
}

// ---- predict -----------------------------------------------------------------

struct PredictArgs {
  std::string queries, image, model, index, out, report, image_dir;
  std::string prompts = "0:0,5:5,10:10,15:15";
  g3::PipelineConfig pipeline;
  std::string client = "mock";
  std::string mock_mode = "centroid";
  double mock_noise_km = 50.0;
  g3::HttpLmmConfig http;
};

void add_predict(CLI::App& app, PredictArgs& a) {
  app.add_option("--queries", a.queries, "Query metadata (CSV or JSONL)")->required();
  app.add_option("--image", a.image, "Query image embeddings (G3EM)")->required();
  app.add_option("--model", a.model)->required();
  app.add_option("--index", a.index)->required();
  app.add_option("--out", a.out, "Predictions (JSON lines); stdout when omitted");
  app.add_option("--report", a.report, "Threshold report (JSON)");
  app.add_option("--image-dir", a.image_dir, "Directory holding <img_id> image files");
  app.add_option("--prompts", a.prompts, "Prompt specs n_pos:n_neg,...");
  app.add_option("--n-generations", a.pipeline.prompts.n_generations);
  app.add_option("--s-retrieved", a.pipeline.prompts.s_retrieved);
  app.add_option("--temperature", a.pipeline.prompts.temperature);
  app.add_option("--parallelism", a.pipeline.generation_parallelism);
  app.add_option("--retries", a.pipeline.transport_retries);
  app.add_option("--seed", a.pipeline.seed);
  app.add_flag("--exclude-failed", a.pipeline.exclude_failed);
  app.add_option("--client", a.client)->check(CLI::IsMember({"mock", "http"}));
  app.add_option("--mock-mode", a.mock_mode)->check(CLI::IsMember({"centroid", "echo"}));
  app.add_option("--mock-noise-km", a.mock_noise_km);
  app.add_option("--base-url", a.http.base_url);
  app.add_option("--path", a.http.path);
  app.add_option("--model-name", a.http.model);
  app.add_option("--api-key-env", a.http.api_key_env);
  app.add_option("--connect-timeout", a.http.connect_timeout_s);
  app.add_option("--read-timeout", a.http.read_timeout_s);
}

int run_predict(PredictArgs& a, const CLI::App& sub) {
  a.pipeline.prompts.specs = g3::parse_prompt_specs(a.prompts);
  a.pipeline.prompts.validate();
  const auto records = load_records(a.queries);
  const auto image = g3::read_embeddings(a.image);
  const auto model = g3::load_model(a.model);
  const auto index = g3::VectorIndex::load(a.index);

  g3::QuerySet queries;
  queries.image = g3::rows_for(image, records);
  for (const auto& r : records) {
    queries.ids.push_back(r.img_id);
    queries.truths.push_back(r.point);
    if (!a.image_dir.empty()) queries.image_refs.push_back((fs::path(a.image_dir) / r.img_id).string());
  }

  std::unique_ptr<g3::LmmClient> client;
  if (a.client == "http") {
    client = std::make_unique<g3::HttpLmmClient>(a.http);
  } else {
    g3::MockLmmConfig mc;
    mc.mode = a.mock_mode == "echo" ? g3::MockLmmConfig::Mode::kEchoFirstReference
                                    : g3::MockLmmConfig::Mode::kCentroidNoise;
    mc.noise_km = a.mock_noise_km;
    client = std::make_unique<g3::MockLmmClient>(mc);
  }

  const auto result = g3::run_pipeline(queries, model, index, *client, a.pipeline);

  std::ofstream out_file;
  std::ostream* out = &std::cout;
  if (!a.out.empty()) {
    out_file.open(a.out);
    if (!out_file) throw g3::DataError("cannot write " + a.out);
    out = &out_file;
  }
  bool transport_failure = false;
  for (const auto& p : result.predictions) {
    *out << g3::prediction_json(p).dump() << '\n';
    for (const auto& d : p.drops) {
      std::cerr << p.img_id << ": dropped generated(" << d.prompt << ',' << d.generation
                << "): " << d.reason << '\n';
    }
    if (p.failure != g3::QueryFailure::kNone) std::cerr << p.img_id << ": failed: " << p.error << '\n';
    transport_failure |= p.failure == g3::QueryFailure::kTransport;
  }
  if (!a.report.empty()) {
    // Every query excluded still leaves a report saying so.
    json r = result.report ? report_json(*result.report) : json{{"fractions", nullptr}, {"n_samples", 0}};
    r["n_failed"] = result.n_failed;
    r["n_excluded"] = result.n_excluded;
    r["prompt_template_version"] = g3::kPromptTemplateVersion;
    r["config"] = options_json(sub);
    write_json(a.report, r);
  }
  return transport_failure ? kTransport : kOk;
}

// ---- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
  std::string predictions, truth, out;
  bool exclude_failed = false;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  app.add_option("--predictions", a.predictions, "Predictions (JSON lines)")->required();
  app.add_option("--truth", a.truth, "Ground-truth metadata (CSV or JSONL)")->required();
  app.add_option("--out", a.out, "Report (JSON); stdout when omitted");
  app.add_flag("--exclude-failed", a.exclude_failed);
}

int run_evaluate(const EvaluateArgs& a, const CLI::App& sub) {
  std::unordered_map<std::string, g3::GeoPoint> truth;
  for (const auto& r : load_records(a.truth)) truth.emplace(r.img_id, r.point);

  std::ifstream in(a.predictions);
  if (!in) throw g3::DataError("cannot read " + a.predictions);
  std::vector<double> distances;
  std::size_t n_failed = 0, n_excluded = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json p;
    try {
      p = json::parse(line);
    } catch (const json::exception& e) {
      throw g3::ParseError(a.predictions + ':' + std::to_string(line_no) + ": " + e.what());
    }
    const auto id = p.value("img_id", std::string{});
    const auto it = truth.find(id);
    if (it == truth.end()) throw g3::DataError("no ground truth for '" + id + "'");
    const auto lat = p.find("pred_lat");
    const auto lon = p.find("pred_lon");
    if (lat == p.end() || lon == p.end() || lat->is_null() || lon->is_null()) {
      ++n_failed;
      if (a.exclude_failed) {
        ++n_excluded;
      } else {
        distances.push_back(std::numeric_limits<double>::infinity());
      }
      continue;
    }
    distances.push_back(g3::haversine_km(g3::GeoPoint(lat->get<double>(), lon->get<double>()), it->second));
  }
  if (distances.empty()) throw g3::DataError("no predictions to evaluate");
  json r = report_json(g3::ThresholdReport::from_distances(distances));
  r["n_failed"] = n_failed;
  r["n_excluded"] = n_excluded;
  r["config"] = options_json(sub);
  write_json(a.out, r);
  return kOk;
}

// ---- compare-retrieval -------------------------------------------------------

struct CompareArgs {
  std::string metadata, image, queries, query_image, model, out;
  std::vector<std::size_t> top_n{5, 10, 15};
};

void add_compare(CLI::App& app, CompareArgs& a) {
  app.add_option("--metadata", a.metadata, "Database metadata")->required();
  app.add_option("--image", a.image, "Database image embeddings")->required();
  app.add_option("--queries", a.queries, "Query metadata")->required();
  app.add_option("--query-image", a.query_image, "Query image embeddings")->required();
  app.add_option("--model", a.model)->required();
  app.add_option("--out", a.out, "Report (JSON); stdout when omitted");
  app.add_option("--top-n", a.top_n)->delimiter(',');
}

int run_compare(const CompareArgs& a, const CLI::App& sub) {
  const auto db = load_records(a.metadata);
  const auto q = load_records(a.queries);
  const auto model = g3::load_model(a.model);
  std::vector<g3::GeoPoint> truths;
  for (const auto& r : q) truths.push_back(r.point);
  const auto cmp = g3::compare_retrieval(db, g3::rows_for(g3::read_embeddings(a.image), db),
                                         g3::rows_for(g3::read_embeddings(a.query_image), q),
                                         truths, model, a.top_n);
  write_json(a.out, {{"rows", g3::comparison_json(cmp)}, {"n_queries", q.size()},
                     {"config", options_json(sub)}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented image geolocalization"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Configuration file (TOML/INI key = value, one [section] per command)");
  app.require_subcommand(1);

  SynthArgs synth;
  TrainArgs train;
  IndexArgs index;
  PredictArgs predict;
  EvaluateArgs evaluate;
  CompareArgs compare;
  auto* s_synth = app.add_subcommand("synth", "Write a synthetic world");
  auto* s_train = app.add_subcommand("train", "Train the alignment model");
  auto* s_index = app.add_subcommand("build-index", "Vectorize a database into an index");
  auto* s_predict = app.add_subcommand("predict", "Predict locations for a query set");
  auto* s_eval = app.add_subcommand("evaluate", "Threshold accuracy of predictions");
  auto* s_compare = app.add_subcommand("compare-retrieval", "Raw vs aligned retrieval distances");
  add_synth(*s_synth, synth);
  add_train(*s_train, train);
  add_index(*s_index, index);
  add_predict(*s_predict, predict);
  add_evaluate(*s_eval, evaluate);
  add_compare(*s_compare, compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s_synth) return run_synth(synth, *s_synth);
    if (*s_train) return run_train(train);
    if (*s_index) return run_index(index);
    if (*s_predict) return run_predict(predict, *s_predict);
    if (*s_eval) return run_evaluate(evaluate, *s_eval);
    if (*s_compare) return run_compare(compare, *s_compare);
  } catch (const g3::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const g3::TransportError& e) {
    std::cerr << "transport error: " << e.what() << '\n';
    return kTransport;
  } catch (const g3::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
