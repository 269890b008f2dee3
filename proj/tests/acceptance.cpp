// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "g3/data.hpp"
#include "g3/pipeline.hpp"
#include "g3/synthetic.hpp"
#include "g3/verify.hpp"
#include "support/gradcheck.hpp"
#include "support/pair_loss_oracle.hpp"

using namespace g3;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-5;
constexpr double kGradBudgetS = 120.0;
constexpr int kGradSeeds = 20;
constexpr double kPairLossTol = 1e-6;
constexpr double kOrthonormalLoss = 0.6265233750364457;  // 2 ln(1 + e^-1)
constexpr double kOrthonormalTol = 1e-9;
constexpr double kRoundTripTolDeg = 1e-9;
constexpr double kAntipodalKm = std::numbers::pi * kMeanEarthRadiusKm;
constexpr double kAntipodalTolKm = 1e-6;
constexpr int kTrainSeeds = 5;
constexpr double kTrainBudgetS = 600.0;
constexpr std::size_t kIndexQueries = 1000;
constexpr std::size_t kIvfClusters = 16;
constexpr double kMinRecallAt10 = 0.9;
constexpr int kVerifyTrials = 500;
constexpr double kNearCandidateSdKm = 300.0;
constexpr std::size_t kClosedLoopQueries = 512;
constexpr double kPipelineBudgetS = 300.0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int n_failed = 0;

void report(const char* name, const Outcome& o) {
  std::printf("%s  %-22s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++n_failed;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Mirrors configs/synthetic_fixture.toml.
SyntheticWorldConfig fixture_world() { return SyntheticWorldConfig{}; }

TrainConfig fixture_training(std::uint64_t seed) {
  TrainConfig c;
  c.lr = 1e-3;
  c.seed = seed;
  return c;
}

TriModalBatch<float> dataset_of(const WorldSplit& split) {
  TriModalBatch<float> b;
  b.image = split.image;
  b.text = split.text;
  for (const auto& r : split.metadata) b.points.push_back(r.point);
  return b;
}

std::vector<GeoPoint> points_of(const WorldSplit& split) {
  std::vector<GeoPoint> out;
  for (const auto& r : split.metadata) out.push_back(r.point);
  return out;
}

std::span<const float> row_span(const nn::Matrix<float>& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    const auto r = test_support::check_alignment_model(std::uint64_t(seed), 1e-5, 1e-8);
    worst = std::max(worst, r.max_rel_error);
    checked += r.n_checked;
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && secs < kGradBudgetS,
          fmt("max rel error %.2e over %zu params x %d seeds (tol %.0e), %.1f s (budget %.0f s)", worst,
              checked / kGradSeeds, kGradSeeds, kGradRelTol, secs, kGradBudgetS)};
}

Outcome pair_loss_oracle() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> n_dist(1, 16), d_dist(1, 32);
  std::uniform_real_distribution<double> t_dist(-1.0, 5.5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = n_dist(rng), d = d_dist(rng);
    const auto a = test_support::random_matrix(n, d, rng);
    const auto b = test_support::random_matrix(n, d, rng);
    const double t = t_dist(rng);
    worst = std::max(worst, std::abs(contrastive_pair_loss(a, b, t).loss -
                                     test_support::brute_force_pair_loss(a, b, t)));
  }
  const nn::Matrix<double> e = nn::Matrix<double>::Identity(2, 2);
  const double ortho = contrastive_pair_loss(e, e, 0.0).loss;
  return {worst < kPairLossTol && std::abs(ortho - kOrthonormalLoss) < kOrthonormalTol,
          fmt("max |diff| %.2e on 100 batches (tol %.0e); orthonormal n=2 loss %.12f", worst, kPairLossTol,
              ortho)};
}

Outcome geodesy() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lat(-kMercatorMaxLatDeg, kMercatorMaxLatDeg), lon(-180.0, 180.0);
  double worst_rt = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const GeoPoint p(lat(rng), lon(rng));
    const GeoPoint q = mercator_unproject(mercator_project(p));
    worst_rt = std::max({worst_rt, std::abs(q.lat_deg() - p.lat_deg()), std::abs(q.lon_deg() - p.lon_deg())});
  }
  double worst_anti = 0.0;
  std::uniform_real_distribution<double> any_lat(-90.0, 90.0), west(-180.0, 0.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = any_lat(rng), o = west(rng);
    worst_anti = std::max(worst_anti, std::abs(haversine_km({a, o}, {-a, o + 180.0}) - kAntipodalKm));
  }
  std::lognormal_distribution<double> dist_km(std::log(500.0), 2.0);
  bool monotone = true;
  for (int set = 0; set < 1000; ++set) {
    std::vector<double> d(64);
    for (double& x : d) x = dist_km(rng);
    const auto r = ThresholdReport::from_distances(d);
    for (std::size_t t = 1; t < r.fractions.size(); ++t) monotone &= r.fractions[t - 1] <= r.fractions[t];
  }
  return {worst_rt < kRoundTripTolDeg && worst_anti < kAntipodalTolKm && monotone,
          fmt("round trip %.1e deg (tol %.0e); antipodal off by %.1e km (tol %.0e); monotone on 1000 sets: %s",
              worst_rt, kRoundTripTolDeg, worst_anti, kAntipodalTolKm, monotone ? "yes" : "no")};
}

struct TrainedFixture {
  SyntheticWorld world;
  std::vector<TrainResult> runs;
  double train_seconds = 0.0;
};

TrainedFixture train_fixture() {
  TrainedFixture f;
  f.world = synthesize_world(fixture_world());
  const auto data = dataset_of(f.world.database);
  const auto t0 = std::chrono::steady_clock::now();
  for (int seed = 0; seed < kTrainSeeds; ++seed) f.runs.push_back(train(data, fixture_training(std::uint64_t(seed))));
  f.train_seconds = seconds_since(t0);
  return f;
}

Outcome training_progress(const TrainedFixture& f) {
  int improved = 0;
  std::string losses;
  for (const auto& r : f.runs) {
    const double first = r.log.front().mean_loss, last = r.log.back().mean_loss;
    improved += r.log.size() == 10 && last < first;
    losses += fmt(" %.0f->%.0f", first, last);
  }
  return {improved == kTrainSeeds && f.train_seconds < kTrainBudgetS,
          fmt("%d/%d seeds improved (epoch 1->10 mean loss:%s), %.0f s (budget %.0f s)", improved, kTrainSeeds,
              losses.c_str(), f.train_seconds, kTrainBudgetS)};
}

Outcome retrieval_direction(const TrainedFixture& f) {
  const auto truths = points_of(f.world.queries);
  const std::vector<std::size_t> top5{5};
  int wins = 0;
  std::string pairs;
  for (const auto& r : f.runs) {
    const auto c = compare_retrieval(f.world.database.metadata, f.world.database.image, f.world.queries.image,
                                     truths, r.model, top5);
    wins += c.aligned[0].avg < c.raw[0].avg;
    pairs += fmt(" %.0f/%.0f", c.aligned[0].avg, c.raw[0].avg);
  }
  return {wins == kTrainSeeds,
          fmt("top-5 avg km aligned < raw on %d/%d seeds (aligned/raw:%s)", wins, kTrainSeeds, pairs.c_str())};
}

Outcome index_oracle(const TrainedFixture& f) {
  // Same generator with enough queries for the oracle.
  auto cfg = fixture_world();
  cfg.queries_per_cluster = kIndexQueries / cfg.n_clusters;
  const auto world = synthesize_world(cfg);
  const auto& model = f.runs.front().model;
  auto index = build_index(world.database.metadata, vectorize_images(world.database.image, model));
  const auto queries = vectorize_images(world.queries.image, model);
  index.build_ivf({kIvfClusters, 25, 0, kIvfClusters / 4});

  std::stringstream buf;
  index.write(buf);
  const auto loaded = VectorIndex::read(buf);

  std::size_t exact = 0, found = 0, roundtrip = 0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const auto query = row_span(queries, q);
    const auto flat = index.search_flat(query, 10);
    exact += index.search_ivf(query, 10, kIvfClusters) == flat;
    const auto approx = index.search_ivf(query, 10, kIvfClusters / 4);
    std::set<std::uint64_t> truth;
    for (const auto& h : flat) truth.insert(h.id);
    for (const auto& h : approx) found += truth.count(h.id);
    roundtrip += loaded.search_flat(query, 10) == flat && loaded.search_ivf(query, 10, kIvfClusters / 4) == approx;
  }
  const auto nq = static_cast<std::size_t>(queries.rows());
  const double recall = double(found) / double(10 * nq);
  return {nq == kIndexQueries && exact == nq && recall >= kMinRecallAt10 && roundtrip == nq,
          fmt("full probe == flat on %zu/%zu; recall@10 %.3f at nprobe %zu/%zu (min %.1f); save/load identical on %zu/%zu",
              exact, nq, recall, kIvfClusters / 4, kIvfClusters, kMinRecallAt10, roundtrip, nq)};
}

Outcome pool_arithmetic(const TrainedFixture& f) {
  const auto& model = f.runs.front().model;
  const auto index = build_index(f.world.database.metadata, vectorize_images(f.world.database.image, model));
  const auto queries = vectorize_images(f.world.queries.image, model);
  struct Case {
    std::size_t n, s;
    std::set<std::pair<std::size_t, std::size_t>> unparsable;
  };
  const std::vector<Case> cases{{5, 0, {}}, {1, 1, {}}, {5, 0, {{0, 1}, {2, 2}, {3, 4}}}, {1, 1, {{1, 0}}}};
  std::size_t ok = 0, total = 0;
  for (const auto& c : cases) {
    PromptSet ps;
    ps.n_generations = c.n;
    ps.s_retrieved = c.s;
    MockLmmConfig mc;
    mc.unparsable = c.unparsable;
    MockLmmClient client(mc);
    for (Eigen::Index q = 0; q < 32; ++q) {
      RetrievalContext ctx;
      const auto query = row_span(queries, q);
      ctx.query.assign(query.begin(), query.end());
      ctx.store = &index;
      ctx.seed = query_seed(0, std::size_t(q));
      for (const auto& h : index.search(query, ps.retrieval_depth())) ctx.hits.push_back({h.id, h.score, index.point_of(h.id)});
      const auto pool = generate_candidates(client, ps, ctx);
      const std::size_t m = 4 * c.n + c.s;
      ok += pool.size() == m - pool.drops.size() && pool.drops.size() == c.unparsable.size();
      ++total;
    }
  }
  return {ok == total, fmt("m = K*N + S - drops held for %zu/%zu pools over (4,5,0) and (4,1,1), with and without drops", ok,
                           total)};
}

Outcome verification_ablation(const TrainedFixture& f) {
  const auto& model = f.runs.front().model;
  const auto& db = f.world.database.metadata;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> offset(0.0, kNearCandidateSdKm);
  std::uniform_int_distribution<std::size_t> pick_db(0, db.size() - 1), pick_any(0, 19);
  int verify_hits = 0, random_hits = 0;
  for (int t = 0; t < kVerifyTrials; ++t) {
    const auto q = static_cast<Eigen::Index>(t % f.world.queries.image.rows());
    const GeoPoint truth = f.world.queries.metadata[std::size_t(q)].point;
    std::vector<GeoPoint> cands;
    for (int i = 0; i < 5; ++i) cands.push_back(offset_km(truth, offset(rng), offset(rng)));
    for (int i = 0; i < 15; ++i) cands.push_back(db[pick_db(rng)].point);
    std::shuffle(cands.begin(), cands.end(), rng);
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < cands.size(); ++i) {
      if (haversine_km(cands[i], truth) < haversine_km(cands[nearest], truth)) nearest = i;
    }
    verify_hits += verify(row_span(f.world.queries.image, q), cands, model).chosen_index == nearest;
    random_hits += pick_any(rng) == nearest;
  }
  const double vr = double(verify_hits) / kVerifyTrials, rr = double(random_hits) / kVerifyTrials;
  return {vr > rr, fmt("nearest-to-truth hit rate verify %.3f vs uniform random %.3f over %d trials", vr, rr,
                       kVerifyTrials)};
}

Outcome closed_loop(const TrainedFixture& f) {
  const auto& model = f.runs.front().model;
  const auto& db = f.world.database;
  const auto index = build_index(db.metadata, vectorize_images(db.image, model));

  // Stored records as queries: every fourth database row.
  QuerySet stored;
  stored.image.resize(Eigen::Index(kClosedLoopQueries), db.image.cols());
  for (std::size_t i = 0; i < kClosedLoopQueries; ++i) {
    const std::size_t r = 4 * i;
    stored.ids.push_back(db.metadata[r].img_id);
    stored.truths.push_back(db.metadata[r].point);
    stored.image.row(Eigen::Index(i)) = db.image.row(Eigen::Index(r));
  }
  MockLmmConfig echo;
  echo.mode = MockLmmConfig::Mode::kEchoFirstReference;
  MockLmmClient echo_client(echo);
  PipelineConfig loop;
  loop.prompts.specs = parse_prompt_specs("5:5,10:10,15:15");
  loop.prompts.n_generations = 1;
  loop.prompts.s_retrieved = 1;
  const auto echoed = run_pipeline(stored, model, index, echo_client, loop);
  bool perfect = echoed.report.has_value();
  std::string fractions;
  if (perfect) {
    for (double x : echoed.report->fractions) {
      perfect &= x == 1.0;
      fractions += fmt(" %.3f", x);
    }
  }

  // Full pipeline on the query split with the default ensemble.
  const auto t0 = std::chrono::steady_clock::now();
  QuerySet queries;
  queries.image = f.world.queries.image;
  for (const auto& r : f.world.queries.metadata) {
    queries.ids.push_back(r.img_id);
    queries.truths.push_back(r.point);
  }
  MockLmmClient client;
  const auto full = run_pipeline(queries, model, index, client, PipelineConfig{});
  const double secs = seconds_since(t0);
  const bool complete = queries.size() == kClosedLoopQueries && full.n_failed == 0 && full.report.has_value();
  return {perfect && complete && secs < kPipelineBudgetS,
          fmt("echo loop fractions [%s ]; %zu-query pipeline %.1f s (budget %.0f s), %zu failed", fractions.c_str(),
              queries.size(), secs, kPipelineBudgetS, full.n_failed)};
}

void run(const char* name, const std::function<Outcome()>& criterion) {
  try {
    report(name, criterion());
  } catch (const std::exception& e) {
    report(name, {false, std::string("threw: ") + e.what()});
  }
}

}  // namespace

int main() {
  run("gradient-check", gradient_check);
  run("pair-loss-oracle", pair_loss_oracle);
  run("geodesy", geodesy);

  std::optional<TrainedFixture> fixture;
  try {
    fixture = train_fixture();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fixture training failed: %s\n", e.what());
  }
  const auto with_fixture = [&](Outcome (*criterion)(const TrainedFixture&)) {
    return std::function<Outcome()>([&, criterion] {
      if (!fixture) return Outcome{false, "fixture training failed"};
      return criterion(*fixture);
    });
  };
  run("training-progress", with_fixture(training_progress));
  run("retrieval-direction", with_fixture(retrieval_direction));
  run("index-oracle", with_fixture(index_oracle));
  run("pool-arithmetic", with_fixture(pool_arithmetic));
  run("verification-ablation", with_fixture(verification_ablation));
  run("closed-loop", with_fixture(closed_loop));

  std::printf("%d criteria failed\n", n_failed);
  return n_failed;
}
