// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
// gating failure.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "../unit/scenario_util.hpp"
#include "../unit/test_util.hpp"
#include "minedetect/knn_classify.hpp"
#include "minedetect/metrics.hpp"
#include "minedetect/report.hpp"
#include "minedetect/snn_cluster.hpp"

using namespace minedetect;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  enum Kind { Pass, Fail, Skipped } kind = Pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << x;
  return s.str();
}

// 1 ------------------------------------------------------------------------
Outcome snn_oracle() {
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<std::size_t> size(1, 100), kd(1, 4);
  std::uniform_real_distribution<double> dens(0.05, 0.5);
  std::size_t discrepancies = 0, edges = 0;
  const auto t0 = Clock::now();
  for (int trial = 0; trial < 500; ++trial) {
    auto [g, adj] = testutil::random_graph(rng, size(rng), dens(rng));
    const auto k = kd(rng);
    const auto s = build_snn_graph(g, k);
    // Literal triple loop over i < j and every m.
    std::vector<std::pair<std::size_t, std::size_t>> expect;
    const auto n = adj.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        std::size_t counter = 0;
        for (std::size_t m = 0; m < n; ++m)
          if (adj[i][m] && adj[j][m]) ++counter;
        if (counter >= k) expect.emplace_back(i, j);
      }
    std::vector<std::pair<std::size_t, std::size_t>> got;
    for (const auto& e : s.edges) got.emplace_back(e.a, e.b);
    edges += got.size();
    if (got != expect) ++discrepancies;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.kind = discrepancies == 0 && secs < 60.0 ? Outcome::Pass : Outcome::Fail;
  o.detail = "500 graphs, " + std::to_string(edges) + " SNN edges, " + std::to_string(discrepancies) +
             " discrepant graphs, " + fmt(secs, 2) + " s";
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome clustering_oracle() {
  std::mt19937_64 rng(2002);
  std::uniform_int_distribution<std::size_t> size(1, 200);
  std::uniform_real_distribution<double> dens(0.01, 0.6);
  std::size_t mismatches = 0, vertices = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto [g, adj] = testutil::random_graph(rng, size(rng), dens(rng));
    const auto n = adj.size();
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t k = 0, t = 0;
      for (std::size_t a = 0; a < n; ++a) {
        if (!adj[i][a]) continue;
        ++k;
        for (std::size_t b = a + 1; b < n; ++b) t += adj[i][b] && adj[a][b];
      }
      const auto idx = static_cast<CommGraph::Index>(i);
      const std::uint64_t k_impl = g.neighbors(idx).size(), t_impl = triangles_at(g, idx);
      const double c = clustering_coefficient(g, idx);
      ++vertices;
      bool ok;
      if (k < 2) {
        ok = k_impl == k && c == 0.0;
      } else {
        // 2T/(k(k-1)) == 2T'/(k'(k'-1)) by integer cross-multiplication, and the
        // reported double is that ratio rounded once.
        ok = 2 * t_impl * (k * (k - 1)) == 2 * t * (k_impl * (k_impl - 1)) &&
             c == static_cast<double>(2 * t) / static_cast<double>(k * (k - 1));
      }
      mismatches += !ok;
    }
  }
  Outcome o;
  o.kind = mismatches == 0 ? Outcome::Pass : Outcome::Fail;
  o.detail = "200 graphs, " + std::to_string(vertices) + " vertices, " + std::to_string(mismatches) + " mismatches";
  return o;
}

// 3 ------------------------------------------------------------------------
Outcome knn_oracle() {
  std::mt19937_64 rng(3003);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_vec = [&](Label l) {
    FeatureVector v;
    for (std::size_t f = 0; f < kFeatureCount; ++f) v[f] = u(rng);
    v.label = l;
    v.normalized = true;
    return v;
  };
  std::vector<FeatureVector> train;
  for (int i = 0; i < 10000; ++i) train.push_back(random_vec(u(rng) < 0.3 ? Label::Miner : Label::NotMiner));
  const std::size_t ks[] = {1, 3, 5, 15};
  std::vector<KnnModel> models;
  for (auto k : ks) models.push_back(fit(train, k));
  std::size_t mismatches = 0;
  for (int q = 0; q < 1000; ++q) {
    auto query = random_vec(Label::Unlabeled);
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < train.size(); ++i) {
      double s = 0;
      for (std::size_t f = 0; f < kFeatureCount; ++f) s += (query[f] - train[i][f]) * (query[f] - train[i][f]);
      d.emplace_back(s, i);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto k = ks[m];
      std::size_t miners = 0;
      for (std::size_t i = 0; i < k; ++i) miners += train[d[i].second].label == Label::Miner;
      const Label want = 2 * miners > k ? Label::Miner : 2 * miners < k ? Label::NotMiner : train[d[0].second].label;
      const auto got = predict(models[m], query);
      mismatches += got.label != want || got.score != double(miners) / double(k);
    }
  }
  Outcome o;
  o.kind = mismatches == 0 ? Outcome::Pass : Outcome::Fail;
  o.detail = "4000 (query, k) pairs, " + std::to_string(mismatches) + " mismatches";
  return o;
}

// 4 ------------------------------------------------------------------------
Outcome metric_identities() {
  const double f = f_measure(0.143, 0.538);
  bool ok = std::abs(f - 0.226) <= 0.001;
  std::mt19937_64 rng(4004);
  std::size_t mcc_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    ConfusionMatrix m{rng() % 5000, rng() % 5000, rng() % 5000, rng() % 5000};
    if (m.total() == 0) m.tp = 1;
    const auto a = class_metrics(m), b = class_metrics(m.swapped());
    mcc_bad += a.mcc < -1.0 || a.mcc > 1.0 || std::abs(std::abs(a.mcc) - std::abs(b.mcc)) > 1e-12;
  }
  std::size_t roc_bad = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng() % 300;
    std::vector<double> s(n), t(n);
    std::vector<Label> y(n);
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = double(rng() % 1000) / 1000.0;
      t[j] = std::atan(5.0 * s[j] - 2.0) * 3.0 + 11.0;  // strictly increasing
      y[j] = rng() % 2 ? Label::Miner : Label::NotMiner;
    }
    y[0] = Label::Miner;
    y[1] = Label::NotMiner;
    roc_bad += std::abs(roc_auc(s, y) - roc_auc(t, y)) > 1e-12;
  }
  ok = ok && mcc_bad == 0 && roc_bad == 0;
  Outcome o;
  o.kind = ok ? Outcome::Pass : Outcome::Fail;
  o.detail = "F(0.143,0.538)=" + fmt(f) + ", mcc violations " + std::to_string(mcc_bad) + "/1000, roc violations " +
             std::to_string(roc_bad) + "/200";
  return o;
}

// 5 ------------------------------------------------------------------------
Outcome reference_counts() {
  const ConfusionMatrix m{147, 882, 26, 355692};
  const auto c = class_metrics(m);
  const double acc = accuracy(m);
  Outcome o;
  o.kind = std::abs(c.precision - 0.1429) <= 0.0005 && std::abs(acc - 0.99746) <= 0.00001 ? Outcome::Pass : Outcome::Fail;
  o.detail = "precision " + fmt(c.precision) + ", accuracy " + fmt(acc, 6) + ", recall " +
             fmt(c.recall, 3) + " and mcc " + fmt(c.mcc, 3) + " not gated";
  return o;
}

// 6, 7 ---------------------------------------------------------------------
const testutil::ScenarioRun& seed42(double* secs = nullptr) {
  static double elapsed = 0;
  static const auto run = [] {
    const auto t0 = Clock::now();
    auto r = testutil::scenario_run(42);
    elapsed = seconds_since(t0);
    return r;
  }();
  if (secs) *secs = elapsed;
  return run;
}

Outcome planted_recovery() {
  double secs = 0;
  const auto& run = seed42(&secs);
  const auto& truth = run.scenario.truth;
  std::size_t miners = 0, caught = 0, benign = 0, false_alarms = 0;
  for (const auto& [host, t] : truth.hosts) {
    const bool flagged = std::binary_search(run.report.suspicious.begin(), run.report.suspicious.end(), host);
    if (t.label == Label::Miner) {
      ++miners;
      caught += flagged;
    } else {
      ++benign;
      false_alarms += flagged;
    }
  }
  const double recall = miners ? double(caught) / double(miners) : 0.0;
  const double fpr = benign ? double(false_alarms) / double(benign) : 1.0;

  // Generator separation: fingerprint-matching flow counts by brute force,
  // per window. Only windows where a victim is expected in S3 carry mining
  // sessions; every other (host, window) pair is background.
  const MiningFingerprint fp;
  std::uint64_t miner_min = UINT64_MAX, benign_max = 0;
  for (const auto& [host, t] : truth.hosts)
    for (std::size_t w = 0; w < truth.n_windows; ++w) {
      const double lo = double(w) * run.config.window, hi = lo + run.config.window;
      std::uint64_t n = 0;
      for (const auto& f : run.scenario.flows)
        if (f.start_time >= lo && f.start_time < hi && (f.src_host == host || f.dst_host == host) && fp.matches(f)) ++n;
      if (t.expected[w] == State::S3) miner_min = std::min(miner_min, n);
      else benign_max = std::max(benign_max, n);
    }
  const bool separated = miner_min > benign_max;
  const double knn_recall = run.report.knn_metrics ? run.report.knn_metrics->miner.recall : 0.0;

  Outcome o;
  o.kind = recall >= 0.9 && fpr <= 0.05 && secs < 30.0 && separated ? Outcome::Pass : Outcome::Fail;
  o.detail = "L* recall " + fmt(recall, 3) + " (" + std::to_string(caught) + "/" + std::to_string(miners) + "), FPR " +
             fmt(fpr, 4) + " (" + std::to_string(false_alarms) + "/" + std::to_string(benign) + "), KNN-only recall " +
             fmt(knn_recall, 3) + ", fingerprint flows per window: S3 min " + std::to_string(miner_min) + " vs other max " +
             std::to_string(benign_max) + ", " + fmt(secs, 2) + " s";
  return o;
}

Outcome state_replay() {
  const auto& run = seed42();
  const auto& truth = run.scenario.truth;
  std::size_t pairs = 0, matches = 0;
  std::vector<std::string> log;
  for (const auto& [host, t] : truth.hosts) {
    const auto* row = run.report.find_host(host);
    for (std::size_t w = 0; w < truth.n_windows; ++w) {
      ++pairs;
      const State expected = expected_states(truth, w).at(host);
      const State got = row ? row->states.at(w) : State::S0;
      if (got == expected) {
        ++matches;
        continue;
      }
      log.push_back(host + " w" + std::to_string(w) + ": got " + std::string(state_name(got)) + ", expected " +
                    std::string(state_name(expected)) + " [" + (row ? row->rules.at(w) : "host absent") + "]");
    }
  }
  const double share = pairs ? double(matches) / double(pairs) : 0.0;
  for (const auto& line : log) std::cout << "    mismatch " << line << '\n';
  Outcome o;
  o.kind = share >= 0.95 ? Outcome::Pass : Outcome::Fail;
  o.detail = std::to_string(matches) + "/" + std::to_string(pairs) + " (host, window) pairs match (" +
             fmt(100.0 * share, 2) + "%)";
  return o;
}

// 8 ------------------------------------------------------------------------
std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string drop_timestamp(const std::string& json_text) {
  auto j = Json::parse(json_text);
  j["provenance"].erase("generated_at");
  return j.dump(2);
}

Outcome determinism() {
  const auto& run = seed42();
  const PipelineInputs in{serialize_flow_csv(run.scenario.flows), serialize_feature_csv(run.labeled),
                          serialize_truth_csv(run.scenario.truth)};
  auto a = minedetect::run(in, PipelineConfig{});
  auto b = minedetect::run(in, PipelineConfig{});
  a.generated_at = "2000-01-01T00:00:00Z";
  b.generated_at = "2030-12-31T23:59:59Z";
  const bool library = drop_timestamp(report_json_text(a)) == drop_timestamp(report_json_text(b));

  // Two CLI invocations on the same files.
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / ("minedetect_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto write = [&](const char* name, const std::string& body) {
    std::ofstream(dir / name, std::ios::binary) << body;
  };
  write("flows.csv", in.flows_csv);
  write("labeled.csv", in.labeled_csv);
  const std::string base = "'" + std::string(MINEDETECT_CLI) + "' run --flows '" + (dir / "flows.csv").string() +
                           "' --labeled '" + (dir / "labeled.csv").string() + "' --out ";
  const int s1 = std::system((base + "'" + (dir / "r1.json").string() + "' 2>/dev/null").c_str());
  const int s2 = std::system((base + "'" + (dir / "r2.json").string() + "' 2>/dev/null").c_str());
  bool cli = false;
  std::size_t bytes = 0;
  if (WIFEXITED(s1) && WEXITSTATUS(s1) == 0 && WIFEXITED(s2) && WEXITSTATUS(s2) == 0) {
    const auto r1 = read_file(dir / "r1.json"), r2 = read_file(dir / "r2.json");
    bytes = r1.size();
    cli = drop_timestamp(r1) == drop_timestamp(r2);
  }
  fs::remove_all(dir);
  Outcome o;
  o.kind = library && cli ? Outcome::Pass : Outcome::Fail;
  o.detail = std::string("library reports ") + (library ? "identical" : "DIFFER") + ", CLI reports " +
             (cli ? "identical" : "DIFFER") + " (" + std::to_string(bytes) + " bytes, generated_at excluded)";
  return o;
}

// 9 ------------------------------------------------------------------------
Outcome dataset_reproduction() {
  const char* path = std::getenv("MINEDETECT_DATASET");
  if (!path) return {Outcome::Skipped, "set MINEDETECT_DATASET to a flow CSV to run"};
  PipelineConfig pc;
  if (const char* cfg = std::getenv("MINEDETECT_CONFIG")) pc = PipelineConfig::from_config(KvConfig::load(cfg));
  const auto flows = parse_flow_csv(read_file(path), pc.schema);
  const auto g = build_graph(flows, TimeWindow{-1e300, 1e300});
  const double published[] = {22, 19, 18, 15, 26};
  std::string best;
  for (std::size_t k = 1; k <= 12; ++k) {
    auto clusters = extract_clusters(build_snn_graph(g, k));
    if (clusters.size() != 5) continue;
    std::ostringstream s;
    s << "k_shared=" << k << " shares";
    for (std::size_t i = 0; i < 5; ++i)
      s << ' ' << fmt(100.0 * double(clusters[i].size()) / double(g.vertex_count()), 1) << "% (published " << published[i] << "%)";
    best = s.str();
    break;
  }
  if (best.empty()) best = "no k_shared in 1..12 gives exactly 5 clusters";
  return {Outcome::Pass, "non-gating; " + best};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {1, "SNN oracle equivalence", snn_oracle},
      {2, "clustering-coefficient oracle", clustering_oracle},
      {3, "KNN oracle", knn_oracle},
      {4, "metric identities", metric_identities},
      {5, "confusion-matrix arithmetic", reference_counts},
      {6, "planted-miner recovery", planted_recovery},
      {7, "state-machine replay", state_replay},
      {8, "determinism", determinism},
      {9, "dataset reproduction", dataset_reproduction},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.kind == Outcome::Pass ? "PASS" : o.kind == Outcome::Fail ? "FAIL" : "SKIPPED";
    if (o.kind == Outcome::Fail && c.id == 9) o.detail += " (non-gating)";
    else failures += o.kind == Outcome::Fail;
    std::cout << "criterion " << c.id << " " << tag << ": " << c.name << " -- " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
