#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "CLI11.hpp"
#include "minedetect/report.hpp"

namespace fs = std::filesystem;
using namespace minedetect;

namespace {

// Flags shared by the subcommands; defaults mirror PipelineConfig.
struct Options {
  std::string flows, labeled, truth, config, out, scenario, report, save_model;
  std::string format = "json";
  double window = PipelineConfig{}.window;
  std::size_t snn_k = PipelineConfig{}.k_shared;
  std::size_t knn_k = PipelineConfig{}.knn_k;
  std::uint64_t seed = 0;

  CLI::Option* window_opt = nullptr;
  CLI::Option* snn_opt = nullptr;
  CLI::Option* knn_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes next to the target and renames, so failures never leave partial files.
class AtomicWriter {
 public:
  void stage(const std::string& path, const std::string& body) {
    if (path.empty() || path == "-") {
      stdout_ += body;
      return;
    }
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    std::ofstream f(tmp, std::ios::binary);
    if (!f || !(f << body) || !(f.flush())) {
      std::remove(tmp.c_str());
      throw Error(Errc::Io, "cannot write '" + path + "'");
    }
    staged_.emplace_back(tmp, path);
  }

  void commit() {
    for (const auto& [tmp, path] : staged_) fs::rename(tmp, path);
    staged_.clear();
    std::cout << stdout_;
    stdout_.clear();
  }

  ~AtomicWriter() {
    for (const auto& [tmp, _] : staged_) std::remove(tmp.c_str());
  }

 private:
  std::vector<std::pair<std::string, std::string>> staged_;
  std::string stdout_;
};

/// Path with its extension replaced: sibling("out/a.csv", ".truth.csv") -> "out/a.truth.csv".
std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / p.stem()).string() + suffix;
}

KvConfig load_config(const Options& o) {
  std::string path = o.config;
  if (path.empty())
    if (const char* env = std::getenv("MINEDETECT_CONFIG")) path = env;
  KvConfig cfg = path.empty() ? KvConfig{} : KvConfig::load(path);
  if (o.window_opt && o.window_opt->count()) cfg.set("pipeline.window", text::format_double(o.window));
  if (o.snn_opt && o.snn_opt->count()) cfg.set("snn.k_shared", std::to_string(o.snn_k));
  if (o.knn_opt && o.knn_opt->count()) cfg.set("knn.k", std::to_string(o.knn_k));
  return cfg;
}

PipelineConfig pipeline_config(const Options& o) {
  auto cfg = load_config(o);
  // delta_t follows the window unless the config sets it explicitly.
  if (!cfg.contains("state.delta_t") && o.window_opt && o.window_opt->count())
    cfg.set("state.delta_t", text::format_double(o.window));
  return PipelineConfig::from_config(cfg);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
}

void conflict(bool a, bool b, const std::string& what) {
  if (a && b) throw Error(Errc::ConflictingFlags, what);
}

DetectionReport run_report(const Options& o, const PipelineConfig& pc, bool with_labeled) {
  require(o.flows, "--flows");
  PipelineInputs in;
  in.flows_csv = text::read_file(o.flows);
  if (with_labeled) in.labeled_csv = text::read_file(o.labeled);
  else in.labeled_csv = serialize_feature_csv({});
  if (!o.truth.empty()) in.truth_csv = text::read_file(o.truth);
  auto r = run(in, pc);
  r.generated_at = utc_now();
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  return r;
}

void check_format(const Options& o, std::initializer_list<const char*> allowed) {
  for (auto a : allowed)
    if (o.format == a) return;
  throw Error(Errc::InvalidConfig, "--format " + o.format + " is not supported by this subcommand");
}

// ---------------------------------------------------------------------------

void cmd_features(const Options& o) {
  require(o.flows, "--flows");
  check_format(o, {"csv", "json"});
  auto pc = pipeline_config(o);
  auto flows = parse_flow_csv(text::read_file(o.flows), pc.schema);
  std::vector<FeatureVector> vecs;
  if (!flows.empty()) {
    double lo = flows.front().start_time, hi = lo;
    for (const auto& f : flows) lo = std::min(lo, f.start_time), hi = std::max(hi, f.start_time);
    const double origin = pc.origin ? *pc.origin : std::floor(lo / pc.window) * pc.window;
    const double n = std::floor((hi - origin) / pc.window) + 1.0;
    vecs = aggregate_all_hosts(flows, {origin, origin + n * pc.window});
  }
  AtomicWriter w;
  if (o.format == "csv") {
    w.stage(o.out, serialize_feature_csv(vecs));
  } else {
    Json arr = Json::array();
    for (const auto& v : vecs) {
      Json row{{"host", v.host}};
      for (std::size_t i = 0; i < kFeatureCount; ++i) row[std::string(kFeatureNames[i])] = v[i];
      arr.push_back(std::move(row));
    }
    w.stage(o.out, arr.dump(2) + "\n");
  }
  w.commit();
}

void cmd_graph(const Options& o) {
  require(o.flows, "--flows");
  check_format(o, {"csv", "json"});
  auto pc = pipeline_config(o);
  auto flows = parse_flow_csv(text::read_file(o.flows), pc.schema);
  std::vector<CommGraph> graphs;
  if (!flows.empty()) {
    double lo = flows.front().start_time, hi = lo;
    for (const auto& f : flows) lo = std::min(lo, f.start_time), hi = std::max(hi, f.start_time);
    const double origin = pc.origin ? *pc.origin : std::floor(lo / pc.window) * pc.window;
    const auto n = static_cast<std::size_t>(std::floor((hi - origin) / pc.window)) + 1;
    for (std::size_t t = 0; t < n; ++t)
      graphs.push_back(build_graph(flows, {origin + double(t) * pc.window, origin + double(t + 1) * pc.window}, t));
  }
  AtomicWriter w;
  if (o.format == "csv") {
    std::string body;
    for (const auto& g : graphs) body += export_graph_text(g);
    w.stage(o.out, body);
  } else {
    Json arr = Json::array();
    for (const auto& g : graphs) {
      Json hosts = Json::array();
      for (const auto& h : graph_features(g)) hosts.push_back({{"host", h.host}, {"k", h.k}, {"c", h.c}});
      Json edges = Json::array();
      for (const auto& e : g.edges()) edges.push_back({e.a, e.b, e.weight});
      arr.push_back({{"window", g.timestamp()}, {"hosts", hosts}, {"edges", edges}});
    }
    w.stage(o.out, arr.dump(2) + "\n");
  }
  w.commit();
}

void cmd_cluster(const Options& o) {
  check_format(o, {"csv", "json"});
  auto r = run_report(o, pipeline_config(o), !o.labeled.empty());
  AtomicWriter w;
  if (o.format == "csv") {
    w.stage(o.out, clusters_csv(r));
  } else {
    w.stage(o.out, report_to_json(r)["clusters"].dump(2) + "\n");
  }
  w.commit();
}

void cmd_classify(const Options& o) {
  require(o.flows, "--flows");
  require(o.labeled, "--labeled");
  check_format(o, {"csv", "json"});
  auto pc = pipeline_config(o);
  auto r = run_report(o, pc, true);
  AtomicWriter w;
  if (o.format == "csv") {
    w.stage(o.out, hosts_csv(r));
  } else {
    w.stage(o.out, report_to_json(r)["hosts"].dump(2) + "\n");
  }
  if (!o.save_model.empty()) {
    // Refit on the same normalized training set the pipeline used.
    std::vector<FeatureVector> ex;
    for (const auto& rec : r.mapping.records)
      if (rec.vector.label != Label::Unlabeled) ex.push_back(rec.vector);
    w.stage(o.save_model, save_model(fit(ex, pc.knn_k)));
  }
  w.commit();
}

void cmd_evaluate(const Options& o) {
  check_format(o, {"csv", "json"});
  conflict(!o.report.empty(), !o.flows.empty(), "--report and --flows are mutually exclusive");
  DetectionReport r;
  if (!o.report.empty()) {
    require(o.truth, "--truth");
    Json j;
    try {
      j = Json::parse(text::read_file(o.report));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::MalformedRow, std::string("report is not JSON: ") + e.what());
    }
    r = report_from_json(j);
    evaluate_against(r, parse_truth_csv(text::read_file(o.truth)));
  } else {
    require(o.flows, "--flows");
    require(o.labeled, "--labeled");
    r = run_report(o, pipeline_config(o), true);
  }
  if (!r.knn_metrics) throw Error(Errc::DegenerateLabels, "ground truth does not cover both classes");
  AtomicWriter w;
  if (o.format == "csv") {
    w.stage(o.out, metrics_csv(r));
  } else {
    Json j{{"knn", table_to_json(*r.knn_metrics)},
           {"state", table_to_json(*r.state_metrics)},
           {"suspicious", table_to_json(*r.suspicious_metrics)}};
    w.stage(o.out, j.dump(2) + "\n");
  }
  w.commit();
}

void cmd_run(const Options& o) {
  check_format(o, {"csv", "json"});
  auto r = run_report(o, pipeline_config(o), !o.labeled.empty());
  AtomicWriter w;
  if (o.format == "json") {
    w.stage(o.out, report_json_text(r));
  } else {
    require(o.out, "--out");
    w.stage(o.out, clusters_csv(r));
    w.stage(sibling(o.out, ".hosts.csv"), hosts_csv(r));
    if (r.knn_metrics) w.stage(sibling(o.out, ".metrics.csv"), metrics_csv(r));
  }
  w.commit();
}

void cmd_simulate(const Options& o) {
  require(o.out, "--out");
  if (!o.flows.empty()) throw Error(Errc::ConflictingFlags, "simulate writes flows; --flows is not accepted");
  KvConfig cfg = o.scenario.empty() ? KvConfig{} : KvConfig::load(o.scenario);
  std::optional<std::uint64_t> seed;
  if (o.seed_opt && o.seed_opt->count()) seed = o.seed;
  else if (auto s = cfg.get("scenario.seed")) {
    auto v = text::to_int(*s);
    if (!v || *v < 0) throw Error(Errc::InvalidConfig, "bad scenario.seed");
    seed = static_cast<std::uint64_t>(*v);
  }
  if (!seed) throw Error(Errc::InvalidConfig, "a seed is required (--seed or scenario.seed)");
  const auto sc_cfg = ScenarioConfig::from_config(cfg);
  const auto sc = generate(sc_cfg, *seed);
  AtomicWriter w;
  w.stage(o.out, serialize_flow_csv(sc.flows));
  w.stage(sibling(o.out, ".truth.csv"), serialize_truth_csv(sc.truth));
  w.stage(sibling(o.out, ".labeled.csv"), serialize_feature_csv(labeled_features(sc, sc_cfg)));
  w.commit();
}

void cmd_report(const Options& o) {
  require(o.report, "--report");
  Json j;
  try {
    j = Json::parse(text::read_file(o.report));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::MalformedRow, std::string("report is not JSON: ") + e.what());
  }
  auto r = report_from_json(j);
  AtomicWriter w;
  if (o.format == "json") {
    w.stage(o.out, j.dump(2) + "\n");
  } else if (o.format == "csv") {
    w.stage(o.out, hosts_csv(r));
  } else {
    w.stage(o.out, render_text(r));
  }
  w.commit();
}

const std::vector<std::string> kSubcommands{"features", "graph", "cluster", "classify",
                                            "evaluate", "run",   "simulate", "report"};

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1 && argv[1][0] != '-' &&
      std::find(kSubcommands.begin(), kSubcommands.end(), argv[1]) == kSubcommands.end()) {
    std::cerr << "error: " << Error(Errc::UnknownSubcommand, std::string("'") + argv[1] + "'").what() << '\n';
    return 1;
  }

  CLI::App app{"Flow-based crypto-mining host detection"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value config file (fallback: $MINEDETECT_CONFIG)");
    sub->add_option("--out", o.out, "output path ('-' or empty for stdout)");
  };
  auto add_pipeline = [&](CLI::App* sub) {
    sub->add_option("--flows", o.flows, "unlabeled flow CSV");
    sub->add_option("--window", o.window, "window length in seconds")->capture_default_str();
    sub->add_option("--snn-k", o.snn_k, "shared neighbors needed for an SNN edge")->capture_default_str();
    sub->add_option("--knn-k", o.knn_k, "KNN neighbor count")->capture_default_str();
    sub->add_option("--format", o.format, "output format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  };

  struct Sub {
    const char* name;
    const char* help;
    void (*fn)(const Options&);
  };
  const Sub subs[] = {
      {"features", "per-host flow feature vectors", cmd_features},
      {"graph", "per-window communication graphs", cmd_graph},
      {"cluster", "SNN clusters with lifecycle states", cmd_cluster},
      {"classify", "per-host KNN predictions", cmd_classify},
      {"evaluate", "metric tables against ground truth", cmd_evaluate},
      {"run", "full detection pipeline", cmd_run},
      {"simulate", "generate a synthetic scenario", cmd_simulate},
      {"report", "render a saved report", cmd_report},
  };
  void (*chosen)(const Options&) = nullptr;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common(sub);
    const std::string name = s.name;
    if (name == "simulate") {
      sub->add_option("--scenario", o.scenario, "scenario config file (scenario.* keys)");
      sub->add_option("--seed", o.seed, "generator seed (or scenario.seed in the scenario file)");
      sub->add_option("--flows", o.flows, "not accepted; present to report a conflict");
    } else if (name == "report") {
      sub->add_option("--report", o.report, "report JSON written by 'run'");
      sub->add_option("--format", o.format, "output format")
          ->check(CLI::IsMember({"json", "csv", "text"}))
          ->capture_default_str();
    } else {
      add_pipeline(sub);
      sub->add_option("--labeled", o.labeled, "labeled feature CSV (feature columns plus class)");
      sub->add_option("--truth", o.truth, "ground-truth CSV (host,label[,recruitment_window])");
      if (name == "evaluate") sub->add_option("--report", o.report, "re-evaluate a saved report instead of running");
      if (name == "classify") sub->add_option("--save-model", o.save_model, "write the fitted KNN model");
    }
    sub->callback([&chosen, &o, sub, fn = s.fn] {
      chosen = fn;
      o.window_opt = sub->get_option_no_throw("--window");
      o.snn_opt = sub->get_option_no_throw("--snn-k");
      o.knn_opt = sub->get_option_no_throw("--knn-k");
      o.seed_opt = sub->get_option_no_throw("--seed");
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    chosen(o);
    return 0;
  } catch (const CLI::RequiredError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) std::cerr << sub->help();
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
