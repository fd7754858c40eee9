#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "minedetect/comm_graph.hpp"
#include "minedetect/error.hpp"
#include "minedetect/flow_model.hpp"
#include "minedetect/knn_classify.hpp"
#include "minedetect/kv_config.hpp"
#include "minedetect/log.hpp"
#include "minedetect/metrics.hpp"
#include "minedetect/snn_cluster.hpp"
#include "minedetect/synthgen.hpp"
#include "minedetect/text.hpp"

namespace minedetect {

struct PipelineConfig {
  double window = 60.0;
  std::size_t k_shared = 3;
  std::size_t knn_k = 5;
  StateParams state;
  // Hosts in a lifecycle state >= S1 join the suspicious list when their
  // KNN score reaches this floor.
  double score_floor = 0.0;
  FlowSchema schema;
  // Start of window 0; unset aligns to the earliest flow, rounded down to a
  // multiple of the window length.
  std::optional<double> origin;

  void validate() const {
    if (!(window > 0.0)) throw Error(Errc::InvalidConfig, "pipeline.window must be positive");
    if (k_shared < 1) throw Error(Errc::InvalidConfig, "snn.k_shared must be >= 1");
    if (knn_k < 1) throw Error(Errc::InvalidConfig, "knn.k must be >= 1");
    if (!(score_floor >= 0.0 && score_floor <= 1.0)) throw Error(Errc::InvalidConfig, "report.score_floor must be in [0,1]");
    state.validate();
  }

  static PipelineConfig from_config(const KvConfig& cfg) {
    PipelineConfig c;
    c.window = cfg.get_double("pipeline.window", c.window);
    if (auto o = cfg.get("pipeline.origin"); o && text::trim(*o) != "auto") c.origin = cfg.get_double("pipeline.origin", 0.0);
    auto positive = [&](const std::string& key, std::size_t fallback) {
      auto v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
      if (v < 1) throw Error(Errc::InvalidConfig, key + " must be >= 1");
      return static_cast<std::size_t>(v);
    };
    c.k_shared = positive("snn.k_shared", c.k_shared);
    c.knn_k = positive("knn.k", c.knn_k);
    if (auto prefixes = cfg.get_list("state.internal_prefixes")) c.state.monitored_subnet.prefixes = *prefixes;
    c.state.x_threshold = positive("state.x_threshold", c.state.x_threshold);
    c.state.delta_t = cfg.get_double("state.delta_t", c.window);
    if (auto t = cfg.get("state.t_star"); t && text::trim(*t) != "any") {
      auto v = cfg.get_int("state.t_star", 0);
      if (v < 0) throw Error(Errc::InvalidConfig, "state.t_star must be a window index or 'any'");
      c.state.t_star = static_cast<std::size_t>(v);
    }
    c.state.dc_cap = cfg.get_double("state.dc_cap", c.state.dc_cap);
    c.state.swap_degree_roles = cfg.get_bool("state.swap_degree_roles", c.state.swap_degree_roles);
    c.state.fingerprint = MiningFingerprint::from_config(cfg);
    c.score_floor = cfg.get_double("report.score_floor", c.score_floor);
    c.schema = FlowSchema::from_config(cfg);
    c.validate();
    return c;
  }

  /// Effective settings as config keys, in a fixed order.
  std::vector<std::pair<std::string, std::string>> describe() const {
    auto join = [](const auto& items) {
      std::string out;
      for (const auto& x : items) {
        if (!out.empty()) out += ',';
        if constexpr (std::is_arithmetic_v<std::decay_t<decltype(x)>>) out += std::to_string(x);
        else out += x;
      }
      return out;
    };
    std::vector<std::pair<std::string, std::string>> out{
        {"pipeline.window", text::format_double(window)},
        {"pipeline.origin", origin ? text::format_double(*origin) : "auto"},
        {"snn.k_shared", std::to_string(k_shared)},
        {"knn.k", std::to_string(knn_k)},
        {"state.internal_prefixes", join(state.monitored_subnet.prefixes)},
        {"state.x_threshold", std::to_string(state.x_threshold)},
        {"state.delta_t", text::format_double(state.delta_t)},
        {"state.t_star", state.t_star ? std::to_string(*state.t_star) : "any"},
        {"state.dc_cap", text::format_double(state.dc_cap)},
        {"state.swap_degree_roles", state.swap_degree_roles ? "true" : "false"},
        {"fingerprint.ports", join(state.fingerprint.ports)},
        {"fingerprint.min_duration", text::format_double(state.fingerprint.min_duration)},
        {"fingerprint.flags", state.fingerprint.required_flags.to_string()},
        {"fingerprint.pools", join(state.fingerprint.known_pools)},
        {"report.score_floor", text::format_double(score_floor)},
    };
    auto schema_copy = schema;
    for (auto& [field, column] : schema_copy.mapping()) out.emplace_back("schema." + std::string(field), *column);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Step 4: label mapping

struct MappedRecord {
  FeatureVector vector;  // normalized when produced by the pipeline
  std::optional<HostGraphFeatures> graph;
};

struct LabelMapping {
  std::vector<MappedRecord> records;
  std::size_t matched = 0;
  std::size_t unmatched = 0;
};

/// Joins each labeled record to the degree and clustering coefficient of the
/// same host in the unlabeled universe. Unmatched records are kept.
inline LabelMapping map_labels(std::span<const FeatureVector> labeled, const std::set<HostId, std::less<>>& hosts,
                               const std::map<HostId, HostGraphFeatures, std::less<>>& graph_feats) {
  LabelMapping out;
  for (const auto& v : labeled) {
    MappedRecord r{v, std::nullopt};
    if (hosts.count(v.host))
      if (auto it = graph_feats.find(v.host); it != graph_feats.end()) r.graph = it->second;
    if (r.graph) ++out.matched;
    else ++out.unmatched;
    out.records.push_back(std::move(r));
  }
  if (!labeled.empty() && out.matched == 0)
    warn("no labeled host appears in the unlabeled flows; continuing on flow features only");
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct StepRecord {
  int step = 0;
  std::string name;
  std::size_t rows_in = 0;
  std::size_t rows_out = 0;
};

struct HostRow {
  HostId host;
  bool internal = false;
  std::size_t k = 0;
  double c = 0.0;
  State state = State::S0;            // highest lifecycle state over all windows
  std::vector<State> states;          // per window
  std::vector<std::string> rules;     // rule that produced each window's state
  std::optional<Prediction> prediction;
  std::string cluster;
  bool suspicious = false;
  std::optional<Label> truth;
};

struct ClusterRow {
  Cluster cluster;
  State lifecycle = State::S0;  // max member state before any classifier override
  Label verdict = Label::NotMiner;
  double mean_score = 0.0;
};

struct DetectionReport {
  PipelineConfig config;
  double origin = 0.0;
  std::size_t n_windows = 0;
  std::vector<ClusterRow> clusters;
  std::vector<HostRow> hosts;  // sorted by host id
  std::vector<HostId> suspicious;
  LabelMapping mapping;
  std::optional<MetricTable> knn_metrics;
  std::optional<MetricTable> state_metrics;
  std::optional<MetricTable> suspicious_metrics;
  std::vector<StepRecord> steps;
  std::map<std::string, std::string> input_digests;
  std::string generated_at;
  std::vector<std::string> warnings;

  const HostRow* find_host(std::string_view h) const {
    auto it = std::lower_bound(hosts.begin(), hosts.end(), h, [](const HostRow& r, std::string_view x) { return r.host < x; });
    return it != hosts.end() && it->host == h ? &*it : nullptr;
  }
};

/// L* membership rule shared by the pipeline and by report consumers.
inline bool is_suspicious(const HostRow& h, double score_floor) {
  const double score = h.prediction ? h.prediction->score : 0.0;
  const bool miner = h.prediction && h.prediction->label == Label::Miner;
  return miner || (state_rank(h.state) >= 1 && score >= score_floor);
}

/// Score used for ranking metrics of the suspicious-list detector.
inline double suspicion_score(const HostRow& h) {
  const double knn = h.prediction ? h.prediction->score : 0.0;
  return std::max(knn, state_rank(h.state) / 3.0);
}

/// Metric tables over the hosts that carry a truth label, or nothing when a
/// class is missing.
inline void compute_metrics(DetectionReport& r) {
  std::vector<Label> truth, knn_pred, state_pred, sus_pred;
  std::vector<double> knn_score, state_score, sus_score;
  for (const auto& h : r.hosts) {
    if (!h.truth || !h.prediction) continue;
    truth.push_back(*h.truth);
    knn_pred.push_back(h.prediction->label);
    knn_score.push_back(h.prediction->score);
    state_pred.push_back(state_rank(h.state) >= 1 ? Label::Miner : Label::NotMiner);
    state_score.push_back(state_rank(h.state) / 3.0);
    sus_pred.push_back(h.suspicious ? Label::Miner : Label::NotMiner);
    sus_score.push_back(suspicion_score(h));
  }
  const auto miners = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), Label::Miner));
  if (miners == 0 || miners == truth.size()) {
    r.knn_metrics.reset();
    r.state_metrics.reset();
    r.suspicious_metrics.reset();
    return;
  }
  r.knn_metrics = metric_table(truth, knn_pred, knn_score);
  r.state_metrics = metric_table(truth, state_pred, state_score);
  r.suspicious_metrics = metric_table(truth, sus_pred, sus_score);
}

// ---------------------------------------------------------------------------
// The ten-step run

namespace detail {

template <class F>
auto at_step(int step, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.step()) throw;
    throw e.with_step(step);
  }
}

}  // namespace detail

/// Runs the detection over already-parsed inputs. `truth`, when present,
/// overrides the labels of matched labeled records as evaluation ground truth.
inline DetectionReport run_parsed(std::span<const FlowRecord> flows, std::span<const FeatureVector> labeled,
                                  const PipelineConfig& config, const std::optional<GroundTruth>& truth = std::nullopt,
                                  std::size_t rows_read = 0) {
  DetectionReport r;
  r.config = config;
  std::vector<std::string> warnings;
  auto sink = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  struct Restore {
    WarningSink& prev;
    ~Restore() { set_warning_sink(std::move(prev)); }
  } restore{sink};

  detail::at_step(1, [&] { config.validate(); });
  r.steps.push_back({1, "read", rows_read ? rows_read : flows.size() + labeled.size(), flows.size() + labeled.size()});

  // Windowing over flow start times.
  const double w = config.window;
  if (!flows.empty()) {
    double lo = flows.front().start_time, hi = lo;
    for (const auto& f : flows) {
      lo = std::min(lo, f.start_time);
      hi = std::max(hi, f.start_time);
    }
    r.origin = config.origin ? *config.origin : std::floor(lo / w) * w;
    if (lo < r.origin) throw Error(Errc::InvalidConfig, "pipeline.origin is after the first flow").with_step(3);
    r.n_windows = static_cast<std::size_t>(std::floor((hi - r.origin) / w)) + 1;
  }
  const TimeWindow span{r.origin, r.origin + static_cast<double>(std::max<std::size_t>(r.n_windows, 1)) * w};

  // Step 2: features over the whole span, normalized on the union of both sets.
  std::map<HostId, FeatureVector, std::less<>> host_vectors;
  std::vector<FeatureVector> train;
  detail::at_step(2, [&] {
    auto raw = flows.empty() ? std::vector<FeatureVector>{} : aggregate_all_hosts(flows, span);
    std::vector<FeatureVector> all = raw;
    all.insert(all.end(), labeled.begin(), labeled.end());
    if (all.empty()) return;
    const auto params = fit_normalizer(all);
    for (const auto& v : raw) host_vectors.emplace(v.host, normalize(v, params));
    for (const auto& v : labeled) train.push_back(normalize(v, params));
  });
  r.steps.push_back({2, "normalize", host_vectors.size() + labeled.size(), host_vectors.size() + train.size()});

  // Step 3: per-window graphs plus the whole-span graph.
  std::vector<std::vector<FlowRecord>> per_window(r.n_windows);
  std::vector<CommGraph> graphs;
  CommGraph whole;
  std::map<HostId, HostGraphFeatures, std::less<>> graph_feats;
  detail::at_step(3, [&] {
    for (const auto& f : flows) {
      auto idx = static_cast<std::size_t>(std::floor((f.start_time - r.origin) / w));
      per_window[std::min(idx, r.n_windows - 1)].push_back(f);
    }
    for (std::size_t t = 0; t < r.n_windows; ++t) {
      const TimeWindow win{r.origin + static_cast<double>(t) * w, r.origin + static_cast<double>(t + 1) * w};
      graphs.push_back(build_graph(per_window[t], win, t));
    }
    whole = build_graph(flows, span, 0);
    for (auto& g : graph_features(whole)) graph_feats.emplace(g.host, std::move(g));
  });
  r.steps.push_back({3, "graph_features", flows.size(), graph_feats.size()});

  // Step 4: label mapping.
  std::set<HostId, std::less<>> universe;
  for (const auto& [h, _] : host_vectors) universe.insert(h);
  r.mapping = detail::at_step(4, [&] { return map_labels(train, universe, graph_feats); });
  r.steps.push_back({4, "map_labels", train.size(), r.mapping.matched});

  // Step 5: SNN clustering of the whole-span graph.
  std::vector<Cluster> clusters = detail::at_step(5, [&] { return extract_clusters(build_snn_graph(whole, config.k_shared)); });
  r.steps.push_back({5, "snn_cluster", whole.vertex_count(), clusters.size()});

  // Step 6: lifecycle states per window for hosts inside the monitored subnet.
  std::map<HostId, HostRow, std::less<>> rows;
  std::size_t evaluated = 0;
  detail::at_step(6, [&] {
    for (const auto& h : whole.vertices()) {
      HostRow row;
      row.host = h;
      row.internal = config.state.monitored_subnet.contains(h);
      row.k = graph_feats.at(h).k;
      row.c = graph_feats.at(h).c;
      row.states.assign(r.n_windows, State::S0);
      row.rules.assign(r.n_windows, row.internal ? "S0: first window" : "S0: external host");
      rows.emplace(h, std::move(row));
    }
    DcHistory history;
    std::map<HostId, std::vector<HostDeltas>, std::less<>> past;
    for (const auto& h : whole.vertices()) history[h] = {1.0};
    for (std::size_t t = 1; t < r.n_windows; ++t) {
      const double window_end = r.origin + static_cast<double>(t + 1) * w;
      auto deltas = window_deltas(graphs[t - 1], graphs[t], config.state, per_window[t], window_end, history);
      for (auto& [host, row] : rows) {
        auto it = deltas.find(host);
        if (it == deltas.end()) {
          if (row.internal) row.rules[t] = "S0: absent from window";
          continue;
        }
        if (!row.internal) continue;
        ++evaluated;
        auto decision = decide_state(it->second, past[host], config.state);
        row.states[t] = decision.state;
        row.rules[t] = std::string(decision.rule);
        if (state_rank(decision.state) > state_rank(row.state)) row.state = decision.state;
      }
      for (auto& [host, hist] : history) {
        auto it = deltas.find(host);
        hist.push_back(it == deltas.end() ? 1.0 : it->second.dc_factor);
        if (it != deltas.end()) past[host].push_back(std::move(it->second));
      }
    }
    std::map<HostId, State, std::less<>> host_states;
    for (const auto& [h, row] : rows) host_states.emplace(h, row.state);
    for (auto& c : clusters) c.state = cluster_state(c, host_states);
  });
  {
    std::size_t flagged = 0;
    for (const auto& [_, row] : rows) flagged += state_rank(row.state) >= 1;
    r.steps.push_back({6, "assign_states", evaluated, flagged});
  }

  // Step 7: KNN on the labeled set.
  std::optional<KnnModel> model;
  std::vector<FeatureVector> examples;
  for (const auto& v : train)
    if (v.label != Label::Unlabeled) examples.push_back(v);
  if (!examples.empty()) model = detail::at_step(7, [&] { return fit(examples, config.knn_k); });
  else if (!host_vectors.empty()) warn("no labeled examples; hosts and clusters are left unclassified");
  r.steps.push_back({7, "fit_knn", train.size(), model ? model->examples.size() : 0});

  // Step 8: classify hosts and clusters, derive L*.
  detail::at_step(8, [&] {
    for (const auto& c : clusters) {
      ClusterRow cr;
      cr.cluster = c;
      cr.lifecycle = c.state;
      cr.cluster.profile = cluster_profile(c, host_vectors);
      if (!model) {
        for (const auto& m : c.members) rows.at(m).cluster = c.id;
        r.clusters.push_back(std::move(cr));
        continue;
      }
      auto verdict = predict_cluster(*model, c, host_vectors);
      cr.verdict = verdict.verdict;
      cr.mean_score = verdict.mean_score;
      if (cr.verdict == Label::NotMiner && c.state == State::S0) cr.cluster.state = State::Benign;
      for (auto& p : verdict.members) {
        auto& row = rows.at(p.host);
        row.cluster = c.id;
        row.prediction = std::move(p);
      }
      r.clusters.push_back(std::move(cr));
    }
  });
  for (auto& [_, row] : rows) {
    row.suspicious = is_suspicious(row, config.score_floor);
    if (row.suspicious) r.suspicious.push_back(row.host);
  }
  r.steps.push_back({8, "classify", rows.size(), r.suspicious.size()});

  // Step 9: ground truth from the truth file, else from matched labeled records.
  std::size_t with_truth = 0;
  if (truth) {
    for (auto& [h, row] : rows)
      if (auto it = truth->hosts.find(h); it != truth->hosts.end()) row.truth = it->second.label;
  } else {
    for (const auto& rec : r.mapping.records)
      if (rec.graph && rec.vector.label != Label::Unlabeled)
        if (auto it = rows.find(rec.vector.host); it != rows.end()) it->second.truth = rec.vector.label;
  }
  for (auto& [_, row] : rows) {
    with_truth += row.truth.has_value();
    r.hosts.push_back(std::move(row));
  }
  detail::at_step(9, [&] { compute_metrics(r); });
  r.steps.push_back({9, "metrics", with_truth, r.knn_metrics ? r.knn_metrics->instances : 0});

  r.steps.push_back({10, "report", r.hosts.size(), r.clusters.size()});
  r.warnings = std::move(warnings);
  return r;
}

struct PipelineInputs {
  std::string flows_csv;
  std::string labeled_csv;
  std::optional<std::string> truth_csv;
};

/// Parses the raw inputs (step 1) and runs the pipeline.
inline DetectionReport run(const PipelineInputs& in, const PipelineConfig& config) {
  auto flows = detail::at_step(1, [&] { return parse_flow_csv(in.flows_csv, config.schema); });
  auto labeled = detail::at_step(1, [&] { return parse_feature_csv(in.labeled_csv); });
  std::optional<GroundTruth> truth;
  if (in.truth_csv) truth = detail::at_step(1, [&] { return parse_truth_csv(*in.truth_csv); });
  const auto rows = text::lines(in.flows_csv).size() + text::lines(in.labeled_csv).size();
  auto report = run_parsed(flows, labeled, config, truth, rows >= 2 ? rows - 2 : 0);
  report.input_digests["flows"] = "fnv1a64:" + text::fnv1a64(in.flows_csv);
  report.input_digests["labeled"] = "fnv1a64:" + text::fnv1a64(in.labeled_csv);
  if (in.truth_csv) report.input_digests["truth"] = "fnv1a64:" + text::fnv1a64(*in.truth_csv);
  return report;
}

}  // namespace minedetect
