#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "minedetect/error.hpp"
#include "minedetect/metrics.hpp"
#include "minedetect/pipeline.hpp"
#include "minedetect/text.hpp"

// JSON and CSV renderings of a DetectionReport. The JSON layout is described
// in docs/report-schema.md.
namespace minedetect {

using Json = nlohmann::ordered_json;

inline constexpr int kReportVersion = 1;

inline Json metrics_to_json(const ClassMetrics& m) {
  return Json{{"tp_rate", m.tp_rate},     {"fp_rate", m.fp_rate}, {"precision", m.precision},
              {"recall", m.recall},       {"f_measure", m.f_measure}, {"mcc", m.mcc},
              {"roc_area", m.roc_area},   {"prc_area", m.prc_area},
              {"undefined_cells", m.undefined_cells}};
}

inline Json table_to_json(const MetricTable& t) {
  return Json{{"confusion", {{"tp", t.matrix.tp}, {"fp", t.matrix.fp}, {"fn", t.matrix.fn}, {"tn", t.matrix.tn}}},
              {"instances", t.instances},
              {"accuracy", t.accuracy},
              {"rows",
               {{"Not Miner", metrics_to_json(t.not_miner)},
                {"Miner", metrics_to_json(t.miner)},
                {"Avg.", metrics_to_json(t.average)}}}};
}

inline Json report_to_json(const DetectionReport& r) {
  Json j;
  j["format"] = "minedetect-report";
  j["version"] = kReportVersion;

  Json cfg = Json::object();
  for (const auto& [k, v] : r.config.describe()) cfg[k] = v;
  j["config"] = cfg;

  Json steps = Json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"step", s.step}, {"name", s.name}, {"rows_in", s.rows_in}, {"rows_out", s.rows_out}});
  Json digests = Json::object();
  for (const auto& [k, v] : r.input_digests) digests[k] = v;
  j["provenance"] = {{"steps", steps}, {"input_digests", digests}, {"generated_at", r.generated_at}};
  j["windows"] = {{"origin", r.origin}, {"length", r.config.window}, {"count", r.n_windows}};

  Json clusters = Json::array();
  std::size_t total = 0;
  for (const auto& c : r.clusters) total += c.cluster.size();
  for (const auto& c : r.clusters) {
    Json centroid = Json::object();
    if (c.cluster.profile)
      for (std::size_t i = 0; i < kFeatureCount; ++i) centroid[std::string(kFeatureNames[i])] = (*c.cluster.profile)[i];
    clusters.push_back({{"id", c.cluster.id},
                        {"size", c.cluster.size()},
                        {"share", total ? static_cast<double>(c.cluster.size()) / static_cast<double>(total) : 0.0},
                        {"state", state_name(c.cluster.state)},
                        {"lifecycle", state_name(c.lifecycle)},
                        {"verdict", label_name(c.verdict)},
                        {"mean_score", c.mean_score},
                        {"centroid", centroid},
                        {"members", c.cluster.members}});
  }
  j["clusters"] = clusters;

  Json hosts = Json::array();
  for (const auto& h : r.hosts) {
    Json states = Json::array();
    for (auto s : h.states) states.push_back(state_name(s));
    Json row{{"host", h.host},
             {"internal", h.internal},
             {"k", h.k},
             {"c", h.c},
             {"state", state_name(h.state)},
             {"states", states},
             {"rules", h.rules},
             {"cluster", h.cluster}};
    if (h.prediction) {
      row["label"] = label_name(h.prediction->label);
      row["score"] = h.prediction->score;
    } else {
      row["label"] = nullptr;
      row["score"] = nullptr;
    }
    row["suspicious"] = h.suspicious;
    row["truth"] = h.truth ? Json(label_name(*h.truth)) : Json(nullptr);
    hosts.push_back(std::move(row));
  }
  j["hosts"] = hosts;
  j["suspicious"] = r.suspicious;
  j["label_mapping"] = {{"labeled", r.mapping.records.size()},
                        {"matched", r.mapping.matched},
                        {"unmatched", r.mapping.unmatched}};
  if (r.knn_metrics) {
    j["metrics"] = {{"knn", table_to_json(*r.knn_metrics)},
                    {"state", table_to_json(*r.state_metrics)},
                    {"suspicious", table_to_json(*r.suspicious_metrics)}};
  }
  j["warnings"] = r.warnings;
  return j;
}

/// Report text with a trailing newline. Two runs on identical inputs differ
/// only in provenance.generated_at.
inline std::string report_json_text(const DetectionReport& r) { return report_to_json(r).dump(2) + "\n"; }

/// id,size,state,verdict,mean_score,<8 centroid columns>,members ('|'-joined)
inline std::string clusters_csv(const DetectionReport& r) {
  std::string out = "id,size,state,verdict,mean_score";
  for (auto n : kFeatureNames) out += ',' + std::string(n);
  out += ",members\n";
  for (const auto& c : r.clusters) {
    out += c.cluster.id + ',' + std::to_string(c.cluster.size()) + ',' + std::string(state_name(c.cluster.state)) + ',' +
           std::string(label_name(c.verdict)) + ',' + text::format_double(c.mean_score);
    for (std::size_t i = 0; i < kFeatureCount; ++i)
      out += ',' + (c.cluster.profile ? text::format_double((*c.cluster.profile)[i]) : std::string());
    out += ',';
    for (std::size_t i = 0; i < c.cluster.members.size(); ++i) out += (i ? "|" : "") + c.cluster.members[i];
    out += '\n';
  }
  return out;
}

inline std::string hosts_csv(const DetectionReport& r) {
  std::string out = "host,internal,k,c,state,cluster,label,score,suspicious,truth\n";
  for (const auto& h : r.hosts) {
    out += h.host + ',' + (h.internal ? "1" : "0") + ',' + std::to_string(h.k) + ',' + text::format_double(h.c) + ',' +
           std::string(state_name(h.state)) + ',' + h.cluster + ',';
    out += h.prediction ? std::string(label_name(h.prediction->label)) + ',' + text::format_double(h.prediction->score)
                        : std::string(",");
    out += std::string(",") + (h.suspicious ? "1" : "0") + ',' + (h.truth ? std::string(label_name(*h.truth)) : "");
    out += '\n';
  }
  return out;
}

/// All metric tables, each preceded by a "# <detector>" line. Empty when the
/// report has no metrics.
inline std::string metrics_csv(const DetectionReport& r) {
  if (!r.knn_metrics) return {};
  return "# knn\n" + metric_table_csv(*r.knn_metrics) + "# state\n" + metric_table_csv(*r.state_metrics) +
         "# suspicious\n" + metric_table_csv(*r.suspicious_metrics);
}

/// Rebuilds a report from its JSON form. Provenance and label mapping are
/// not restored; metric tables are recomputed from the per-host truth.
inline DetectionReport report_from_json(const Json& j) {
  if (j.value("format", "") != "minedetect-report")
    throw Error(Errc::MalformedRow, "not a minedetect report");
  if (j.value("version", 0) != kReportVersion)
    throw Error(Errc::MalformedRow, "unsupported report version " + std::to_string(j.value("version", 0)));
  DetectionReport r;
  try {
    if (j.contains("config") && j["config"].contains("report.score_floor"))
      r.config.score_floor = std::stod(j["config"]["report.score_floor"].get<std::string>());
    r.n_windows = j.at("windows").at("count").get<std::size_t>();
    r.origin = j.at("windows").at("origin").get<double>();
    r.config.window = j.at("windows").at("length").get<double>();
    for (const auto& h : j.at("hosts")) {
      HostRow row;
      row.host = h.at("host").get<std::string>();
      row.internal = h.at("internal").get<bool>();
      row.k = h.at("k").get<std::size_t>();
      row.c = h.at("c").get<double>();
      auto st = parse_state(h.at("state").get<std::string>());
      if (!st) throw Error(Errc::MalformedRow, "bad state for host " + row.host);
      row.state = *st;
      row.cluster = h.at("cluster").get<std::string>();
      if (!h.at("label").is_null()) {
        Prediction p;
        p.host = row.host;
        p.label = parse_label(h.at("label").get<std::string>()).value_or(Label::NotMiner);
        p.score = h.at("score").get<double>();
        row.prediction = p;
      }
      row.suspicious = h.at("suspicious").get<bool>();
      if (!h.at("truth").is_null()) row.truth = parse_label(h.at("truth").get<std::string>());
      for (const auto& s : h.at("states")) row.states.push_back(parse_state(s.get<std::string>()).value_or(State::S0));
      row.rules = h.at("rules").get<std::vector<std::string>>();
      r.hosts.push_back(std::move(row));
    }
    for (const auto& c : j.at("clusters")) {
      ClusterRow cr;
      cr.cluster.id = c.at("id").get<std::string>();
      cr.cluster.members = c.at("members").get<std::vector<HostId>>();
      cr.cluster.state = parse_state(c.at("state").get<std::string>()).value_or(State::S0);
      cr.lifecycle = parse_state(c.at("lifecycle").get<std::string>()).value_or(State::S0);
      cr.verdict = parse_label(c.at("verdict").get<std::string>()).value_or(Label::NotMiner);
      cr.mean_score = c.at("mean_score").get<double>();
      if (!c.at("centroid").empty()) {
        std::array<double, kFeatureCount> p{};
        for (std::size_t i = 0; i < kFeatureCount; ++i) p[i] = c.at("centroid").at(std::string(kFeatureNames[i])).get<double>();
        cr.cluster.profile = p;
      }
      r.clusters.push_back(std::move(cr));
    }
    for (const auto& s : j.at("suspicious")) r.suspicious.push_back(s.get<std::string>());
    compute_metrics(r);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedRow, std::string("report JSON: ") + e.what());
  }
  return r;
}

/// Recomputes metric tables for `r` against `truth`.
inline void evaluate_against(DetectionReport& r, const GroundTruth& truth) {
  for (auto& h : r.hosts) {
    auto it = truth.hosts.find(h.host);
    h.truth = it == truth.hosts.end() ? std::nullopt : std::optional<Label>(it->second.label);
  }
  compute_metrics(r);
}

/// Plain-text summary for terminals.
inline std::string render_text(const DetectionReport& r) {
  std::string out;
  out += "windows: " + std::to_string(r.n_windows) + "\n";
  out += "clusters: " + std::to_string(r.clusters.size()) + "\n";
  for (const auto& c : r.clusters)
    out += "  " + c.cluster.id + " size=" + std::to_string(c.cluster.size()) + " state=" +
           std::string(state_name(c.cluster.state)) + " verdict=" + std::string(label_name(c.verdict)) + "\n";
  out += "suspicious hosts: " + std::to_string(r.suspicious.size()) + "\n";
  for (const auto& h : r.suspicious) out += "  " + h + "\n";
  auto table = [&](const char* name, const std::optional<MetricTable>& t) {
    if (!t) return;
    out += std::string("metrics (") + name + "):\n" + metric_table_csv(*t);
  };
  table("knn", r.knn_metrics);
  table("state", r.state_metrics);
  table("suspicious", r.suspicious_metrics);
  return out;
}

}  // namespace minedetect
