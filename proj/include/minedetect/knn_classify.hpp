#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "minedetect/error.hpp"
#include "minedetect/flow_model.hpp"
#include "minedetect/log.hpp"
#include "minedetect/snn_cluster.hpp"
#include "minedetect/text.hpp"

namespace minedetect {

/// Lazy KNN learner over normalized feature vectors (Euclidean distance).
struct KnnModel {
  std::vector<FeatureVector> examples;  // label is Miner or NotMiner
  std::size_t k = 5;
};

struct Prediction {
  HostId host;
  Label label = Label::NotMiner;
  double score = 0.0;  // fraction of the k neighbors labeled Miner
};

inline KnnModel fit(std::span<const FeatureVector> labeled, std::size_t k) {
  if (labeled.empty()) throw Error(Errc::EmptyTrainingSet, "no labeled examples");
  if (k < 1) throw Error(Errc::InvalidConfig, "knn k must be >= 1");
  KnnModel m;
  m.examples.reserve(labeled.size());
  for (const auto& v : labeled) {
    if (!v.normalized) throw Error(Errc::UnnormalizedInput, "training vector '" + v.host + "' is not normalized");
    if (v.label == Label::Unlabeled) throw Error(Errc::InvalidConfig, "training vector '" + v.host + "' has no label");
    m.examples.push_back(v);
  }
  m.k = k;
  if (k > m.examples.size()) {
    warn("knn k=" + std::to_string(k) + " exceeds " + std::to_string(m.examples.size()) +
         " training examples; clamped");
    m.k = m.examples.size();
  }
  return m;
}

inline double squared_distance(const FeatureVector& a, const FeatureVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

/// Indices of the k nearest examples, nearest first; equal distances keep
/// training-set order.
inline std::vector<std::size_t> nearest_examples(const KnnModel& m, const FeatureVector& v) {
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(m.examples.size());
  for (std::size_t i = 0; i < m.examples.size(); ++i) dist.emplace_back(squared_distance(v, m.examples[i]), i);
  const auto k = std::min(m.k, dist.size());
  auto kth = dist.begin() + static_cast<std::ptrdiff_t>(k);
  std::nth_element(dist.begin(), kth == dist.end() ? dist.end() - 1 : kth, dist.end());
  std::sort(dist.begin(), kth);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (auto it = dist.begin(); it != kth; ++it) out.push_back(it->second);
  return out;
}

inline Prediction predict(const KnnModel& m, const FeatureVector& v) {
  if (!v.normalized) throw Error(Errc::UnnormalizedInput, "query vector '" + v.host + "' is not normalized");
  if (m.examples.empty() || m.k < 1) throw Error(Errc::EmptyTrainingSet, "model has no examples");
  auto nearest = nearest_examples(m, v);
  std::size_t miners = 0;
  for (auto i : nearest)
    if (m.examples[i].label == Label::Miner) ++miners;
  Prediction p;
  p.host = v.host;
  p.score = static_cast<double>(miners) / static_cast<double>(nearest.size());
  if (2 * miners > nearest.size()) p.label = Label::Miner;
  else if (2 * miners < nearest.size()) p.label = Label::NotMiner;
  else p.label = m.examples[nearest.front()].label;
  return p;
}

struct ClusterVerdict {
  std::vector<Prediction> members;
  Label verdict = Label::NotMiner;
  double mean_score = 0.0;
};

/// Per-member predictions; the cluster is Miner iff the mean score exceeds 0.5.
inline ClusterVerdict predict_cluster(const KnnModel& m, const Cluster& c,
                                      const std::map<HostId, FeatureVector, std::less<>>& vectors) {
  ClusterVerdict out;
  double total = 0.0;
  for (const auto& host : c.members) {
    auto it = vectors.find(host);
    if (it == vectors.end()) throw Error(Errc::MissingVector, "no feature vector for '" + host + "' in " + c.id);
    out.members.push_back(predict(m, it->second));
    total += out.members.back().score;
  }
  if (!out.members.empty()) out.mean_score = total / static_cast<double>(out.members.size());
  out.verdict = out.mean_score > 0.5 ? Label::Miner : Label::NotMiner;
  return out;
}

// ---------------------------------------------------------------------------
// Model file:
//   minedetect-knn 1
//   k=<k>
//   features=bpp,ppm,ppf,ackpush_all,req_all,syn_all,rst_all,fin_all
//   count=<n>
//   <host>,<8 values>,<class>      (n lines)

inline constexpr std::string_view kKnnMagic = "minedetect-knn 1";

inline std::string feature_order_string() {
  std::string out;
  for (auto name : kFeatureNames) {
    if (!out.empty()) out += ',';
    out += name;
  }
  return out;
}

inline std::string save_model(const KnnModel& m) {
  std::string out(kKnnMagic);
  out += "\nk=" + std::to_string(m.k) + "\nfeatures=" + feature_order_string() +
         "\ncount=" + std::to_string(m.examples.size()) + "\n";
  for (const auto& v : m.examples) {
    out += v.host;
    for (std::size_t i = 0; i < kFeatureCount; ++i) out += ',' + text::format_double(v[i]);
    out += ',';
    out += label_name(v.label);
    out += '\n';
  }
  return out;
}

inline KnnModel load_model(std::string_view body) {
  auto rows = text::lines(body);
  if (rows.size() < 4 || text::trim(rows[0]) != kKnnMagic)
    throw Error(Errc::MalformedRow, "not a minedetect-knn version 1 file", 1);
  auto value = [&](std::size_t r, std::string_view key) {
    auto line = text::trim(rows[r]);
    if (line.substr(0, key.size() + 1) != std::string(key) + "=")
      throw Error(Errc::MalformedRow, "expected '" + std::string(key) + "='", r + 1);
    return line.substr(key.size() + 1);
  };
  KnnModel m;
  auto k = text::to_int(value(1, "k"));
  if (!k || *k < 1) throw Error(Errc::MalformedRow, "bad k", 2);
  m.k = static_cast<std::size_t>(*k);
  if (value(2, "features") != feature_order_string())
    throw Error(Errc::FeatureOrderMismatch,
                "model feature order '" + std::string(value(2, "features")) + "' differs from " + feature_order_string(), 3);
  auto count = text::to_int(value(3, "count"));
  if (!count || *count < 0 || static_cast<std::size_t>(*count) != rows.size() - 4)
    throw Error(Errc::MalformedRow, "count does not match number of examples", 4);
  for (std::size_t r = 4; r < rows.size(); ++r) {
    auto cells = text::split(rows[r], ',');
    if (cells.size() != kFeatureCount + 2) throw Error(Errc::MalformedRow, "wrong number of fields", r + 1);
    FeatureVector v;
    v.host = std::string(text::trim(cells[0]));
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      auto d = text::to_double(cells[i + 1]);
      if (!d || *d < 0.0 || *d > 1.0) throw Error(Errc::MalformedRow, "example values must be normalized", r + 1);
      v[i] = *d;
    }
    auto label = parse_label(cells.back());
    if (!label || *label == Label::Unlabeled) throw Error(Errc::MalformedRow, "bad class", r + 1);
    v.label = *label;
    v.normalized = true;
    m.examples.push_back(std::move(v));
  }
  if (m.k > m.examples.size()) throw Error(Errc::MalformedRow, "k exceeds example count", 2);
  return m;
}

}  // namespace minedetect
