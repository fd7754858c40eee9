#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "minedetect/comm_graph.hpp"
#include "minedetect/error.hpp"
#include "minedetect/flow_model.hpp"

namespace minedetect {

/// Mining lifecycle: S0 untouched, S1 recruitment, S2 pool coordination
/// growth, S3 sustained mining. Benign is only set by a classifier override.
enum class State : std::uint8_t { S0 = 0, S1 = 1, S2 = 2, S3 = 3, Benign = 4 };

inline std::string_view state_name(State s) {
  switch (s) {
    case State::S0: return "S0";
    case State::S1: return "S1";
    case State::S2: return "S2";
    case State::S3: return "S3";
    case State::Benign: return "Benign";
  }
  return "S0";
}

inline std::optional<State> parse_state(std::string_view s) {
  for (auto st : {State::S0, State::S1, State::S2, State::S3, State::Benign})
    if (state_name(st) == s) return st;
  return std::nullopt;
}

/// Lifecycle rank; Benign ranks with S0.
inline int state_rank(State s) { return s == State::Benign ? 0 : static_cast<int>(s); }

inline std::size_t shared_neighbors(const CommGraph& g, CommGraph::Index i, CommGraph::Index j) {
  if (i == j) throw Error(Errc::SameVertex, "shared_neighbors needs two distinct vertices");
  auto a = g.neighbors(i), b = g.neighbors(j);
  std::size_t n = 0;
  auto x = a.begin();
  auto y = b.begin();
  while (x != a.end() && y != b.end()) {
    if (x->vertex < y->vertex) ++x;
    else if (y->vertex < x->vertex) ++y;
    else {
      ++n;
      ++x;
      ++y;
    }
  }
  return n;
}

inline std::size_t shared_neighbors(const CommGraph& g, std::string_view i, std::string_view j) {
  auto a = g.index_of(i), b = g.index_of(j);
  if (a == b) throw Error(Errc::SameVertex, "shared_neighbors('" + std::string(i) + "') with itself");
  return shared_neighbors(g, a, b);
}

/// The derived graph G*: same vertices as the base graph, with an edge
/// wherever two vertices share at least k_shared neighbors.
struct SnnGraph {
  struct Link {
    CommGraph::Index a;
    CommGraph::Index b;
    std::uint32_t shared;
  };

  std::vector<HostId> vertices;
  std::size_t k_shared = 1;
  std::vector<Link> edges;  // a < b, sorted

  bool has_edge(CommGraph::Index a, CommGraph::Index b) const {
    if (a > b) std::swap(a, b);
    return std::binary_search(edges.begin(), edges.end(), Link{a, b, 0},
                              [](const Link& x, const Link& y) { return std::pair{x.a, x.b} < std::pair{y.a, y.b}; });
  }
};

/// Counts common neighbors by walking two-hop paths from each vertex, so the
/// cost is the sum of squared degrees rather than |V|^3.
inline SnnGraph build_snn_graph(const CommGraph& g, std::size_t k_shared) {
  if (k_shared < 1) throw Error(Errc::InvalidConfig, "k_shared must be >= 1");
  SnnGraph s;
  s.vertices = g.vertices();
  s.k_shared = k_shared;
  const auto n = static_cast<CommGraph::Index>(g.vertex_count());
  std::vector<std::uint32_t> count(n, 0);
  std::vector<CommGraph::Index> touched;
  for (CommGraph::Index i = 0; i < n; ++i) {
    touched.clear();
    for (const auto& m : g.neighbors(i)) {
      for (const auto& j : g.neighbors(m.vertex)) {
        if (j.vertex <= i) continue;
        if (count[j.vertex]++ == 0) touched.push_back(j.vertex);
      }
    }
    std::sort(touched.begin(), touched.end());
    for (auto j : touched) {
      if (count[j] >= k_shared) s.edges.push_back({i, j, count[j]});
      count[j] = 0;
    }
  }
  return s;
}

struct Cluster {
  std::string id;
  std::vector<HostId> members;  // sorted
  State state = State::S0;
  std::optional<std::array<double, kFeatureCount>> profile;

  std::size_t size() const { return members.size(); }
};

/// Connected components of G*, largest first, ties broken by smallest member;
/// ids C0, C1, ... follow that order.
inline std::vector<Cluster> extract_clusters(const SnnGraph& s) {
  const auto n = s.vertices.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : s.edges) {
    auto ra = root(e.a), rb = root(e.b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }

  std::map<std::size_t, std::vector<HostId>> groups;
  for (std::size_t v = 0; v < n; ++v) groups[root(v)].push_back(s.vertices[v]);

  std::vector<Cluster> out;
  out.reserve(groups.size());
  for (auto& [_, members] : groups) out.push_back(Cluster{"", std::move(members), State::S0, std::nullopt});
  std::sort(out.begin(), out.end(), [](const Cluster& a, const Cluster& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.members.front() < b.members.front();
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = "C" + std::to_string(i);
  return out;
}

struct StateDecision {
  State state = State::S0;
  std::string_view rule;
};

/// First-match state rules, evaluated in order:
///   S1  external degree grew by more than one (at t*, when configured)
///   S2  internal growth beats external, clustering rose past every prior factor
///   S3  internal degree grew by more than one and mining volume exceeds X*
///   S0  otherwise
inline StateDecision decide_state(const HostDeltas& d, std::span<const HostDeltas> history, const StateParams& p) {
  const auto ext = p.swap_degree_roles ? d.dk_int : d.dk_ext;
  const auto in = p.swap_degree_roles ? d.dk_ext : d.dk_int;

  double prior_max = -std::numeric_limits<double>::infinity();
  for (double f : d.dc_history) prior_max = std::max(prior_max, f);
  for (const auto& h : history)
    if (h.window < d.window) prior_max = std::max(prior_max, h.dc_factor);

  const bool at_t_star = !p.t_star || d.window == *p.t_star;
  if (ext > 1 && at_t_star) return {State::S1, "S1: dk_ext > 1"};
  if (in > ext && d.dc_factor > 1.0 && d.dc_factor > prior_max)
    return {State::S2, "S2: dk_int > dk_ext && dc > 1 && dc > max(history)"};
  if (in > 1 && d.m_v > p.x_threshold) return {State::S3, "S3: dk_int > 1 && m_v > X*"};
  return {State::S0, "S0: no rule fired"};
}

inline State assign_state(const HostDeltas& d, std::span<const HostDeltas> history, const StateParams& p) {
  return decide_state(d, history, p).state;
}

inline State cluster_state(const Cluster& c, const std::map<HostId, State, std::less<>>& host_states) {
  State best = State::S0;
  for (const auto& m : c.members) {
    auto it = host_states.find(m);
    if (it == host_states.end()) throw Error(Errc::MissingHostState, "no state for host '" + m + "' in " + c.id);
    if (state_rank(it->second) > state_rank(best)) best = it->second;
  }
  return best;
}

/// Per-feature centroid of the members' normalized vectors, in feature order.
inline std::array<double, kFeatureCount> cluster_profile(const Cluster& c,
                                                         const std::map<HostId, FeatureVector, std::less<>>& vectors) {
  if (c.members.empty()) throw Error(Errc::MissingVector, "cluster " + c.id + " has no members");
  std::array<double, kFeatureCount> sum{};
  for (const auto& m : c.members) {
    auto it = vectors.find(m);
    if (it == vectors.end()) throw Error(Errc::MissingVector, "no feature vector for host '" + m + "' in " + c.id);
    if (!it->second.normalized) throw Error(Errc::UnnormalizedInput, "vector for '" + m + "' is not normalized");
    for (std::size_t i = 0; i < kFeatureCount; ++i) sum[i] += it->second[i];
  }
  for (auto& x : sum) x /= static_cast<double>(c.members.size());
  return sum;
}

}  // namespace minedetect
