#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "minedetect/error.hpp"
#include "minedetect/flow_model.hpp"
#include "minedetect/kv_config.hpp"

namespace minedetect {

/// Undirected edge with a < b.
struct Edge {
  HostId a;
  HostId b;
  std::uint64_t weight = 1;

  bool operator==(const Edge&) const = default;
};

/// Immutable undirected host graph for one time slice. Vertices are kept
/// sorted, so vertex indices and iteration order are deterministic.
class CommGraph {
 public:
  using Index = std::uint32_t;
  struct Neighbor {
    Index vertex;
    std::uint64_t weight;
  };

  CommGraph() = default;

  std::size_t timestamp() const { return timestamp_; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t edge_count() const { return edge_count_; }
  const std::vector<HostId>& vertices() const { return vertices_; }
  const HostId& name(Index i) const { return vertices_.at(i); }

  std::optional<Index> find(std::string_view host) const {
    auto it = std::lower_bound(vertices_.begin(), vertices_.end(), host,
                               [](const HostId& a, std::string_view b) { return a < b; });
    if (it == vertices_.end() || *it != host) return std::nullopt;
    return static_cast<Index>(it - vertices_.begin());
  }

  Index index_of(std::string_view host) const {
    auto i = find(host);
    if (!i) throw Error(Errc::UnknownVertex, "no vertex '" + std::string(host) + "'");
    return *i;
  }

  bool has_vertex(std::string_view host) const { return find(host).has_value(); }

  /// Neighbors of vertex i, sorted by index.
  std::span<const Neighbor> neighbors(Index i) const { return adj_.at(i); }

  std::uint64_t edge_weight(std::string_view a, std::string_view b) const {
    auto ia = find(a), ib = find(b);
    if (!ia || !ib) return 0;
    const auto& row = adj_[*ia];
    auto it = std::lower_bound(row.begin(), row.end(), *ib,
                               [](const Neighbor& n, Index v) { return n.vertex < v; });
    return it != row.end() && it->vertex == *ib ? it->weight : 0;
  }

  bool has_edge(std::string_view a, std::string_view b) const { return edge_weight(a, b) > 0; }

  bool adjacent(Index a, Index b) const {
    const auto& row = adj_[a];
    auto it = std::lower_bound(row.begin(), row.end(), b, [](const Neighbor& n, Index v) { return n.vertex < v; });
    return it != row.end() && it->vertex == b;
  }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(edge_count_);
    for (Index i = 0; i < adj_.size(); ++i)
      for (const auto& n : adj_[i])
        if (n.vertex > i) out.push_back({vertices_[i], vertices_[n.vertex], n.weight});
    return out;
  }

  CommGraph with_timestamp(std::size_t t) const {
    CommGraph g = *this;
    g.timestamp_ = t;
    return g;
  }

 private:
  friend class CommGraphBuilder;

  std::vector<HostId> vertices_;
  std::vector<std::vector<Neighbor>> adj_;
  std::size_t edge_count_ = 0;
  std::size_t timestamp_ = 0;
};

class CommGraphBuilder {
 public:
  void add_vertex(const HostId& v) { adj_.try_emplace(v); }

  /// Adds `weight` to edge {a,b}. Self-loops only register the vertex.
  void add_edge(const HostId& a, const HostId& b, std::uint64_t weight = 1) {
    add_vertex(a);
    add_vertex(b);
    if (a == b) return;
    adj_[a][b] += weight;
    adj_[b][a] += weight;
  }

  CommGraph build(std::size_t timestamp = 0) const {
    CommGraph g;
    g.timestamp_ = timestamp;
    g.vertices_.reserve(adj_.size());
    for (const auto& [v, _] : adj_) g.vertices_.push_back(v);
    g.adj_.resize(adj_.size());
    CommGraph::Index i = 0;
    for (const auto& [v, row] : adj_) {
      auto& out = g.adj_[i++];
      out.reserve(row.size());
      for (const auto& [u, w] : row) out.push_back({*g.find(u), w});
      g.edge_count_ += row.size();
    }
    g.edge_count_ /= 2;
    return g;
  }

 private:
  std::map<HostId, std::map<HostId, std::uint64_t>> adj_;
};

/// Every flow starting inside the window contributes one unit of weight to
/// the edge between its endpoints.
inline CommGraph build_graph(std::span<const FlowRecord> flows, const TimeWindow& window, std::size_t timestamp = 0) {
  if (!(window.length() > 0.0)) throw Error(Errc::InvalidConfig, "window length must be positive");
  CommGraphBuilder b;
  for (const auto& f : flows)
    if (window.contains(f.start_time)) b.add_edge(f.src_host, f.dst_host);
  return b.build(timestamp);
}

inline std::size_t vertex_degree(const CommGraph& g, std::string_view v) {
  return g.neighbors(g.index_of(v)).size();
}

/// Number of edges among the neighbors of vertex i.
inline std::uint64_t triangles_at(const CommGraph& g, CommGraph::Index i) {
  auto nv = g.neighbors(i);
  std::uint64_t twice = 0;
  for (const auto& u : nv) {
    auto nu = g.neighbors(u.vertex);
    auto a = nv.begin();
    auto b = nu.begin();
    while (a != nv.end() && b != nu.end()) {
      if (a->vertex < b->vertex) ++a;
      else if (b->vertex < a->vertex) ++b;
      else {
        ++twice;
        ++a;
        ++b;
      }
    }
  }
  return twice / 2;
}

inline double clustering_coefficient(const CommGraph& g, CommGraph::Index i) {
  const auto k = static_cast<std::uint64_t>(g.neighbors(i).size());
  if (k < 2) return 0.0;
  return 2.0 * static_cast<double>(triangles_at(g, i)) / static_cast<double>(k * (k - 1));
}

inline double clustering_coefficient(const CommGraph& g, std::string_view v) {
  return clustering_coefficient(g, g.index_of(v));
}

struct HostGraphFeatures {
  HostId host;
  std::size_t k = 0;
  double c = 0.0;
};

/// Degree and clustering coefficient for every vertex, in vertex order.
inline std::vector<HostGraphFeatures> graph_features(const CommGraph& g) {
  std::vector<HostGraphFeatures> out;
  out.reserve(g.vertex_count());
  for (CommGraph::Index i = 0; i < g.vertex_count(); ++i)
    out.push_back({g.name(i), g.neighbors(i).size(), clustering_coefficient(g, i)});
  return out;
}

using HostSet = std::set<HostId>;
/// Unordered host pairs; evolve() normalizes orientation.
using EdgeSet = std::set<std::pair<HostId, HostId>>;

/// One transition of the graph sequence: vertices (N ∪ add_v) − del_v and
/// edges (E ∪ add_e) − del_e, dropping edges incident to deleted vertices.
/// Surviving edges keep their weight; new edges get weight 1.
inline CommGraph evolve(const CommGraph& g, const HostSet& add_v, const HostSet& del_v, const EdgeSet& add_e,
                        const EdgeSet& del_e) {
  auto norm = [](const std::pair<HostId, HostId>& e) {
    return e.first < e.second ? e : std::pair{e.second, e.first};
  };
  EdgeSet removed;
  for (const auto& e : del_e) removed.insert(norm(e));

  HostSet vertices(g.vertices().begin(), g.vertices().end());
  vertices.insert(add_v.begin(), add_v.end());
  for (const auto& v : del_v) vertices.erase(v);

  CommGraphBuilder b;
  for (const auto& v : vertices) b.add_vertex(v);
  for (const auto& e : g.edges()) {
    if (!vertices.count(e.a) || !vertices.count(e.b) || removed.count({e.a, e.b})) continue;
    b.add_edge(e.a, e.b, e.weight);
  }
  for (const auto& raw : add_e) {
    auto e = norm(raw);
    if (e.first == e.second) continue;
    if (!vertices.count(e.first) || !vertices.count(e.second))
      throw Error(Errc::DanglingEdge, "edge {" + e.first + "," + e.second + "} references a missing vertex");
    if (removed.count(e) || g.has_edge(e.first, e.second)) continue;
    b.add_edge(e.first, e.second, 1);
  }
  return b.build(g.timestamp() + 1);
}

/// Edge-list text: a "# window <t>" header, one "a,b,weight" line per edge and
/// one bare line per isolated vertex.
inline std::string export_graph_text(const CommGraph& g) {
  std::string out = "# window " + std::to_string(g.timestamp()) + "\n";
  for (const auto& e : g.edges()) out += e.a + ',' + e.b + ',' + std::to_string(e.weight) + '\n';
  for (CommGraph::Index i = 0; i < g.vertex_count(); ++i)
    if (g.neighbors(i).empty()) out += g.name(i) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Mining fingerprint and window-to-window deltas

struct MiningFingerprint {
  std::set<std::uint16_t> ports{3333, 4444, 5555, 8333, 80, 443, 25};
  double min_duration = 30.0;
  FlagSet required_flags{FlagSet::ACK | FlagSet::PUSH};
  std::set<HostId> known_pools;

  bool matches(const FlowRecord& f) const {
    if (f.protocol != Protocol::TCP) return false;
    if (f.duration() < min_duration) return false;
    if (!f.flags.contains(required_flags)) return false;
    return ports.count(f.dst_port) > 0 || known_pools.count(f.dst_host) > 0;
  }

  /// Reads `fingerprint.ports`, `fingerprint.min_duration`,
  /// `fingerprint.flags` and `fingerprint.pools`; bare keys are accepted too.
  static MiningFingerprint from_config(const KvConfig& cfg) {
    MiningFingerprint fp;
    auto key = [&](const std::string& k) { return cfg.contains("fingerprint." + k) ? "fingerprint." + k : k; };
    if (auto ports = cfg.get_list(key("ports"))) {
      fp.ports.clear();
      for (const auto& p : *ports) {
        auto v = text::to_int(p);
        if (!v || *v < 0 || *v > 65535) throw Error(Errc::InvalidConfig, "bad fingerprint port '" + p + "'");
        fp.ports.insert(static_cast<std::uint16_t>(*v));
      }
    }
    fp.min_duration = cfg.get_double(key("min_duration"), fp.min_duration);
    if (auto flags = cfg.get(key("flags"))) {
      std::string joined = *flags;
      std::replace(joined.begin(), joined.end(), ',', '|');
      auto parsed = FlagSet::parse(joined);
      if (!parsed) throw Error(Errc::InvalidConfig, "bad fingerprint flags '" + *flags + "'");
      fp.required_flags = *parsed;
    }
    if (auto pools = cfg.get_list(key("pools"))) fp.known_pools = HostSet(pools->begin(), pools->end());
    return fp;
  }
};

/// Count of the host's flows starting in [until - delta_t, until) that match
/// the fingerprint.
inline std::uint64_t mining_volume(std::span<const FlowRecord> flows, std::string_view host, double delta_t,
                                   const MiningFingerprint& fp, double until) {
  if (!(delta_t > 0.0)) throw Error(Errc::InvalidConfig, "delta_t must be positive");
  std::uint64_t n = 0;
  for (const auto& f : flows)
    if (f.start_time >= until - delta_t && f.start_time < until && f.involves(host) && fp.matches(f)) ++n;
  return n;
}

/// Hosts inside the monitored perimeter, matched by id prefix.
struct Subnet {
  std::vector<std::string> prefixes;

  bool contains(std::string_view host) const {
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](const std::string& p) { return host.substr(0, p.size()) == p; });
  }

  static Subnet private_ipv4() {
    Subnet s{{"10.", "192.168."}};
    for (int i = 16; i <= 31; ++i) s.prefixes.push_back("172." + std::to_string(i) + ".");
    return s;
  }
};

struct StateParams {
  Subnet monitored_subnet = Subnet::private_ipv4();
  std::uint64_t x_threshold = 10;
  double delta_t = 60.0;
  // Window at which the external-degree test applies; unset means any window.
  std::optional<std::size_t> t_star;
  double dc_cap = 1000.0;
  // Exchanges the roles of the external and internal degree deltas in the
  // state rules.
  bool swap_degree_roles = false;
  MiningFingerprint fingerprint;

  void validate() const {
    if (x_threshold < 1) throw Error(Errc::InvalidConfig, "x_threshold must be >= 1");
    if (!(delta_t > 0.0)) throw Error(Errc::InvalidConfig, "delta_t must be positive");
    if (!(dc_cap > 1.0)) throw Error(Errc::InvalidConfig, "dc_cap must exceed 1");
  }
};

struct HostDeltas {
  HostId host;
  std::int64_t dk_ext = 0;
  std::int64_t dk_int = 0;
  double dc_factor = 1.0;
  std::vector<double> dc_history;
  std::uint64_t m_v = 0;
  std::size_t window = 0;
};

/// Prior clustering-change factors per host, oldest first.
using DcHistory = std::map<HostId, std::vector<double>, std::less<>>;

/// Ratio c_next / c_prev with 0/0 = 1 and x/0 = cap.
inline double clustering_change_factor(double c_prev, double c_next, double cap) {
  if (c_prev == 0.0) return c_next == 0.0 ? 1.0 : cap;
  return std::min(c_next / c_prev, cap);
}

/// Per-host changes between consecutive snapshots. Hosts absent from `g_t`
/// count as isolated. `dc_history` for each host is its entry in `history`,
/// front-padded with 1.0 (no change) to the window index of `g_t1`.
inline std::map<HostId, HostDeltas, std::less<>> window_deltas(const CommGraph& g_t, const CommGraph& g_t1,
                                                                const StateParams& params,
                                                                std::span<const FlowRecord> flows_t1,
                                                                double window_end, const DcHistory& history = {}) {
  if (g_t1.timestamp() != g_t.timestamp() + 1)
    throw Error(Errc::WindowMismatch, "snapshots " + std::to_string(g_t.timestamp()) + " and " +
                                          std::to_string(g_t1.timestamp()) + " are not consecutive");
  params.validate();

  struct Split {
    std::int64_t ext = 0, in = 0;
  };
  auto split_degree = [&](const CommGraph& g, CommGraph::Index i) {
    Split s;
    for (const auto& n : g.neighbors(i)) {
      if (params.monitored_subnet.contains(g.name(n.vertex))) ++s.in;
      else ++s.ext;
    }
    return s;
  };

  // One pass over the flows instead of one per host.
  std::map<std::string_view, std::uint64_t> volume;
  for (const auto& f : flows_t1) {
    if (!(f.start_time >= window_end - params.delta_t && f.start_time < window_end)) continue;
    if (!params.fingerprint.matches(f)) continue;
    ++volume[f.src_host];
    if (f.dst_host != f.src_host) ++volume[f.dst_host];
  }

  const std::size_t window = g_t1.timestamp();
  std::map<HostId, HostDeltas, std::less<>> out;
  for (CommGraph::Index i = 0; i < g_t1.vertex_count(); ++i) {
    const auto& host = g_t1.name(i);
    HostDeltas d;
    d.host = host;
    d.window = window;

    Split before, after = split_degree(g_t1, i);
    double c_before = 0.0, c_after = clustering_coefficient(g_t1, i);
    if (auto j = g_t.find(host)) {
      before = split_degree(g_t, *j);
      c_before = clustering_coefficient(g_t, *j);
    }
    d.dk_ext = after.ext - before.ext;
    d.dk_int = after.in - before.in;
    d.dc_factor = clustering_change_factor(c_before, c_after, params.dc_cap);

    if (auto it = history.find(host); it != history.end()) d.dc_history = it->second;
    if (d.dc_history.size() > window) d.dc_history.erase(d.dc_history.begin(), d.dc_history.end() - static_cast<std::ptrdiff_t>(window));
    d.dc_history.insert(d.dc_history.begin(), window - d.dc_history.size(), 1.0);

    if (auto it = volume.find(host); it != volume.end()) d.m_v = it->second;
    out.emplace(host, std::move(d));
  }
  return out;
}

}  // namespace minedetect
