#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "minedetect/error.hpp"
#include "minedetect/flow_model.hpp"
#include "minedetect/kv_config.hpp"
#include "minedetect/snn_cluster.hpp"

namespace minedetect {

/// SplitMix64. Every derived draw is defined here so another implementation
/// can reproduce generated scenarios bit for bit (see docs/prng.md).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1) from the top 53 bits.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(unit() * static_cast<double>(n)); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  bool chance(double p) { return unit() < p; }

 private:
  std::uint64_t state_;
};

struct ScenarioConfig {
  std::size_t n_hosts = 200;
  std::size_t ring_degree = 6;
  double rewire = 0.1;
  std::size_t n_windows = 6;
  double window = 60.0;
  std::size_t victims = 10;
  // Victims recruited per window; empty spreads them evenly over windows 1..n-1.
  std::vector<std::size_t> schedule;
  std::string subnet = "10.0.";
  // The first server receives the mining sessions; all are kept alive after registration.
  std::vector<HostId> pool_servers{"203.0.113.10", "203.0.113.11"};
  // Short-lived external endpoints each victim touches only while registering.
  std::size_t registration_hosts = 3;
  std::uint16_t mining_port = 3333;
  std::uint16_t coordination_port = 7777;
  double mining_min_duration = 35.0;
  double mining_max_duration = 58.0;
  std::size_t mining_flows = 24;  // mining sessions per victim per window
  std::size_t benign_rate = 2;    // mean conversations per small-world edge per window

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(Errc::InvalidConfig, m); };
    if (n_hosts < 3) bad("n_hosts must be >= 3");
    if (ring_degree < 2 || ring_degree % 2 != 0 || ring_degree >= n_hosts) bad("ring_degree must be even, >= 2 and < n_hosts");
    if (!(rewire >= 0.0 && rewire <= 1.0)) bad("rewire must be in [0,1]");
    if (n_windows < 1) bad("n_windows must be >= 1");
    if (!(window > 0.0)) bad("window must be positive");
    if (victims > n_hosts) bad("victims exceed n_hosts");
    if (victims > 0 && n_windows < 2 && schedule.empty()) bad("recruiting victims needs at least 2 windows");
    if (!schedule.empty()) {
      if (schedule.size() != n_windows) bad("schedule needs one entry per window");
      std::size_t total = 0;
      for (auto s : schedule) total += s;
      if (total != victims) bad("schedule must recruit exactly `victims` hosts");
    }
    if (victims > 0 && pool_servers.empty()) bad("pool_servers must not be empty");
    if (!(mining_min_duration > 0.0 && mining_max_duration >= mining_min_duration)) bad("bad mining duration range");
    if (benign_rate < 1) bad("benign_rate must be >= 1");
  }

  /// Reads `scenario.<field>` keys.
  static ScenarioConfig from_config(const KvConfig& cfg) {
    ScenarioConfig c;
    auto count = [&](const char* key, std::size_t fallback) {
      auto v = cfg.get_int(std::string("scenario.") + key, static_cast<std::int64_t>(fallback));
      if (v < 0) throw Error(Errc::InvalidConfig, std::string("scenario.") + key + " must be non-negative");
      return static_cast<std::size_t>(v);
    };
    c.n_hosts = count("n_hosts", c.n_hosts);
    c.ring_degree = count("ring_degree", c.ring_degree);
    c.rewire = cfg.get_double("scenario.rewire", c.rewire);
    c.n_windows = count("n_windows", c.n_windows);
    c.window = cfg.get_double("scenario.window", c.window);
    c.victims = count("victims", c.victims);
    if (auto s = cfg.get_list("scenario.schedule")) {
      c.schedule.clear();
      for (const auto& x : *s) {
        auto v = text::to_int(x);
        if (!v || *v < 0) throw Error(Errc::InvalidConfig, "bad scenario.schedule entry '" + x + "'");
        c.schedule.push_back(static_cast<std::size_t>(*v));
      }
    }
    c.subnet = cfg.get_or("scenario.subnet", c.subnet);
    if (auto s = cfg.get_list("scenario.pool_servers")) c.pool_servers = *s;
    c.registration_hosts = count("registration_hosts", c.registration_hosts);
    c.mining_port = static_cast<std::uint16_t>(count("mining_port", c.mining_port));
    c.coordination_port = static_cast<std::uint16_t>(count("coordination_port", c.coordination_port));
    c.mining_min_duration = cfg.get_double("scenario.mining_min_duration", c.mining_min_duration);
    c.mining_max_duration = cfg.get_double("scenario.mining_max_duration", c.mining_max_duration);
    c.mining_flows = count("mining_flows", c.mining_flows);
    c.benign_rate = count("benign_rate", c.benign_rate);
    c.validate();
    return c;
  }

  HostId host_id(std::size_t i) const { return subnet + std::to_string(i / 254) + "." + std::to_string(i % 254 + 1); }

  /// Recruitment window for each of the `victims` victims, in recruitment order.
  std::vector<std::size_t> recruitment_windows() const {
    std::vector<std::size_t> out;
    if (!schedule.empty()) {
      for (std::size_t w = 0; w < schedule.size(); ++w) out.insert(out.end(), schedule[w], w);
      return out;
    }
    for (std::size_t v = 0; v < victims; ++v) out.push_back(1 + v * (n_windows - 1) / victims);
    return out;
  }
};

struct HostTruth {
  Label label = Label::NotMiner;
  std::optional<std::size_t> recruited;  // window index
  std::vector<State> expected;           // one per window
};

struct GroundTruth {
  std::size_t n_windows = 0;
  std::map<HostId, HostTruth, std::less<>> hosts;  // internal hosts only
};

/// Lifecycle expected for a host recruited at window r: S1 at r, S2 at r+1
/// while it starts coordinating with the pool, S3 from r+2 once its mining
/// sessions run.
inline State lifecycle_state(std::optional<std::size_t> recruited, std::size_t window) {
  if (!recruited || window < *recruited) return State::S0;
  if (window == *recruited) return State::S1;
  if (window == *recruited + 1) return State::S2;
  return State::S3;
}

inline std::map<HostId, State, std::less<>> expected_states(const GroundTruth& truth, std::size_t window) {
  if (window >= truth.n_windows)
    throw Error(Errc::WindowOutOfRange, "window " + std::to_string(window) + " >= " + std::to_string(truth.n_windows));
  std::map<HostId, State, std::less<>> out;
  for (const auto& [host, t] : truth.hosts) out.emplace(host, t.expected.at(window));
  return out;
}

struct Scenario {
  std::vector<FlowRecord> flows;
  GroundTruth truth;
  std::vector<std::pair<HostId, HostId>> benign_edges;  // small-world topology
};

namespace detail {

class FlowEmitter {
 public:
  FlowEmitter(SplitMix64& rng, const ScenarioConfig& cfg, std::vector<FlowRecord>& out)
      : rng_(rng), cfg_(cfg), out_(out) {}

  struct Shape {
    Protocol protocol = Protocol::TCP;
    std::uint16_t dst_port = 0;
    double min_duration = 0.0, max_duration = 1.0;
    std::uint64_t min_packets = 1, max_packets = 10;
    std::uint64_t min_bpp = 60, max_bpp = 1400;
    // probabilities for SYN, ACK, PUSH, RST, FIN
    std::array<double, 5> flag_p{};
  };

  /// One conversation: the request record and the matching response.
  void conversation(const HostId& initiator, const HostId& responder, std::size_t window, const Shape& s) {
    FlowRecord req;
    req.src_host = initiator;
    req.dst_host = responder;
    req.src_port = static_cast<std::uint16_t>(49152 + rng_.below(16384));
    req.dst_port = s.dst_port;
    req.protocol = s.protocol;
    const double w0 = static_cast<double>(window) * cfg_.window;
    const double w1 = static_cast<double>(window + 1) * cfg_.window;
    req.start_time = w0 + rng_.unit() * cfg_.window;
    if (req.start_time >= w1) req.start_time = std::nextafter(w1, w0);
    req.end_time = req.start_time + rng_.uniform(s.min_duration, s.max_duration);
    req.packets = s.min_packets + rng_.below(s.max_packets - s.min_packets + 1);
    req.bytes = req.packets * (s.min_bpp + rng_.below(s.max_bpp - s.min_bpp + 1));
    if (s.protocol == Protocol::TCP) {
      static constexpr std::uint8_t bits[5] = {FlagSet::SYN, FlagSet::ACK, FlagSet::PUSH, FlagSet::RST, FlagSet::FIN};
      std::uint8_t f = 0;
      for (int i = 0; i < 5; ++i)
        if (rng_.chance(s.flag_p[static_cast<std::size_t>(i)])) f |= bits[i];
      req.flags = FlagSet(f);
    }
    req.is_request = true;

    FlowRecord resp = req;
    std::swap(resp.src_host, resp.dst_host);
    std::swap(resp.src_port, resp.dst_port);
    resp.packets = std::max<std::uint64_t>(1, req.packets - rng_.below(req.packets / 2 + 1));
    resp.bytes = resp.packets * (s.min_bpp + rng_.below(s.max_bpp - s.min_bpp + 1));
    resp.is_request = false;

    out_.push_back(std::move(req));
    out_.push_back(std::move(resp));
  }

 private:
  SplitMix64& rng_;
  const ScenarioConfig& cfg_;
  std::vector<FlowRecord>& out_;
};

}  // namespace detail

/// Small-world benign background plus a mining pool that grows window by
/// window: recruits register with the pool (SYN-heavy, several external
/// endpoints), then coordinate with every other active pool member, then run
/// long ACK+PUSH sessions to the first pool server.
inline Scenario generate(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  Scenario sc;
  const auto n = cfg.n_hosts;

  // Ring lattice, then rewire each clockwise edge (i, i+j) with probability p.
  std::vector<std::set<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j <= cfg.ring_degree / 2; ++j) {
      adj[i].insert((i + j) % n);
      adj[(i + j) % n].insert(i);
    }
  for (std::size_t j = 1; j <= cfg.ring_degree / 2; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = (i + j) % n;
      if (!adj[i].count(t) || !rng.chance(cfg.rewire)) continue;
      if (adj[i].size() >= n - 1) continue;
      std::size_t fresh;
      do fresh = rng.below(n);
      while (fresh == i || adj[i].count(fresh));
      adj[i].erase(t);
      adj[t].erase(i);
      adj[i].insert(fresh);
      adj[fresh].insert(i);
    }
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : adj[i])
      if (j > i) sc.benign_edges.emplace_back(cfg.host_id(i), cfg.host_id(j));

  // Victims: partial Fisher-Yates over host indices.
  std::vector<std::size_t> pick(n);
  for (std::size_t i = 0; i < n; ++i) pick[i] = i;
  for (std::size_t i = 0; i < cfg.victims; ++i) std::swap(pick[i], pick[i + rng.below(n - i)]);
  const auto recruit_at = cfg.recruitment_windows();

  struct Victim {
    HostId host;
    std::size_t recruited;
    std::vector<HostId> registration;
  };
  std::vector<Victim> victims;
  std::size_t next_reg = 0;
  for (std::size_t v = 0; v < cfg.victims; ++v) {
    Victim vic{cfg.host_id(pick[v]), recruit_at[v], {}};
    for (std::size_t r = 0; r < cfg.registration_hosts; ++r, ++next_reg)
      vic.registration.push_back("198.51." + std::to_string(100 + next_reg / 254) + "." + std::to_string(next_reg % 254 + 1));
    victims.push_back(std::move(vic));
  }

  sc.truth.n_windows = cfg.n_windows;
  for (std::size_t i = 0; i < n; ++i) {
    HostTruth t;
    t.expected.assign(cfg.n_windows, State::S0);
    sc.truth.hosts.emplace(cfg.host_id(i), std::move(t));
  }
  for (const auto& v : victims) {
    auto& t = sc.truth.hosts.at(v.host);
    t.label = Label::Miner;
    t.recruited = v.recruited;
    for (std::size_t w = 0; w < cfg.n_windows; ++w) t.expected[w] = lifecycle_state(v.recruited, w);
  }

  using Shape = detail::FlowEmitter::Shape;
  static constexpr std::uint16_t tcp_ports[] = {80, 443, 22, 445, 3389, 8080, 25, 139, 5432, 993};
  static constexpr std::uint16_t udp_ports[] = {53, 123, 161, 5353};
  // Long benign sessions stay off the default fingerprint ports.
  static constexpr std::uint16_t long_ports[] = {22, 445, 3389, 5432, 993};

  detail::FlowEmitter emit(rng, cfg, sc.flows);
  const HostId& stratum = cfg.pool_servers.empty() ? HostId{} : cfg.pool_servers.front();

  for (std::size_t w = 0; w < cfg.n_windows; ++w) {
    for (const auto& [a, b] : sc.benign_edges) {
      const auto conversations = 1 + rng.below(2 * cfg.benign_rate - 1);
      for (std::uint64_t c = 0; c < conversations; ++c) {
        const bool a_starts = rng.chance(0.5);
        Shape s;
        if (rng.chance(0.15)) {
          s.protocol = Protocol::UDP;
          s.dst_port = udp_ports[rng.below(std::size(udp_ports))];
          s.min_duration = 0.001;
          s.max_duration = 2.0;
          s.min_packets = 1;
          s.max_packets = 6;
          s.min_bpp = 60;
          s.max_bpp = 512;
        } else {
          const bool long_lived = rng.chance(0.1);
          s.dst_port = long_lived ? long_ports[rng.below(std::size(long_ports))] : tcp_ports[rng.below(std::size(tcp_ports))];
          s.min_duration = long_lived ? 30.0 : 0.05;
          s.max_duration = long_lived ? 55.0 : 20.0;
          s.min_packets = 2;
          s.max_packets = 60;
          s.min_bpp = 60;
          s.max_bpp = 1400;
          s.flag_p = {0.7, 0.95, 0.6, 0.1, 0.7};
        }
        emit.conversation(a_starts ? a : b, a_starts ? b : a, w, s);
      }
    }

    for (const auto& v : victims) {
      if (w < v.recruited) continue;
      if (w == v.recruited) {
        // Registration: SYN-heavy short exchanges with every pool server and
        // the transient registration endpoints.
        std::vector<std::pair<HostId, std::uint16_t>> targets;
        for (std::size_t p = 0; p < cfg.pool_servers.size(); ++p)
          targets.emplace_back(cfg.pool_servers[p], p == 0 ? cfg.mining_port : std::uint16_t{443});
        for (const auto& r : v.registration) targets.emplace_back(r, std::uint16_t{80});
        for (const auto& [host, port] : targets)
          for (int c = 0; c < 3; ++c) {
            Shape s;
            s.dst_port = port;
            s.min_duration = 0.05;
            s.max_duration = 3.0;
            s.min_packets = 3;
            s.max_packets = 12;
            s.min_bpp = 60;
            s.max_bpp = 260;
            s.flag_p = {1.0, 1.0, 0.3, 0.2, 0.5};
            emit.conversation(v.host, host, w, s);
          }
        continue;
      }

      // Keep-alives hold the pool servers as neighbors once registered.
      for (std::size_t p = 0; p < cfg.pool_servers.size(); ++p)
        for (int c = 0; c < 2; ++c) {
          Shape s;
          s.dst_port = p == 0 ? cfg.mining_port : std::uint16_t{443};
          s.min_duration = 0.5;
          s.max_duration = 10.0;
          s.min_packets = 2;
          s.max_packets = 8;
          s.min_bpp = 60;
          s.max_bpp = 200;
          s.flag_p = {0.3, 1.0, 1.0, 0.05, 0.3};
          emit.conversation(v.host, cfg.pool_servers[p], w, s);
        }

      if (w >= v.recruited + 2) {
        for (std::size_t c = 0; c < cfg.mining_flows; ++c) {
          Shape s;
          s.dst_port = cfg.mining_port;
          s.min_duration = cfg.mining_min_duration;
          s.max_duration = cfg.mining_max_duration;
          s.min_packets = 40;
          s.max_packets = 200;
          s.min_bpp = 70;
          s.max_bpp = 250;
          s.flag_p = {0.05, 1.0, 1.0, 0.02, 0.05};
          emit.conversation(v.host, stratum, w, s);
        }
      }
    }

    // Intra-pool coordination between every pair of members active since an
    // earlier window; the lexicographically smaller host initiates.
    std::vector<const Victim*> active;
    for (const auto& v : victims)
      if (w >= v.recruited + 1) active.push_back(&v);
    std::sort(active.begin(), active.end(), [](const Victim* a, const Victim* b) { return a->host < b->host; });
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        Shape s;
        s.dst_port = cfg.coordination_port;
        s.min_duration = 1.0;
        s.max_duration = 20.0;
        s.min_packets = 5;
        s.max_packets = 35;
        s.min_bpp = 80;
        s.max_bpp = 380;
        s.flag_p = {0.5, 1.0, 1.0, 0.02, 0.5};
        emit.conversation(active[i]->host, active[j]->host, w, s);
      }
  }

  std::stable_sort(sc.flows.begin(), sc.flows.end(),
                   [](const FlowRecord& a, const FlowRecord& b) { return a.start_time < b.start_time; });
  return sc;
}

/// Ground-truth CSV: host,label,recruitment_window (-1 when never recruited).
inline std::string serialize_truth_csv(const GroundTruth& truth) {
  std::string out = "host,label,recruitment_window\n";
  for (const auto& [host, t] : truth.hosts) {
    out += host + ',';
    out += label_name(t.label);
    out += ',' + (t.recruited ? std::to_string(*t.recruited) : std::string("-1")) + '\n';
  }
  return out;
}

/// Reads host,label[,recruitment_window]. Expected states are rebuilt from
/// the recruitment window when `n_windows` is given.
inline GroundTruth parse_truth_csv(std::string_view body, std::size_t n_windows = 0) {
  auto rows = text::lines(body);
  if (rows.empty()) throw Error(Errc::MissingColumn, "truth CSV has no header", 1);
  auto header = text::split(rows[0], ',');
  if (header.size() < 2 || text::trim(header[0]) != "host" || text::trim(header[1]) != "label")
    throw Error(Errc::MissingColumn, "truth CSV must start with host,label", 1);
  GroundTruth g;
  g.n_windows = n_windows;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (text::trim(rows[r]).empty()) continue;
    auto cells = text::split(rows[r], ',');
    if (cells.size() < 2) throw Error(Errc::MalformedRow, "too few columns", r + 1);
    HostTruth t;
    auto label = parse_label(cells[1]);
    if (!label || *label == Label::Unlabeled) throw Error(Errc::MalformedRow, "bad label", r + 1);
    t.label = *label;
    if (cells.size() > 2) {
      auto w = text::to_int(cells[2]);
      if (!w) throw Error(Errc::MalformedRow, "bad recruitment_window", r + 1);
      if (*w >= 0) t.recruited = static_cast<std::size_t>(*w);
    }
    for (std::size_t w = 0; w < n_windows; ++w) t.expected.push_back(lifecycle_state(t.recruited, w));
    g.hosts.emplace(std::string(text::trim(cells[0])), std::move(t));
  }
  return g;
}

/// Labeled feature vectors for the ground-truth hosts over the whole scenario.
inline std::vector<FeatureVector> labeled_features(const Scenario& sc, const ScenarioConfig& cfg) {
  const TimeWindow span{0.0, static_cast<double>(cfg.n_windows) * cfg.window};
  std::vector<FeatureVector> out;
  for (auto& v : aggregate_all_hosts(sc.flows, span)) {
    auto it = sc.truth.hosts.find(v.host);
    if (it == sc.truth.hosts.end()) continue;
    v.label = it->second.label;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace minedetect
