#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "minedetect/error.hpp"
#include "minedetect/kv_config.hpp"
#include "minedetect/text.hpp"

namespace minedetect {

using HostId = std::string;

enum class Protocol : std::uint8_t { TCP, UDP };

inline std::string_view protocol_name(Protocol p) { return p == Protocol::TCP ? "TCP" : "UDP"; }

/// TCP flags observed over the lifetime of a flow.
class FlagSet {
 public:
  enum Bit : std::uint8_t { SYN = 1, ACK = 2, PUSH = 4, RST = 8, FIN = 16 };

  constexpr FlagSet() = default;
  constexpr FlagSet(std::uint8_t bits) : bits_(bits & 0x1F) {}

  constexpr bool empty() const { return bits_ == 0; }
  constexpr bool has(std::uint8_t bits) const { return bits != 0 && (bits_ & bits) == bits; }
  constexpr bool contains(FlagSet other) const { return (bits_ & other.bits_) == other.bits_; }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr FlagSet operator|(FlagSet o) const { return FlagSet(bits_ | o.bits_); }
  constexpr bool operator==(const FlagSet&) const = default;

  /// '|'-joined names in SYN, ACK, PUSH, RST, FIN order; empty set gives "".
  std::string to_string() const {
    static constexpr std::array<std::pair<std::uint8_t, std::string_view>, 5> names{
        {{SYN, "SYN"}, {ACK, "ACK"}, {PUSH, "PUSH"}, {RST, "RST"}, {FIN, "FIN"}}};
    std::string out;
    for (auto [bit, name] : names) {
      if (!(bits_ & bit)) continue;
      if (!out.empty()) out += '|';
      out += name;
    }
    return out;
  }

  static std::optional<FlagSet> parse(std::string_view s) {
    s = text::trim(s);
    FlagSet out;
    if (s.empty() || s == "-") return out;
    for (auto part : text::split(s, '|')) {
      auto name = text::upper(text::trim(part));
      if (name.empty()) continue;
      if (name == "SYN") out.bits_ |= SYN;
      else if (name == "ACK") out.bits_ |= ACK;
      else if (name == "PUSH" || name == "PSH") out.bits_ |= PUSH;
      else if (name == "RST") out.bits_ |= RST;
      else if (name == "FIN") out.bits_ |= FIN;
      else return std::nullopt;
    }
    return out;
  }

 private:
  std::uint8_t bits_ = 0;
};

struct FlowRecord {
  HostId src_host;
  HostId dst_host;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  Protocol protocol = Protocol::TCP;
  double start_time = 0.0;
  double end_time = 0.0;
  std::uint64_t packets = 1;
  std::uint64_t bytes = 0;
  FlagSet flags;
  bool is_request = true;

  double duration() const { return end_time - start_time; }
  bool involves(std::string_view host) const { return src_host == host || dst_host == host; }

  bool operator==(const FlowRecord&) const = default;
};

/// Returns a description of the first violated record invariant, if any.
inline std::optional<std::string> flow_violation(const FlowRecord& f) {
  if (f.src_host.empty() || f.dst_host.empty()) return "empty host id";
  if (!(f.start_time >= 0.0)) return "start_time must be non-negative";
  if (!(f.end_time >= f.start_time)) return "end_time < start_time";
  if (f.protocol == Protocol::UDP && !f.flags.empty()) return "UDP flow carries TCP flags";
  if (f.packets < 1) return "packets must be >= 1";
  return std::nullopt;
}

/// Column names of the flow CSV. An empty `is_request` name means the column
/// is absent and the request direction is inferred (see infer_request_direction).
struct FlowSchema {
  std::string src_host = "src_host";
  std::string dst_host = "dst_host";
  std::string src_port = "src_port";
  std::string dst_port = "dst_port";
  std::string protocol = "protocol";
  std::string start_time = "start_time";
  std::string end_time = "end_time";
  std::string packets = "packets";
  std::string bytes = "bytes";
  std::string flags = "flags";
  std::string is_request = "is_request";

  /// Overrides from `schema.<field>=<column>` keys.
  static FlowSchema from_config(const KvConfig& cfg) {
    FlowSchema s;
    for (auto& [field, column] : s.mapping()) *column = cfg.get_or("schema." + std::string(field), *column);
    return s;
  }

  std::array<std::pair<std::string_view, std::string*>, 11> mapping() {
    return {{{"src_host", &src_host},
             {"dst_host", &dst_host},
             {"src_port", &src_port},
             {"dst_port", &dst_port},
             {"protocol", &protocol},
             {"start_time", &start_time},
             {"end_time", &end_time},
             {"packets", &packets},
             {"bytes", &bytes},
             {"flags", &flags},
             {"is_request", &is_request}}};
  }
};

/// Marks, for flows read without an is_request column, which records were
/// initiated by their source: SYN-bearing TCP flows, and for UDP the first
/// direction seen between an endpoint pair.
inline void infer_request_direction(std::vector<FlowRecord>& flows) {
  using Endpoint = std::pair<HostId, std::uint16_t>;
  std::map<std::pair<Endpoint, Endpoint>, Endpoint> udp_initiator;
  for (auto& f : flows) {
    if (f.protocol == Protocol::TCP) {
      f.is_request = f.flags.has(FlagSet::SYN);
      continue;
    }
    Endpoint a{f.src_host, f.src_port}, b{f.dst_host, f.dst_port};
    auto key = a < b ? std::pair{a, b} : std::pair{b, a};
    auto [it, inserted] = udp_initiator.try_emplace(key, a);
    f.is_request = it->second == a;
  }
}

inline std::vector<FlowRecord> parse_flow_csv(std::string_view body, const FlowSchema& schema = {}) {
  auto rows = text::lines(body);
  std::vector<FlowRecord> out;
  if (rows.empty()) throw Error(Errc::MissingColumn, "flow CSV has no header row", 1);

  std::map<std::string, std::size_t, std::less<>> col;
  auto header = text::split(rows[0], ',');
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(std::string(text::trim(header[i])), i);

  auto schema_copy = schema;
  std::array<std::size_t, 11> idx{};
  std::size_t n = 0;
  bool infer_requests = false;
  for (auto& [field, column] : schema_copy.mapping()) {
    if (field == "is_request" && column->empty()) {
      infer_requests = true;
      ++n;
      continue;
    }
    auto it = col.find(*column);
    if (it == col.end())
      throw Error(Errc::MissingColumn, "column '" + *column + "' (" + std::string(field) + ") not in header", 1);
    idx[n++] = it->second;
  }
  enum { kSrc, kDst, kSport, kDport, kProto, kStart, kEnd, kPackets, kBytes, kFlags, kReq };

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t lineno = r + 1;
    if (text::trim(rows[r]).empty()) continue;
    auto cells = text::split(rows[r], ',');
    auto cell = [&](int which) -> std::string_view {
      auto i = idx[static_cast<std::size_t>(which)];
      if (i >= cells.size()) throw Error(Errc::MalformedRow, "too few columns", lineno);
      return text::trim(cells[i]);
    };
    auto count = [&](int which, const char* what) -> std::uint64_t {
      auto v = text::to_int(cell(which));
      if (!v || *v < 0) throw Error(Errc::MalformedRow, std::string("bad ") + what + " '" + std::string(cell(which)) + "'", lineno);
      return static_cast<std::uint64_t>(*v);
    };
    auto port = [&](int which, const char* what) -> std::uint16_t {
      auto v = count(which, what);
      if (v > 65535) throw Error(Errc::MalformedRow, std::string(what) + " out of range", lineno);
      return static_cast<std::uint16_t>(v);
    };
    auto real = [&](int which, const char* what) -> double {
      auto v = text::to_double(cell(which));
      if (!v) throw Error(Errc::MalformedRow, std::string("bad ") + what + " '" + std::string(cell(which)) + "'", lineno);
      return *v;
    };

    FlowRecord f;
    f.src_host = std::string(cell(kSrc));
    f.dst_host = std::string(cell(kDst));
    f.src_port = port(kSport, "src_port");
    f.dst_port = port(kDport, "dst_port");
    auto proto = text::upper(cell(kProto));
    if (proto == "TCP" || proto == "6") f.protocol = Protocol::TCP;
    else if (proto == "UDP" || proto == "17") f.protocol = Protocol::UDP;
    else throw Error(Errc::MalformedRow, "unknown protocol '" + proto + "'", lineno);
    f.start_time = real(kStart, "start_time");
    f.end_time = real(kEnd, "end_time");
    f.packets = count(kPackets, "packets");
    f.bytes = count(kBytes, "bytes");
    auto flags = FlagSet::parse(cell(kFlags));
    if (!flags) throw Error(Errc::MalformedRow, "bad flags '" + std::string(cell(kFlags)) + "'", lineno);
    f.flags = *flags;
    if (!infer_requests) {
      auto req = text::lower(cell(kReq));
      if (req == "1" || req == "true") f.is_request = true;
      else if (req == "0" || req == "false") f.is_request = false;
      else throw Error(Errc::MalformedRow, "bad is_request '" + req + "'", lineno);
    }
    if (auto bad = flow_violation(f)) throw Error(Errc::MalformedRow, *bad, lineno);
    out.push_back(std::move(f));
  }
  if (infer_requests) infer_request_direction(out);
  return out;
}

/// Writes flows with the default schema header. Times use the shortest
/// round-trip decimal form so parse(serialize(x)) == x.
inline std::string serialize_flow_csv(std::span<const FlowRecord> flows) {
  std::string out = "src_host,dst_host,src_port,dst_port,protocol,start_time,end_time,packets,bytes,flags,is_request\n";
  for (const auto& f : flows) {
    out += f.src_host;
    out += ',';
    out += f.dst_host;
    out += ',' + std::to_string(f.src_port) + ',' + std::to_string(f.dst_port) + ',';
    out += protocol_name(f.protocol);
    out += ',' + text::format_double(f.start_time) + ',' + text::format_double(f.end_time);
    out += ',' + std::to_string(f.packets) + ',' + std::to_string(f.bytes) + ',';
    out += f.flags.to_string();
    out += f.is_request ? ",1\n" : ",0\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-host feature vectors

enum class Label : std::uint8_t { NotMiner, Miner, Unlabeled };

inline std::string_view label_name(Label l) {
  switch (l) {
    case Label::Miner: return "miner";
    case Label::NotMiner: return "not-miner";
    case Label::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline std::optional<Label> parse_label(std::string_view s) {
  auto v = text::lower(text::trim(s));
  std::erase_if(v, [](char c) { return c == '-' || c == '_' || c == ' '; });
  if (v == "miner" || v == "1" || v == "yes") return Label::Miner;
  if (v == "notminer" || v == "0" || v == "no" || v == "benign") return Label::NotMiner;
  if (v.empty() || v == "unlabeled" || v == "?") return Label::Unlabeled;
  return std::nullopt;
}

inline constexpr std::size_t kFeatureCount = 8;
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "bpp", "ppm", "ppf", "ackpush_all", "req_all", "syn_all", "rst_all", "fin_all"};
// bpp, ppm and ppf are unbounded; the flag/request ratios already live in [0,1].
inline constexpr std::size_t kUnboundedFeatures = 3;

struct FeatureVector {
  HostId host;
  double bpp = 0.0;
  double ppm = 0.0;
  double ppf = 0.0;
  double ackpush_all = 0.0;
  double req_all = 0.0;
  double syn_all = 0.0;
  double rst_all = 0.0;
  double fin_all = 0.0;
  Label label = Label::Unlabeled;
  bool normalized = false;

  static constexpr std::array<double FeatureVector::*, kFeatureCount> members{
      &FeatureVector::bpp,     &FeatureVector::ppm,     &FeatureVector::ppf,     &FeatureVector::ackpush_all,
      &FeatureVector::req_all, &FeatureVector::syn_all, &FeatureVector::rst_all, &FeatureVector::fin_all};

  double& operator[](std::size_t i) { return this->*members[i]; }
  double operator[](std::size_t i) const { return this->*members[i]; }

  std::array<double, kFeatureCount> values() const {
    std::array<double, kFeatureCount> out{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = (*this)[i];
    return out;
  }

  bool operator==(const FeatureVector&) const = default;
};

/// Half-open time interval [start, end) in seconds.
struct TimeWindow {
  double start = 0.0;
  double end = 60.0;

  double length() const { return end - start; }
  bool contains(double t) const { return t >= start && t < end; }
};

namespace detail {

struct HostTally {
  std::uint64_t flows = 0, packets = 0, bytes = 0;
  std::uint64_t ackpush = 0, requests = 0, syn = 0, rst = 0, fin = 0;

  void add(const FlowRecord& f, std::string_view host) {
    ++flows;
    packets += f.packets;
    bytes += f.bytes;
    if (f.flags.has(FlagSet::ACK | FlagSet::PUSH)) ++ackpush;
    if (f.flags.has(FlagSet::SYN)) ++syn;
    if (f.flags.has(FlagSet::RST)) ++rst;
    if (f.flags.has(FlagSet::FIN)) ++fin;
    if (f.is_request && f.src_host == host) ++requests;
  }

  FeatureVector finish(HostId host, double window_seconds) const {
    FeatureVector v;
    v.host = std::move(host);
    const auto n = static_cast<double>(flows);
    v.bpp = packets ? static_cast<double>(bytes) / static_cast<double>(packets) : 0.0;
    v.ppm = static_cast<double>(packets) / (window_seconds / 60.0);
    v.ppf = static_cast<double>(packets) / n;
    v.ackpush_all = static_cast<double>(ackpush) / n;
    v.req_all = static_cast<double>(requests) / n;
    v.syn_all = static_cast<double>(syn) / n;
    v.rst_all = static_cast<double>(rst) / n;
    v.fin_all = static_cast<double>(fin) / n;
    return v;
  }
};

inline void check_window(const TimeWindow& w) {
  if (!(w.length() > 0.0)) throw Error(Errc::InvalidConfig, "window length must be positive");
}

}  // namespace detail

/// Flow statistics for one host over the flows starting inside `window`.
inline FeatureVector aggregate_host_features(std::span<const FlowRecord> flows, std::string_view host,
                                             const TimeWindow& window) {
  detail::check_window(window);
  detail::HostTally tally;
  for (const auto& f : flows)
    if (window.contains(f.start_time) && f.involves(host)) tally.add(f, host);
  if (tally.flows == 0) throw Error(Errc::NoFlows, "host '" + std::string(host) + "' has no flows in window");
  return tally.finish(HostId(host), window.length());
}

/// Feature vectors for every host seen in the window, sorted by host id.
/// Hosts without flows in the window do not appear.
inline std::vector<FeatureVector> aggregate_all_hosts(std::span<const FlowRecord> flows, const TimeWindow& window) {
  detail::check_window(window);
  std::map<HostId, detail::HostTally, std::less<>> tallies;
  for (const auto& f : flows) {
    if (!window.contains(f.start_time)) continue;
    tallies[f.src_host].add(f, f.src_host);
    if (f.dst_host != f.src_host) tallies[f.dst_host].add(f, f.dst_host);
  }
  std::vector<FeatureVector> out;
  out.reserve(tallies.size());
  for (const auto& [host, tally] : tallies) out.push_back(tally.finish(host, window.length()));
  return out;
}

// ---------------------------------------------------------------------------
// Min-max normalization

struct NormalizationParams {
  std::array<double, kFeatureCount> min{};
  std::array<double, kFeatureCount> max{};
};

inline NormalizationParams fit_normalizer(std::span<const FeatureVector> vectors) {
  if (vectors.empty()) throw Error(Errc::EmptyInput, "cannot fit normalizer on zero vectors");
  NormalizationParams p;
  p.min = vectors.front().values();
  p.max = p.min;
  for (const auto& v : vectors) {
    if (v.normalized) throw Error(Errc::AlreadyNormalized, "fit_normalizer expects raw vectors ('" + v.host + "')");
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      p.min[i] = std::min(p.min[i], v[i]);
      p.max[i] = std::max(p.max[i], v[i]);
    }
  }
  return p;
}

/// Rescales bpp/ppm/ppf to [0,1]; constant features map to 0 and values
/// outside the fitted range are clamped. Ratio features pass through.
inline FeatureVector normalize(const FeatureVector& v, const NormalizationParams& p) {
  if (v.normalized) throw Error(Errc::AlreadyNormalized, "vector for '" + v.host + "' is already normalized");
  FeatureVector out = v;
  for (std::size_t i = 0; i < kUnboundedFeatures; ++i) {
    const double span = p.max[i] - p.min[i];
    out[i] = span > 0.0 ? std::clamp((v[i] - p.min[i]) / span, 0.0, 1.0) : 0.0;
  }
  for (std::size_t i = kUnboundedFeatures; i < kFeatureCount; ++i) out[i] = std::clamp(v[i], 0.0, 1.0);
  out.normalized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Feature CSV: fixed feature order, optionally preceded by a host column.

inline std::string serialize_feature_csv(std::span<const FeatureVector> vectors, bool with_host = true) {
  std::string out = with_host ? "host," : "";
  for (auto name : kFeatureNames) {
    out += name;
    out += ',';
  }
  out += "class\n";
  for (const auto& v : vectors) {
    if (with_host) out += v.host + ',';
    for (std::size_t i = 0; i < kFeatureCount; ++i) out += text::format_double(v[i]) + ',';
    out += label_name(v.label);
    out += '\n';
  }
  return out;
}

/// Rows without a host column get ids "row<N>" (N = 1-based data row).
inline std::vector<FeatureVector> parse_feature_csv(std::string_view body) {
  auto rows = text::lines(body);
  if (rows.empty()) throw Error(Errc::MissingColumn, "feature CSV has no header row", 1);
  auto header = text::split(rows[0], ',');
  std::size_t offset = 0;
  if (!header.empty() && text::lower(text::trim(header[0])) == "host") offset = 1;
  if (header.size() != offset + kFeatureCount + 1)
    throw Error(Errc::MissingColumn, "feature CSV must have columns bpp..fin_all,class in that order", 1);
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (text::lower(text::trim(header[offset + i])) != kFeatureNames[i])
      throw Error(Errc::MissingColumn, "expected column '" + std::string(kFeatureNames[i]) + "' at position " +
                                           std::to_string(offset + i + 1), 1);
  if (text::lower(text::trim(header.back())) != "class")
    throw Error(Errc::MissingColumn, "last column must be 'class'", 1);

  std::vector<FeatureVector> out;
  std::size_t data_row = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t lineno = r + 1;
    if (text::trim(rows[r]).empty()) continue;
    ++data_row;
    auto cells = text::split(rows[r], ',');
    if (cells.size() != header.size()) throw Error(Errc::MalformedRow, "wrong number of columns", lineno);
    FeatureVector v;
    v.host = offset ? std::string(text::trim(cells[0])) : "row" + std::to_string(data_row);
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      auto d = text::to_double(cells[offset + i]);
      if (!d || *d < 0.0)
        throw Error(Errc::MalformedRow, "bad value for " + std::string(kFeatureNames[i]), lineno);
      if (i >= kUnboundedFeatures && *d > 1.0)
        throw Error(Errc::MalformedRow, std::string(kFeatureNames[i]) + " must be a ratio in [0,1]", lineno);
      v[i] = *d;
    }
    auto label = parse_label(cells.back());
    if (!label) throw Error(Errc::MalformedRow, "bad class '" + std::string(cells.back()) + "'", lineno);
    v.label = *label;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace minedetect
