#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mapchain/bytes.hpp"
#include "mapchain/error.hpp"
#include "mapchain/random.hpp"

namespace mapchain {

struct SegmentId {
  std::uint32_t value = 0;
  friend auto operator<=>(const SegmentId&, const SegmentId&) = default;
};

struct NodeId {
  std::uint32_t value = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

/// Planar point in a local metric frame.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

enum class RouteType : std::uint8_t { motorway = 0, trunk = 1, urban = 2, local = 3 };

inline constexpr std::string_view to_string(RouteType t) noexcept {
  switch (t) {
    case RouteType::motorway: return "motorway";
    case RouteType::trunk: return "trunk";
    case RouteType::urban: return "urban";
    case RouteType::local: return "local";
  }
  return "?";
}

inline std::optional<RouteType> parse_route_type(std::string_view s) noexcept {
  for (auto t : {RouteType::motorway, RouteType::trunk, RouteType::urban, RouteType::local}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

/// One travel direction of a road between two nodes.
struct RoadSegment {
  SegmentId id;
  NodeId from_node;
  NodeId to_node;
  double length = 0.0;
  int speed_limit = 50;  // km/h
  int lane_count = 1;
  RouteType route_type = RouteType::urban;
  bool is_tunnel = false;
  bool is_bridge = false;
  bool is_emergency_lane = false;
  std::vector<Point> geometry;

  friend bool operator==(const RoadSegment&, const RoadSegment&) = default;
};

inline double distance(Point a, Point b) noexcept { return std::hypot(b.x - a.x, b.y - a.y); }

inline double polyline_length(std::span<const Point> pts) noexcept {
  double total = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) total += distance(pts[i - 1], pts[i]);
  return total;
}

/// Signed curvature of the circle through a, b, c; positive for a left turn.
inline double three_point_curvature(Point a, Point b, Point c) noexcept {
  const double cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
  const double denom = distance(a, b) * distance(b, c) * distance(a, c);
  if (denom == 0.0 || cross == 0.0) return 0.0;
  return 2.0 * cross / denom;
}

/// Heading (radians) of the first or last polyline edge.
inline double start_heading(const RoadSegment& s) noexcept {
  const auto& g = s.geometry;
  return std::atan2(g[1].y - g[0].y, g[1].x - g[0].x);
}
inline double end_heading(const RoadSegment& s) noexcept {
  const auto& g = s.geometry;
  const auto n = g.size();
  return std::atan2(g[n - 1].y - g[n - 2].y, g[n - 1].x - g[n - 2].x);
}

class RoadNetwork;
RoadNetwork build_network(std::vector<RoadSegment> segments);

/// Immutable directed-segment road graph. Built only through build_network.
class RoadNetwork {
 public:
  using AdjacencyKey = std::pair<NodeId, SegmentId>;

  [[nodiscard]] const std::map<SegmentId, RoadSegment>& segments() const noexcept { return segments_; }

  /// (node, incoming segment) -> outgoing segments usable from it, ascending.
  [[nodiscard]] const std::map<AdjacencyKey, std::vector<SegmentId>>& adjacency() const noexcept {
    return adjacency_;
  }

  [[nodiscard]] bool contains(SegmentId id) const noexcept { return segments_.contains(id); }

  [[nodiscard]] const RoadSegment& segment(SegmentId id) const {
    auto it = segments_.find(id);
    if (it == segments_.end()) throw Error(Errc::unknown_segment, "segment " + std::to_string(id.value));
    return it->second;
  }

  [[nodiscard]] std::optional<Point> node_position(NodeId n) const {
    auto it = node_positions_.find(n);
    if (it == node_positions_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::size_t size() const noexcept { return segments_.size(); }

  friend bool operator==(const RoadNetwork& a, const RoadNetwork& b) { return a.segments_ == b.segments_; }

 private:
  friend RoadNetwork build_network(std::vector<RoadSegment> segments);

  std::map<SegmentId, RoadSegment> segments_;
  std::map<AdjacencyKey, std::vector<SegmentId>> adjacency_;
  std::map<NodeId, Point> node_positions_;
};

namespace detail {

inline void validate_segment(const RoadSegment& s) {
  const auto id = std::to_string(s.id.value);
  if (s.id.value == 0) throw Error(Errc::invalid_segment, "segment id 0 is reserved");
  if (s.from_node == s.to_node) throw Error(Errc::invalid_segment, id + ": from_node equals to_node");
  if (s.lane_count < 1) throw Error(Errc::invalid_segment, id + ": lane_count < 1");
  if (s.speed_limit <= 0) throw Error(Errc::invalid_segment, id + ": speed_limit <= 0");
  if (s.geometry.size() < 2) throw Error(Errc::invalid_segment, id + ": geometry needs >= 2 points");
  if (!(s.length > 0.0)) throw Error(Errc::invalid_segment, id + ": length <= 0");
  const double arc = polyline_length(s.geometry);
  if (std::abs(arc - s.length) > 1e-6 * s.length) {
    throw Error(Errc::invalid_segment, id + ": length disagrees with polyline arc length");
  }
}

inline bool is_reverse_twin(const RoadSegment& s, const RoadSegment& out) noexcept {
  return out.from_node == s.to_node && out.to_node == s.from_node;
}

}  // namespace detail

/// Validates segments and derives the adjacency. U-turns onto the reverse
/// twin of a segment are only offered when no other continuation exists.
inline RoadNetwork build_network(std::vector<RoadSegment> segments) {
  if (segments.empty()) throw Error(Errc::empty_network, "no segments");

  RoadNetwork net;
  for (auto& s : segments) {
    detail::validate_segment(s);
    const auto id = s.id;
    if (!net.segments_.emplace(id, std::move(s)).second) {
      throw Error(Errc::duplicate_segment, "segment " + std::to_string(id.value));
    }
  }

  // Geometry endpoints must agree wherever segments share a node.
  constexpr double kNodeTolerance = 1e-6;
  for (const auto& [id, s] : net.segments_) {
    for (auto [node, pt] : {std::pair{s.from_node, s.geometry.front()}, std::pair{s.to_node, s.geometry.back()}}) {
      auto [it, inserted] = net.node_positions_.emplace(node, pt);
      if (!inserted && distance(it->second, pt) > kNodeTolerance) {
        throw Error(Errc::dangling_node, "node " + std::to_string(node.value) + " has inconsistent positions");
      }
    }
  }

  // Weak connectivity over nodes.
  std::map<NodeId, NodeId> parent;
  auto find = [&](NodeId n) {
    while (parent[n] != n) n = parent[n] = parent[parent[n]];
    return n;
  };
  for (const auto& [node, _] : net.node_positions_) parent[node] = node;
  for (const auto& [id, s] : net.segments_) parent[find(s.from_node)] = find(s.to_node);
  const NodeId root = find(net.node_positions_.begin()->first);
  for (const auto& [node, _] : net.node_positions_) {
    if (find(node) != root) {
      throw Error(Errc::dangling_node, "node " + std::to_string(node.value) + " is not connected to the network");
    }
  }

  std::map<NodeId, std::vector<SegmentId>> outgoing;
  for (const auto& [id, s] : net.segments_) outgoing[s.from_node].push_back(id);

  for (const auto& [id, s] : net.segments_) {
    std::vector<SegmentId> next;
    std::vector<SegmentId> twins;
    if (auto it = outgoing.find(s.to_node); it != outgoing.end()) {
      for (auto out : it->second) {
        (detail::is_reverse_twin(s, net.segments_.at(out)) ? twins : next).push_back(out);
      }
    }
    if (next.empty()) next = std::move(twins);
    net.adjacency_.emplace(RoadNetwork::AdjacencyKey{s.to_node, id}, std::move(next));
  }
  return net;
}

/// Continuations at the end of `seg`, ascending by id.
inline const std::vector<SegmentId>& successors(const RoadNetwork& net, SegmentId seg) {
  const auto& s = net.segment(seg);
  return net.adjacency().at({s.to_node, seg});
}

/// Discrete curvature at `offset` from the circle through the vertex nearest
/// to the offset and its two neighbours.
inline double curvature_at(const RoadSegment& seg, double offset) {
  if (!(offset >= 0.0 && offset <= seg.length)) {
    throw Error(Errc::out_of_range, "offset " + std::to_string(offset) + " outside segment " +
                                        std::to_string(seg.id.value));
  }
  const auto& g = seg.geometry;
  if (g.size() < 3) return 0.0;

  std::size_t nearest = 0;
  double best = offset;
  double along = 0.0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    along += distance(g[i - 1], g[i]);
    const double d = std::abs(along - offset);
    if (d < best) {
      best = d;
      nearest = i;
    }
  }
  const std::size_t mid = std::clamp<std::size_t>(nearest, 1, g.size() - 2);
  return three_point_curvature(g[mid - 1], g[mid], g[mid + 1]);
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace detail {

struct GridEdge {
  NodeId a;
  NodeId b;
};

inline std::vector<Point> edge_geometry(Point a, Point b, Rng& rng) {
  const double bend = rng.uniform(-0.15, 0.15);
  if (std::abs(bend) < 0.03) return {a, b};

  // Circular arc through a, b with sagitta bend * chord.
  const double chord = distance(a, b);
  const double sagitta = bend * chord;
  const double radius = (chord * chord / 4.0 + sagitta * sagitta) / (2.0 * std::abs(sagitta));
  const Point mid{(a.x + b.x) / 2.0, (a.y + b.y) / 2.0};
  const double nx = -(b.y - a.y) / chord;
  const double ny = (b.x - a.x) / chord;
  const double sign = sagitta > 0 ? 1.0 : -1.0;
  // Centre lies on the far side of the chord from the bulge.
  const Point centre{mid.x - sign * nx * (radius - std::abs(sagitta)),
                     mid.y - sign * ny * (radius - std::abs(sagitta))};
  const double a0 = std::atan2(a.y - centre.y, a.x - centre.x);
  double a1 = std::atan2(b.y - centre.y, b.x - centre.x);
  double sweep = a1 - a0;
  while (sweep > std::numbers::pi) sweep -= 2 * std::numbers::pi;
  while (sweep < -std::numbers::pi) sweep += 2 * std::numbers::pi;

  const int steps = std::max(4, static_cast<int>(chord / 20.0));
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(steps) + 1);
  pts.push_back(a);
  for (int i = 1; i < steps; ++i) {
    const double t = a0 + sweep * i / steps;
    pts.push_back({centre.x + radius * std::cos(t), centre.y + radius * std::sin(t)});
  }
  pts.push_back(b);
  return pts;
}

}  // namespace detail

/// Deterministic random road network: a grid-growth graph with jittered node
/// positions, straight or arced edges, and attributes sampled per road class.
/// Edges are two-way where the segment budget allows.
inline RoadNetwork generate_synthetic(std::uint64_t seed, int n_segments) {
  if (n_segments < 2) throw Error(Errc::invalid_argument, "n_segments must be >= 2");

  constexpr double kSpacing = 250.0;
  constexpr double kJitter = 40.0;
  Rng rng(seed);

  std::map<std::pair<int, int>, NodeId> cell_node;
  std::vector<std::pair<int, int>> cells;
  std::vector<Point> positions;
  auto add_node = [&](int gx, int gy) {
    const NodeId id{static_cast<std::uint32_t>(cells.size() + 1)};
    cell_node.emplace(std::pair{gx, gy}, id);
    cells.emplace_back(gx, gy);
    positions.push_back({gx * kSpacing + rng.uniform(-kJitter, kJitter), gy * kSpacing + rng.uniform(-kJitter, kJitter)});
    return id;
  };
  add_node(0, 0);

  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<RoadSegment> segments;
  static constexpr std::array<std::pair<int, int>, 4> kDirs{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};

  while (static_cast<int>(segments.size()) < n_segments) {
    const auto from_idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cells.size()) - 1));
    const auto [dx, dy] = kDirs[static_cast<std::size_t>(rng.uniform_int(0, 3))];
    const auto [gx, gy] = cells[from_idx];
    const NodeId a{static_cast<std::uint32_t>(from_idx + 1)};
    NodeId b;
    if (auto it = cell_node.find({gx + dx, gy + dy}); it != cell_node.end()) {
      b = it->second;
    } else {
      b = add_node(gx + dx, gy + dy);
    }
    const auto key = std::minmax(a.value, b.value);
    if (!edges.insert(key).second) continue;

    const double class_roll = rng.uniform();
    RouteType type = class_roll < 0.1 ? RouteType::motorway
                     : class_roll < 0.3 ? RouteType::trunk
                     : class_roll < 0.7 ? RouteType::urban
                                        : RouteType::local;
    int speed = 50;
    int lanes = 1;
    switch (type) {
      case RouteType::motorway:
        speed = static_cast<int>(100 + 10 * rng.uniform_int(0, 3));
        lanes = static_cast<int>(rng.uniform_int(2, 4));
        break;
      case RouteType::trunk:
        speed = static_cast<int>(80 + 10 * rng.uniform_int(0, 2));
        lanes = static_cast<int>(rng.uniform_int(2, 3));
        break;
      case RouteType::urban:
        speed = static_cast<int>(30 + 10 * rng.uniform_int(0, 3));
        lanes = static_cast<int>(rng.uniform_int(1, 2));
        break;
      case RouteType::local:
        speed = static_cast<int>(20 + 10 * rng.uniform_int(0, 2));
        lanes = 1;
        break;
    }
    const bool tunnel = rng.bernoulli(0.05);
    const bool bridge = !tunnel && rng.bernoulli(0.05);
    const bool emergency = (type == RouteType::motorway || type == RouteType::trunk) && rng.bernoulli(0.3);

    const Point pa = positions[a.value - 1];
    const Point pb = positions[b.value - 1];
    auto geometry = detail::edge_geometry(pa, pb, rng);

    auto make = [&](NodeId from, NodeId to, std::vector<Point> g) {
      RoadSegment s;
      s.id = SegmentId{static_cast<std::uint32_t>(segments.size() + 1)};
      s.from_node = from;
      s.to_node = to;
      s.length = polyline_length(g);
      s.speed_limit = speed;
      s.lane_count = lanes;
      s.route_type = type;
      s.is_tunnel = tunnel;
      s.is_bridge = bridge;
      s.is_emergency_lane = emergency;
      s.geometry = std::move(g);
      segments.push_back(std::move(s));
    };
    auto reversed = geometry;
    std::reverse(reversed.begin(), reversed.end());
    make(a, b, std::move(geometry));
    if (static_cast<int>(segments.size()) < n_segments) make(b, a, std::move(reversed));
  }
  return build_network(std::move(segments));
}

// ---------------------------------------------------------------------------
// Serialization

/// Binary form: "RNW1", u32 count, then per segment a u32 byte length followed
/// by the fields in declaration order (little-endian).
inline std::vector<std::uint8_t> encode_network(const RoadNetwork& net) {
  ByteWriter w;
  w.raw(std::string_view("RNW1"));
  w.u32(static_cast<std::uint32_t>(net.size()));
  for (const auto& [id, s] : net.segments()) {
    const std::size_t len_pos = w.size();
    w.u32(0);
    w.u32(s.id.value);
    w.u32(s.from_node.value);
    w.u32(s.to_node.value);
    w.f64(s.length);
    w.u16(static_cast<std::uint16_t>(s.speed_limit));
    w.u8(static_cast<std::uint8_t>(s.lane_count));
    w.u8(static_cast<std::uint8_t>(s.route_type));
    w.u8(static_cast<std::uint8_t>((s.is_tunnel ? 1 : 0) | (s.is_bridge ? 2 : 0) | (s.is_emergency_lane ? 4 : 0)));
    w.u32(static_cast<std::uint32_t>(s.geometry.size()));
    for (auto p : s.geometry) {
      w.f64(p.x);
      w.f64(p.y);
    }
    w.patch_u32(len_pos, static_cast<std::uint32_t>(w.size() - len_pos - 4));
  }
  return std::move(w).take();
}

inline RoadNetwork decode_network(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("RNW1");
  const std::uint32_t count = r.u32();
  std::vector<RoadSegment> segments;
  for (std::uint32_t i = 0; i < count; ++i) {
    ByteReader rec = r.sub(r.u32());
    RoadSegment s;
    s.id.value = rec.u32();
    s.from_node.value = rec.u32();
    s.to_node.value = rec.u32();
    s.length = rec.f64();
    s.speed_limit = rec.u16();
    s.lane_count = rec.u8();
    const auto route = rec.u8();
    if (route > 3) throw Error(Errc::parse_error, "route type out of range");
    s.route_type = static_cast<RouteType>(route);
    const auto flags = rec.u8();
    s.is_tunnel = flags & 1;
    s.is_bridge = flags & 2;
    s.is_emergency_lane = flags & 4;
    const std::uint32_t n = rec.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
      const double x = rec.f64();
      const double y = rec.f64();
      s.geometry.push_back({x, y});
    }
    if (!rec.done()) throw Error(Errc::parse_error, "trailing bytes in segment record");
    segments.push_back(std::move(s));
  }
  if (!r.done()) throw Error(Errc::parse_error, "trailing bytes after network");
  return build_network(std::move(segments));
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_number(std::string_view tok) {
  T v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw Error(Errc::parse_error, "bad number '" + std::string(tok) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// Text form, one segment per line:
/// `seg <id> <from> <to> <length> <speed> <lanes> <route> <tunnel> <bridge> <emergency> <n> <x0> <y0> ...`
/// `#` starts a comment. Doubles use the shortest exact representation.
inline std::string network_to_text(const RoadNetwork& net) {
  std::ostringstream out;
  out << "# seg id from to length speed_limit lane_count route_type tunnel bridge emergency n_points x y ...\n";
  for (const auto& [id, s] : net.segments()) {
    out << "seg " << s.id.value << ' ' << s.from_node.value << ' ' << s.to_node.value << ' '
        << detail::format_double(s.length) << ' ' << s.speed_limit << ' ' << s.lane_count << ' '
        << to_string(s.route_type) << ' ' << int{s.is_tunnel} << ' ' << int{s.is_bridge} << ' '
        << int{s.is_emergency_lane} << ' ' << s.geometry.size();
    for (auto p : s.geometry) out << ' ' << detail::format_double(p.x) << ' ' << detail::format_double(p.y);
    out << '\n';
  }
  return out.str();
}

inline RoadNetwork network_from_text(std::string_view text) {
  std::vector<RoadSegment> segments;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    auto fail = [&](const std::string& what) {
      return Error(Errc::parse_error, "line " + std::to_string(line_no) + ": " + what);
    };
    if (tok[0] != "seg" || tok.size() < 12) throw fail("expected 'seg' record with at least 12 fields");
    try {
      RoadSegment s;
      s.id.value = detail::parse_number<std::uint32_t>(tok[1]);
      s.from_node.value = detail::parse_number<std::uint32_t>(tok[2]);
      s.to_node.value = detail::parse_number<std::uint32_t>(tok[3]);
      s.length = detail::parse_number<double>(tok[4]);
      s.speed_limit = detail::parse_number<int>(tok[5]);
      s.lane_count = detail::parse_number<int>(tok[6]);
      auto route = parse_route_type(tok[7]);
      if (!route) throw fail("unknown route type");
      s.route_type = *route;
      s.is_tunnel = detail::parse_number<int>(tok[8]) != 0;
      s.is_bridge = detail::parse_number<int>(tok[9]) != 0;
      s.is_emergency_lane = detail::parse_number<int>(tok[10]) != 0;
      const auto n = detail::parse_number<std::size_t>(tok[11]);
      if (tok.size() != 12 + 2 * n) throw fail("point count does not match coordinates");
      for (std::size_t k = 0; k < n; ++k) {
        s.geometry.push_back({detail::parse_number<double>(tok[12 + 2 * k]), detail::parse_number<double>(tok[13 + 2 * k])});
      }
      segments.push_back(std::move(s));
    } catch (const Error& e) {
      if (e.code() == Errc::parse_error && std::string_view(e.what()).find("line ") != std::string_view::npos) throw;
      throw fail(e.what());
    }
  }
  return build_network(std::move(segments));
}

}  // namespace mapchain
