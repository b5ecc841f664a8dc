#pragma once

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls into the code path it is meant to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mapchain/adasis_codec.hpp"
#include "mapchain/horizon.hpp"
#include "mapchain/map_store.hpp"
#include "mapchain/random.hpp"
#include "mapchain/road_model.hpp"

namespace mapchain::oracle {

// ---------------------------------------------------------------------------
// Road model

/// O(n^2) endpoint scan: for every segment, all segments leaving its end node;
/// the reverse twin only when nothing else leaves.
inline std::map<std::pair<NodeId, SegmentId>, std::vector<SegmentId>> brute_adjacency(const RoadNetwork& net) {
  std::map<std::pair<NodeId, SegmentId>, std::vector<SegmentId>> out;
  for (const auto& [a, sa] : net.segments()) {
    std::vector<SegmentId> plain, back;
    for (const auto& [b, sb] : net.segments()) {
      if (sb.from_node != sa.to_node) continue;
      if (sb.to_node == sa.from_node) back.push_back(b);
      else plain.push_back(b);
    }
    auto& v = out[{sa.to_node, a}];
    v = plain.empty() ? back : plain;
    std::sort(v.begin(), v.end());
  }
  return out;
}

/// Polyline of `n` vertices on a circle of radius r, sweeping `sweep` radians
/// counter-clockwise (positive curvature) or clockwise.
inline RoadSegment circle_segment(double r, int n, double sweep, bool ccw, SegmentId id = SegmentId{1}) {
  RoadSegment s;
  s.id = id;
  s.from_node = NodeId{1};
  s.to_node = NodeId{2};
  s.speed_limit = 50;
  s.lane_count = 1;
  s.route_type = RouteType::urban;
  for (int i = 0; i < n; ++i) {
    const double a = sweep * i / (n - 1);
    const double y = ccw ? r - r * std::cos(a) : -(r - r * std::cos(a));
    s.geometry.push_back({r * std::sin(a), y});
  }
  s.length = 0.0;
  for (std::size_t i = 1; i < s.geometry.size(); ++i) {
    s.length += std::hypot(s.geometry[i].x - s.geometry[i - 1].x, s.geometry[i].y - s.geometry[i - 1].y);
  }
  return s;
}

inline RoadSegment straight_segment(SegmentId id, NodeId from, NodeId to, Point a, Point b, int speed = 50,
                                    RouteType route = RouteType::urban) {
  RoadSegment s;
  s.id = id;
  s.from_node = from;
  s.to_node = to;
  s.speed_limit = speed;
  s.lane_count = 2;
  s.route_type = route;
  s.geometry = {a, b};
  s.length = std::hypot(b.x - a.x, b.y - a.y);
  return s;
}

// ---------------------------------------------------------------------------
// Transition probabilities straight from the formula

inline double heading_deg(Point a, Point b) { return std::atan2(b.y - a.y, b.x - a.x) * 180.0 / std::numbers::pi; }

inline double formula_weight(const RoadSegment& from, const RoadSegment& to) {
  const auto& f = from.geometry;
  const auto& t = to.geometry;
  double turn = heading_deg(t[0], t[1]) - heading_deg(f[f.size() - 2], f[f.size() - 1]);
  turn = std::remainder(turn, 360.0);
  if (turn <= -180.0) turn += 360.0;
  const double w_class = from.route_type == to.route_type ? 2.0 : 1.0;
  const double w_angle = std::max(0.1, std::cos(turn / 2.0 * std::numbers::pi / 180.0));
  return w_class * w_angle;
}

/// Normalized probabilities over the brute-force successor set.
inline std::map<SegmentId, double> formula_probabilities(const RoadNetwork& net, SegmentId from) {
  const auto adj = brute_adjacency(net);
  const auto& src = net.segment(from);
  std::map<SegmentId, double> out;
  double total = 0.0;
  for (auto id : adj.at({src.to_node, from})) {
    out[id] = formula_weight(src, net.segment(id));
    total += out[id];
  }
  for (auto& [id, p] : out) p /= total;
  return out;
}

/// Exhaustive argmax over successors, lowest id on ties (with a small
/// tolerance so that floating noise does not decide symmetric junctions).
inline std::optional<SegmentId> argmax_successor(const RoadNetwork& net, SegmentId from, double scale = 1.0) {
  std::optional<SegmentId> best;
  double best_w = 0.0;
  const auto probs = formula_probabilities(net, from);
  for (const auto& [id, p] : probs) {
    const double w = p * scale;
    if (!best || w > best_w + 1e-12 * scale) {
      best = id;
      best_w = w;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Bit packing reference: builds the bit string field by field.

struct Field {
  std::uint64_t value;
  int bits;
};

inline std::array<std::uint8_t, 14> pack_fields(const std::vector<Field>& fields) {
  std::string bitstr;
  for (const auto& f : fields) {
    for (int i = f.bits - 1; i >= 0; --i) bitstr.push_back(((f.value >> i) & 1) ? '1' : '0');
  }
  bitstr.resize(112, '0');
  std::array<std::uint8_t, 14> out{};
  for (std::size_t byte = 0; byte < 14; ++byte) {
    out[byte] = static_cast<std::uint8_t>(std::stoi(bitstr.substr(byte * 8, 8), nullptr, 2));
  }
  return out;
}

inline std::uint64_t twos(std::int64_t v, int bits) { return static_cast<std::uint64_t>(v) & ((1ULL << bits) - 1); }

/// Field table of one message in wire order.
inline std::vector<Field> fields_of(const AdasisMessage& m) {
  return std::visit(
      [](const auto& v) -> std::vector<Field> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PositionMsg>) {
          return {{v.path_index, 6}, {v.offset_q, 13}, {v.probability_q, 6}, {v.confidence_q, 6},
                  {v.gps_timestamp, 48}, {v.speed_q, 10}, {v.current_lane, 4}, {v.message_count, 16}};
        } else if constexpr (std::is_same_v<T, SegmentMsg>) {
          return {{v.path_index, 6}, {v.offset_q, 13}, {v.end_q, 13}, {v.speed_limit, 8}, {v.lane_count, 4},
                  {static_cast<std::uint64_t>(v.route_type), 2}, {v.is_tunnel, 1}, {v.is_bridge, 1},
                  {v.is_emergency_lane, 1}, {v.path_length_dm, 20}};
        } else if constexpr (std::is_same_v<T, StubMsg>) {
          return {{v.path_index, 6}, {v.offset_q, 13}, {v.branch_path_index, 6}, {twos(v.turn_angle_q, 7), 7},
                  {v.lane_count, 4}, {v.branch_probability_q, 6}};
        } else if constexpr (std::is_same_v<T, ProfileMsg>) {
          return {{v.path_index, 6}, {v.offset_q, 13}, {twos(v.value0, 16), 16}, {v.distance1_q, 13},
                  {twos(v.value1, 16), 16}, {static_cast<std::uint64_t>(v.interpolation), 1}};
        } else {
          return {{v.path_index, 6}, {v.offset_q, 13}, {static_cast<std::uint64_t>(v.attribute_type), 1},
                  {v.attribute_value, 16}};
        }
      },
      m);
}

// ---------------------------------------------------------------------------
// Random messages with every field inside its wire range

inline AdasisMessage random_message(Rng& rng, MessageType type) {
  auto u = [&](std::int64_t lo, std::int64_t hi) { return rng.uniform_int(lo, hi); };
  switch (type) {
    case MessageType::position: {
      PositionMsg m;
      m.path_index = static_cast<std::uint8_t>(u(0, 63));
      m.offset_q = static_cast<std::uint16_t>(u(0, 8191));
      m.probability_q = static_cast<std::uint8_t>(u(0, 63));
      m.confidence_q = static_cast<std::uint8_t>(u(0, 63));
      m.gps_timestamp = static_cast<std::uint64_t>(u(0, (1LL << 48) - 1));
      m.speed_q = static_cast<std::uint16_t>(u(0, 1023));
      m.current_lane = static_cast<std::uint8_t>(u(0, 15));
      m.message_count = static_cast<std::uint16_t>(u(0, 65535));
      return m;
    }
    case MessageType::segment: {
      SegmentMsg m;
      m.path_index = static_cast<std::uint8_t>(u(0, 63));
      m.offset_q = static_cast<std::uint16_t>(u(0, 8191));
      m.end_q = static_cast<std::uint16_t>(u(0, 8191));
      m.speed_limit = static_cast<std::uint8_t>(u(0, 255));
      m.lane_count = static_cast<std::uint8_t>(u(0, 15));
      m.route_type = static_cast<RouteType>(u(0, 3));
      m.is_tunnel = u(0, 1) == 1;
      m.is_bridge = u(0, 1) == 1;
      m.is_emergency_lane = u(0, 1) == 1;
      m.path_length_dm = static_cast<std::uint32_t>(u(0, (1 << 20) - 1));
      return m;
    }
    case MessageType::stub: {
      StubMsg m;
      m.path_index = static_cast<std::uint8_t>(u(0, 63));
      m.offset_q = static_cast<std::uint16_t>(u(0, 8191));
      m.branch_path_index = static_cast<std::uint8_t>(u(0, 63));
      m.turn_angle_q = static_cast<std::int8_t>(u(-59, 60));
      m.lane_count = static_cast<std::uint8_t>(u(0, 15));
      m.branch_probability_q = static_cast<std::uint8_t>(u(0, 63));
      return m;
    }
    case MessageType::profile: {
      ProfileMsg m;
      m.path_index = static_cast<std::uint8_t>(u(0, 63));
      m.offset_q = static_cast<std::uint16_t>(u(0, 8191));
      m.value0 = static_cast<std::int16_t>(u(-32768, 32767));
      m.distance1_q = static_cast<std::uint16_t>(u(0, 8191));
      m.value1 = static_cast<std::int16_t>(u(-32768, 32767));
      m.interpolation = static_cast<Interpolation>(u(0, 1));
      return m;
    }
    case MessageType::attachment: {
      AttachmentMsg m;
      m.path_index = static_cast<std::uint8_t>(u(0, 63));
      m.offset_q = static_cast<std::uint16_t>(u(0, 8191));
      m.attribute_type = static_cast<AttachmentType>(u(0, 1));
      m.attribute_value = static_cast<std::uint16_t>(u(0, 65535));
      return m;
    }
  }
  return PositionMsg{};
}

inline constexpr std::array<MessageType, 5> kAllTypes{MessageType::position, MessageType::segment, MessageType::stub,
                                                      MessageType::profile, MessageType::attachment};

// ---------------------------------------------------------------------------
// Map store

using RecordSet = std::map<RecordKey, Value>;

/// Ops that turn `before` into `after`, sorted by key.
inline std::vector<PatchOp> snapshot_diff(const RecordSet& before, const RecordSet& after) {
  std::vector<PatchOp> ops;
  std::set<RecordKey> keys;
  for (const auto& [k, _] : before) keys.insert(k);
  for (const auto& [k, _] : after) keys.insert(k);
  for (const auto& k : keys) {
    auto b = before.find(k);
    auto a = after.find(k);
    if (a == after.end()) {
      ops.push_back({PatchOp::Kind::erase, k.layer, k.key, Value{std::int64_t{0}}});
    } else if (b == before.end() || b->second != a->second) {
      ops.push_back({PatchOp::Kind::set, k.layer, k.key, a->second});
    }
  }
  return ops;
}

inline RecordSet replay(RecordSet records, const std::vector<ChangePatch>& patches) {
  for (const auto& p : patches) {
    for (const auto& op : p.ops) {
      if (op.kind == PatchOp::Kind::set) records[RecordKey{op.layer, op.key}] = op.value;
      else records.erase(RecordKey{op.layer, op.key});
    }
  }
  return records;
}

inline AttributeKey random_key(Rng& rng, int segments = 50) {
  static const char* names[] = {"speed_limit", "lane_count", "route_type", "is_tunnel", "height", "width_cm"};
  return AttributeKey{SegmentId{static_cast<std::uint32_t>(rng.uniform_int(1, segments))},
                      names[rng.uniform_int(0, 5)]};
}

inline Value random_value(Rng& rng) {
  switch (rng.uniform_int(0, 2)) {
    case 0: return Value{rng.uniform_int(-1000, 1000)};
    case 1: return Value{rng.uniform_int(0, 1) == 1};
    default: return Value{EnumTag{static_cast<std::uint16_t>(rng.uniform_int(0, 7))}};
  }
}

// ---------------------------------------------------------------------------
// Statistics

struct BinomialBand {
  double mean;
  double sigma;
  [[nodiscard]] bool within(double x, double k = 3.0) const { return std::abs(x - mean) <= k * sigma; }
};

inline BinomialBand binomial(double n, double p) { return {n * p, std::sqrt(n * p * (1.0 - p))}; }

// ---------------------------------------------------------------------------
// Horizon comparison up to quantization

/// Position error allowed for an offset after quantization against a path
/// length that itself travels in decimeters.
inline double offset_tolerance(double path_length) { return path_length / 16382.0 + 0.05 + 1e-9; }

inline bool horizons_equivalent(const Horizon& sent, const Horizon& got, std::string* why = nullptr) {
  std::ostringstream err;
  auto fail = [&](const std::string& what) {
    if (why) *why = what;
    return false;
  };
  if (sent.paths.size() != got.paths.size()) return fail("path count " + std::to_string(got.paths.size()));
  std::map<std::uint8_t, double> len;
  for (std::size_t i = 0; i < sent.paths.size(); ++i) {
    if (sent.paths[i].index != got.paths[i].index) return fail("path index order");
    if (std::abs(sent.paths[i].total_length - got.paths[i].total_length) > 0.05 + 1e-9) return fail("path length");
    len[sent.paths[i].index] = sent.paths[i].total_length;
  }
  auto near = [&](std::uint8_t path, double a, double b) { return std::abs(a - b) <= offset_tolerance(len[path]); };

  auto by_offset = [](auto v) {
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      return std::tie(a.path_index, a.offset) < std::tie(b.path_index, b.offset);
    });
    return v;
  };
  const auto ss = by_offset(sent.segments);
  const auto gs = by_offset(got.segments);
  if (ss.size() != gs.size()) return fail("segment count");
  for (std::size_t i = 0; i < ss.size(); ++i) {
    if (ss[i].path_index != gs[i].path_index || !near(ss[i].path_index, ss[i].offset, gs[i].offset) ||
        !near(ss[i].path_index, ss[i].offset + ss[i].length, gs[i].offset + gs[i].length) ||
        !(ss[i].attributes == gs[i].attributes)) {
      return fail("segment " + std::to_string(i));
    }
  }

  auto stub_order = [](std::vector<Stub> v) {
    std::stable_sort(v.begin(), v.end(), [](const Stub& a, const Stub& b) {
      return std::tie(a.parent_path, a.offset, a.branch_path, a.turn_angle) <
             std::tie(b.parent_path, b.offset, b.branch_path, b.turn_angle);
    });
    return v;
  };
  const auto st = stub_order(sent.stubs);
  const auto gt = stub_order(got.stubs);
  if (st.size() != gt.size()) return fail("stub count");
  for (std::size_t i = 0; i < st.size(); ++i) {
    double da = std::abs(st[i].turn_angle - gt[i].turn_angle);
    da = std::min(da, 360.0 - da);
    if (st[i].parent_path != gt[i].parent_path || !near(st[i].parent_path, st[i].offset, gt[i].offset) ||
        st[i].branch_path != gt[i].branch_path || st[i].lane_count != gt[i].lane_count || da > 1.5 + 1e-9 ||
        std::abs(st[i].branch_probability - gt[i].branch_probability) > 0.5 / 63 + 1e-9) {
      return fail("stub " + std::to_string(i));
    }
  }

  const auto sp = by_offset(sent.profiles);
  const auto gp = by_offset(got.profiles);
  if (sp.size() != gp.size()) return fail("profile count");
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const auto p = sp[i].path_index;
    if (p != gp[i].path_index || !near(p, sp[i].offset, gp[i].offset) || !near(p, sp[i].distance1, gp[i].distance1) ||
        std::abs(sp[i].value0 - gp[i].value0) > 0.5e-5 + 1e-12 || std::abs(sp[i].value1 - gp[i].value1) > 0.5e-5 + 1e-12 ||
        sp[i].interpolation != gp[i].interpolation) {
      return fail("profile " + std::to_string(i));
    }
  }

  const auto sa = by_offset(sent.attachments);
  const auto ga = by_offset(got.attachments);
  if (sa.size() != ga.size()) return fail("attachment count");
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].path_index != ga[i].path_index || !near(sa[i].path_index, sa[i].offset, ga[i].offset) ||
        sa[i].type != ga[i].type || sa[i].value != ga[i].value) {
      return fail("attachment " + std::to_string(i));
    }
  }

  const auto& a = sent.position;
  const auto& b = got.position;
  if (a.path_index != b.path_index || !near(a.path_index, a.offset, b.offset) || std::abs(a.speed - b.speed) > 0.05 + 1e-9 ||
      a.gps_timestamp != b.gps_timestamp || a.current_lane != b.current_lane ||
      std::abs(a.probability - b.probability) > 0.5 / 63 + 1e-9 || std::abs(a.confidence - b.confidence) > 0.5 / 63 + 1e-9) {
    return fail("position");
  }
  return true;
}

}  // namespace mapchain::oracle
