#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mapchain/map_store.hpp"
#include "mapchain/road_model.hpp"

namespace mapchain {

// Segment attributes mirrored into the map store.
inline constexpr std::string_view kSpeedLimit = "speed_limit";
inline constexpr std::string_view kLaneCount = "lane_count";
inline constexpr std::string_view kRouteType = "route_type";
inline constexpr std::string_view kTunnel = "is_tunnel";
inline constexpr std::string_view kBridge = "is_bridge";
inline constexpr std::string_view kEmergencyLane = "is_emergency_lane";

struct AttributeSpec {
  std::string_view name;
  BuildingBlock layer;
};

inline constexpr std::array<AttributeSpec, 6> kSegmentAttributes{{
    {kSpeedLimit, BuildingBlock::traffic_info},
    {kLaneCount, BuildingBlock::routing},
    {kRouteType, BuildingBlock::routing},
    {kTunnel, BuildingBlock::routing},
    {kBridge, BuildingBlock::routing},
    {kEmergencyLane, BuildingBlock::routing},
}};

inline std::optional<BuildingBlock> layer_of(std::string_view attribute) noexcept {
  for (const auto& spec : kSegmentAttributes) {
    if (spec.name == attribute) return spec.layer;
  }
  return std::nullopt;
}

inline Value ground_truth_value(const RoadSegment& s, std::string_view attribute) {
  if (attribute == kSpeedLimit) return Value{std::int64_t{s.speed_limit}};
  if (attribute == kLaneCount) return Value{std::int64_t{s.lane_count}};
  if (attribute == kRouteType) return Value{EnumTag{static_cast<std::uint16_t>(s.route_type)}};
  if (attribute == kTunnel) return Value{s.is_tunnel};
  if (attribute == kBridge) return Value{s.is_bridge};
  if (attribute == kEmergencyLane) return Value{s.is_emergency_lane};
  throw Error(Errc::malformed_key, "unknown segment attribute '" + std::string(attribute) + "'");
}

/// Values an attribute can plausibly take; sensor noise draws from these.
inline std::vector<Value> attribute_domain(std::string_view attribute) {
  std::vector<Value> out;
  if (attribute == kSpeedLimit) {
    for (std::int64_t v = 20; v <= 130; v += 10) out.emplace_back(v);
  } else if (attribute == kLaneCount) {
    for (std::int64_t v = 1; v <= 6; ++v) out.emplace_back(v);
  } else if (attribute == kRouteType) {
    for (std::uint16_t v = 0; v < 4; ++v) out.emplace_back(EnumTag{v});
  } else if (attribute == kTunnel || attribute == kBridge || attribute == kEmergencyLane) {
    out.emplace_back(false);
    out.emplace_back(true);
  } else {
    throw Error(Errc::malformed_key, "unknown segment attribute '" + std::string(attribute) + "'");
  }
  return out;
}

/// Partitions segments into square update regions by the tile containing the
/// segment's start point.
class RegionIndex {
 public:
  explicit RegionIndex(const RoadNetwork& net, double tile_size = 1000.0) {
    if (!(tile_size > 0)) throw Error(Errc::invalid_argument, "tile_size must be > 0");
    for (const auto& [id, s] : net.segments()) {
      const Point p = s.geometry.front();
      const auto tx = static_cast<std::int64_t>(std::floor(p.x / tile_size)) + 32768;
      const auto ty = static_cast<std::int64_t>(std::floor(p.y / tile_size)) + 32768;
      if (tx < 0 || tx > 0xFFFF || ty < 0 || ty > 0xFFFF) throw Error(Errc::out_of_range, "network too large for tiling");
      const RegionId region{static_cast<std::uint32_t>((tx << 16) | ty)};
      region_of_.emplace(id, region);
      members_[region].push_back(id);
    }
  }

  [[nodiscard]] RegionId region_of(SegmentId seg) const {
    auto it = region_of_.find(seg);
    if (it == region_of_.end()) throw Error(Errc::unknown_segment, "segment " + std::to_string(seg.value));
    return it->second;
  }

  [[nodiscard]] bool contains(SegmentId seg) const noexcept { return region_of_.contains(seg); }

  [[nodiscard]] const std::map<RegionId, std::vector<SegmentId>>& regions() const noexcept { return members_; }

 private:
  std::map<SegmentId, RegionId> region_of_;
  std::map<RegionId, std::vector<SegmentId>> members_;
};

/// Loads every segment attribute of `net` into a fresh store, one commit per
/// region (so each region starts at version 1).
inline MapStore build_map_store(const RoadNetwork& net, const RegionIndex& regions) {
  MapStore store;
  for (const auto& [region, members] : regions.regions()) {
    for (auto seg : members) {
      const auto& s = net.segment(seg);
      for (const auto& spec : kSegmentAttributes) {
        store.put(MapRecord{spec.layer, region, AttributeKey{seg, std::string(spec.name)}, ground_truth_value(s, spec.name)});
      }
    }
    store.commit(region);
  }
  return store;
}

/// Per-segment attributes as read back from a store.
struct SegmentAttributes {
  int speed_limit = 0;
  int lane_count = 0;
  RouteType route_type = RouteType::urban;
  bool is_tunnel = false;
  bool is_bridge = false;
  bool is_emergency_lane = false;
  friend bool operator==(const SegmentAttributes&, const SegmentAttributes&) = default;
};

/// Reads all segment attributes from the committed state; nullopt when any is
/// missing (segment not covered by the store).
inline std::optional<SegmentAttributes> read_attributes(const MapStore& store, const RegionIndex& regions, SegmentId seg) {
  const RegionId region = regions.region_of(seg);
  auto fetch = [&](std::string_view name) {
    return store.get_committed(*layer_of(name), region, AttributeKey{seg, std::string(name)});
  };
  const auto speed = fetch(kSpeedLimit);
  const auto lanes = fetch(kLaneCount);
  const auto route = fetch(kRouteType);
  const auto tunnel = fetch(kTunnel);
  const auto bridge = fetch(kBridge);
  const auto emergency = fetch(kEmergencyLane);
  if (!speed || !lanes || !route || !tunnel || !bridge || !emergency) return std::nullopt;
  try {
    SegmentAttributes a;
    a.speed_limit = static_cast<int>(std::get<std::int64_t>(*speed));
    a.lane_count = static_cast<int>(std::get<std::int64_t>(*lanes));
    const auto tag = std::get<EnumTag>(*route).value;
    if (tag > 3) return std::nullopt;
    a.route_type = static_cast<RouteType>(tag);
    a.is_tunnel = std::get<bool>(*tunnel);
    a.is_bridge = std::get<bool>(*bridge);
    a.is_emergency_lane = std::get<bool>(*emergency);
    return a;
  } catch (const std::bad_variant_access&) {
    return std::nullopt;
  }
}

}  // namespace mapchain
