#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mapchain/attributes.hpp"
#include "mapchain/map_store.hpp"
#include "mapchain/road_model.hpp"

namespace mapchain {

struct VehiclePosition {
  SegmentId segment;
  double offset = 0.0;  // meters from segment start
  double speed = 0.0;   // m/s
  std::uint64_t gps_timestamp = 0;  // ms
  int current_lane = 1;
  double probability = 1.0;
  double confidence = 1.0;
};

/// A linear run of adjacent segments. Index 1 is always the most probable path.
struct Path {
  std::uint8_t index = 1;
  std::vector<SegmentId> segments;
  double total_length = 0.0;
  friend bool operator==(const Path&, const Path&) = default;
};

/// Attributes of one segment, placed on a path by offset. `id` is 0 on the
/// receiving side, which never sees segment identifiers.
struct SegmentDescriptor {
  std::uint8_t path_index = 1;
  double offset = 0.0;
  double length = 0.0;
  SegmentAttributes attributes;
  SegmentId id;
};

struct Stub {
  std::uint8_t parent_path = 1;
  double offset = 0.0;
  std::optional<std::uint8_t> branch_path;
  double turn_angle = 0.0;  // degrees in (-180, 180]
  int lane_count = 0;
  double branch_probability = 0.0;
};

enum class Interpolation : std::uint8_t { discrete = 0, linear = 1 };

/// Curvature profile between offset and offset + distance1.
struct ProfileSpan {
  std::uint8_t path_index = 1;
  double offset = 0.0;
  double value0 = 0.0;
  double distance1 = 0.0;
  double value1 = 0.0;
  Interpolation interpolation = Interpolation::linear;
};

enum class AttachmentType : std::uint8_t { speed_limit_sign = 0, other = 1 };

struct Attachment {
  std::uint8_t path_index = 1;
  double offset = 0.0;
  AttachmentType type = AttachmentType::speed_limit_sign;
  int value = 0;
};

/// Vehicle position projected onto a horizon path.
struct HorizonPosition {
  std::uint8_t path_index = 1;
  double offset = 0.0;
  double speed = 0.0;
  std::uint64_t gps_timestamp = 0;
  int current_lane = 1;
  double probability = 1.0;
  double confidence = 1.0;
};

struct Horizon {
  std::vector<Path> paths;
  std::vector<SegmentDescriptor> segments;
  std::vector<Stub> stubs;
  std::vector<ProfileSpan> profiles;
  std::vector<Attachment> attachments;
  HorizonPosition position;
};

enum class HorizonMode : std::uint8_t { single_path, multi_path };

struct HorizonConfig {
  double horizon_length = 1000.0;
  HorizonMode mode = HorizonMode::single_path;
  int max_branch_depth = 1;
  double profile_tolerance = 5e-4;
};

inline constexpr double kProfileSampleStep = 10.0;
inline constexpr std::size_t kMaxPaths = 63;

// ---------------------------------------------------------------------------
// Transition model

/// Signed turn angle in degrees from the end of `from` onto `to`, in (-180, 180].
inline double turn_angle(const RoadSegment& from, const RoadSegment& to) noexcept {
  double a = (start_heading(to) - end_heading(from)) * 180.0 / std::numbers::pi;
  while (a > 180.0) a -= 360.0;
  while (a <= -180.0) a += 360.0;
  return a;
}

/// Unnormalized heuristic weight of continuing from `from` onto `to`: class
/// continuity (2 or 1) times max(0.1, cos(turn/2)).
inline double transition_weight(const RoadSegment& from, const RoadSegment& to) noexcept {
  const double w_class = from.route_type == to.route_type ? 2.0 : 1.0;
  const double half_turn = turn_angle(from, to) / 2.0 * std::numbers::pi / 180.0;
  return w_class * std::max(0.1, std::cos(half_turn));
}

/// Successors of `from` with their normalized probabilities, ascending by id.
inline std::vector<std::pair<SegmentId, double>> transition_probabilities(const RoadNetwork& net, SegmentId from) {
  const auto& src = net.segment(from);
  const auto& next = successors(net, from);
  std::vector<std::pair<SegmentId, double>> out;
  double total = 0.0;
  for (auto id : next) {
    const double w = transition_weight(src, net.segment(id));
    out.emplace_back(id, w);
    total += w;
  }
  for (auto& [id, p] : out) p /= total;
  return out;
}

inline double transition_probability(const RoadNetwork& net, SegmentId from, SegmentId to) {
  for (auto [id, p] : transition_probabilities(net, from)) {
    if (id == to) return p;
  }
  throw Error(Errc::invalid_argument,
              "segment " + std::to_string(to.value) + " does not follow " + std::to_string(from.value));
}

/// Argmax successor; ties go to the lowest id.
inline std::optional<SegmentId> most_probable_successor(const RoadNetwork& net, SegmentId from) {
  std::optional<SegmentId> best;
  double best_p = -1.0;
  for (auto [id, p] : transition_probabilities(net, from)) {
    if (p > best_p) {
      best = id;
      best_p = p;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Most probable path

inline void validate_position(const RoadNetwork& net, const VehiclePosition& pos) {
  if (!net.contains(pos.segment)) {
    throw Error(Errc::invalid_position, "unknown segment " + std::to_string(pos.segment.value));
  }
  const auto& s = net.segment(pos.segment);
  if (!(pos.offset >= 0.0 && pos.offset <= s.length)) throw Error(Errc::invalid_position, "offset outside segment");
  if (!(pos.probability >= 0.0 && pos.probability <= 1.0)) throw Error(Errc::invalid_position, "probability outside [0,1]");
  if (!(pos.confidence >= 0.0 && pos.confidence <= 1.0)) throw Error(Errc::invalid_position, "confidence outside [0,1]");
  if (pos.current_lane < 1) throw Error(Errc::invalid_position, "current_lane < 1");
}

namespace detail {

/// Greedy argmax extension from the start of `start` until `budget` meters
/// beyond `start_offset` are covered, a dead end, a repeated segment, or a
/// segment rejected by `usable`.
inline Path extend_greedy(const RoadNetwork& net, SegmentId start, double start_offset, double budget,
                          const std::function<bool(SegmentId)>& usable) {
  Path path;
  path.segments.push_back(start);
  path.total_length = net.segment(start).length;
  double covered = path.total_length - start_offset;
  std::set<SegmentId> used{start};
  SegmentId cur = start;
  while (covered < budget) {
    const auto next = most_probable_successor(net, cur);
    if (!next || used.contains(*next) || !usable(*next)) break;
    const double len = net.segment(*next).length;
    path.segments.push_back(*next);
    path.total_length += len;
    covered += len;
    used.insert(*next);
    cur = *next;
  }
  return path;
}

}  // namespace detail

/// Most probable path from the vehicle's segment: follows the argmax
/// continuation until `horizon_length` meters ahead of the vehicle are covered.
/// Traversed segments behind the vehicle are not part of the path.
inline Path compute_mpp(const RoadNetwork& net, const VehiclePosition& pos, double horizon_length) {
  validate_position(net, pos);
  if (!(horizon_length > 0.0)) throw Error(Errc::invalid_argument, "horizon_length must be > 0");
  return detail::extend_greedy(net, pos.segment, pos.offset, horizon_length, [](SegmentId) { return true; });
}

// ---------------------------------------------------------------------------
// Profiles

/// Curvature at `s` meters along `path`. Boundaries belong to the later segment.
inline double path_curvature(const RoadNetwork& net, const Path& path, double s) {
  double start = 0.0;
  for (std::size_t i = 0; i < path.segments.size(); ++i) {
    const auto& seg = net.segment(path.segments[i]);
    const bool last = i + 1 == path.segments.size();
    if (s < start + seg.length || last) {
      return curvature_at(seg, std::clamp(s - start, 0.0, seg.length));
    }
    start += seg.length;
  }
  return 0.0;
}

/// Greedy piecewise-linear fit of curvature sampled every 10 m: each span is
/// extended while every interior sample stays within `tolerance` of the chord.
/// Spans tile [0, total_length] and share endpoint values.
inline std::vector<ProfileSpan> fit_profiles(const RoadNetwork& net, const Path& path, double tolerance) {
  if (!(tolerance > 0.0)) throw Error(Errc::invalid_argument, "profile tolerance must be > 0");
  if (path.segments.empty()) return {};

  std::vector<double> at;
  for (double s = 0.0; s < path.total_length; s += kProfileSampleStep) at.push_back(s);
  at.push_back(path.total_length);
  std::vector<double> k(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) k[i] = path_curvature(net, path, at[i]);

  auto fits = [&](std::size_t i, std::size_t j) {
    for (std::size_t m = i + 1; m < j; ++m) {
      const double chord = k[i] + (k[j] - k[i]) * (at[m] - at[i]) / (at[j] - at[i]);
      if (std::abs(k[m] - chord) > tolerance) return false;
    }
    return true;
  };

  std::vector<ProfileSpan> spans;
  const std::size_t last = at.size() - 1;
  std::size_t i = 0;
  while (i < last) {
    std::size_t j = i + 1;
    while (j + 1 <= last && fits(i, j + 1)) ++j;
    spans.push_back({path.index, at[i], k[i], at[j] - at[i], k[j], Interpolation::linear});
    i = j;
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Horizon extraction

/// Builds the horizon around `pos` from the network topology and the
/// attributes held in `store`. Paths stop at segments the store does not
/// cover; the vehicle's own segment must be covered.
inline Horizon extract_horizon(const RoadNetwork& net, const MapStore& store, const RegionIndex& regions,
                               const VehiclePosition& pos, const HorizonConfig& config) {
  validate_position(net, pos);
  if (!(config.horizon_length > 0.0)) throw Error(Errc::invalid_argument, "horizon_length must be > 0");

  auto attrs = [&](SegmentId id) { return read_attributes(store, regions, id); };
  if (!attrs(pos.segment)) {
    throw Error(Errc::uncovered_region, "no map data for segment " + std::to_string(pos.segment.value) + " in region " +
                                            std::to_string(regions.region_of(pos.segment).value));
  }
  auto covered = [&](SegmentId id) { return attrs(id).has_value(); };

  Horizon h;
  struct Pending {
    std::size_t path_slot;
    int depth;
    double start_distance;  // distance from the vehicle to the path start
  };

  Path root = detail::extend_greedy(net, pos.segment, pos.offset, config.horizon_length, covered);
  root.index = 1;
  h.paths.push_back(std::move(root));
  std::deque<Pending> queue{{0, 0, -pos.offset}};

  while (!queue.empty()) {
    const Pending cur = queue.front();
    queue.pop_front();
    // Copy: h.paths may grow below.
    const Path path = h.paths[cur.path_slot];
    double boundary = 0.0;
    for (std::size_t i = 0; i + 1 < path.segments.size(); ++i) {
      const SegmentId here = path.segments[i];
      const SegmentId chosen = path.segments[i + 1];
      boundary += net.segment(here).length;
      for (auto [branch, prob] : transition_probabilities(net, here)) {
        if (branch == chosen) continue;
        Stub stub;
        stub.parent_path = path.index;
        stub.offset = boundary;
        stub.turn_angle = turn_angle(net.segment(here), net.segment(branch));
        stub.branch_probability = prob;
        const auto branch_attrs = attrs(branch);
        stub.lane_count = branch_attrs ? branch_attrs->lane_count : 0;

        const bool materialize = config.mode == HorizonMode::multi_path && cur.depth + 1 <= config.max_branch_depth &&
                                 h.paths.size() < kMaxPaths && branch_attrs.has_value();
        if (materialize) {
          const double start_distance = cur.start_distance + boundary;
          Path bp = detail::extend_greedy(net, branch, 0.0, config.horizon_length - start_distance, covered);
          bp.index = static_cast<std::uint8_t>(h.paths.size() + 1);
          stub.branch_path = bp.index;
          h.paths.push_back(std::move(bp));
          queue.push_back({h.paths.size() - 1, cur.depth + 1, start_distance});
        }
        h.stubs.push_back(stub);
      }
    }
  }

  for (const auto& path : h.paths) {
    double offset = 0.0;
    for (auto id : path.segments) {
      const auto a = *attrs(id);
      const double len = net.segment(id).length;
      h.segments.push_back({path.index, offset, len, a, id});
      h.attachments.push_back({path.index, offset, AttachmentType::speed_limit_sign, a.speed_limit});
      offset += len;
    }
    auto spans = fit_profiles(net, path, config.profile_tolerance);
    h.profiles.insert(h.profiles.end(), spans.begin(), spans.end());
  }

  h.position = HorizonPosition{1, pos.offset, pos.speed, pos.gps_timestamp, pos.current_lane, pos.probability,
                               pos.confidence};
  return h;
}

}  // namespace mapchain
