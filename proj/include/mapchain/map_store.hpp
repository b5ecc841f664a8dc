#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mapchain/bytes.hpp"
#include "mapchain/error.hpp"
#include "mapchain/road_model.hpp"

namespace mapchain {

/// Content layer a record belongs to.
enum class BuildingBlock : std::uint8_t {
  routing = 0,
  lane_geometry = 1,
  traffic_info = 2,
  poi = 3,
  volatile_data = 4,
  geometry_3d = 5,
};

inline constexpr std::uint8_t kBuildingBlockCount = 6;

inline constexpr std::string_view to_string(BuildingBlock b) noexcept {
  switch (b) {
    case BuildingBlock::routing: return "routing";
    case BuildingBlock::lane_geometry: return "lane_geometry";
    case BuildingBlock::traffic_info: return "traffic_info";
    case BuildingBlock::poi: return "poi";
    case BuildingBlock::volatile_data: return "volatile";
    case BuildingBlock::geometry_3d: return "geometry_3d";
  }
  return "?";
}

struct RegionId {
  std::uint32_t value = 0;
  friend auto operator<=>(const RegionId&, const RegionId&) = default;
};

struct AttributeKey {
  SegmentId segment;
  std::string attribute;
  friend auto operator<=>(const AttributeKey&, const AttributeKey&) = default;
};

struct EnumTag {
  std::uint16_t value = 0;
  friend auto operator<=>(const EnumTag&, const EnumTag&) = default;
};

/// Scalar attribute value.
using Value = std::variant<std::int64_t, bool, EnumTag>;

inline std::string to_string(const Value& v) {
  if (auto i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (auto b = std::get_if<bool>(&v)) return *b ? "true" : "false";
  return "enum:" + std::to_string(std::get<EnumTag>(v).value);
}

/// (layer, key) identifies a record inside one region.
struct RecordKey {
  BuildingBlock layer = BuildingBlock::routing;
  AttributeKey key;
  friend auto operator<=>(const RecordKey&, const RecordKey&) = default;
};

struct MapRecord {
  BuildingBlock layer = BuildingBlock::routing;
  RegionId region;
  AttributeKey key;
  Value value;
};

struct PatchOp {
  enum class Kind : std::uint8_t { set = 0x01, erase = 0x02 };
  Kind kind = Kind::set;
  BuildingBlock layer = BuildingBlock::routing;
  AttributeKey key;
  Value value;  // unused for erase

  friend bool operator==(const PatchOp& a, const PatchOp& b) {
    return a.kind == b.kind && a.layer == b.layer && a.key == b.key && (a.kind == Kind::erase || a.value == b.value);
  }
};

/// Change-only update taking one region from `from_version` to `from_version + 1`.
struct ChangePatch {
  RegionId region;
  std::uint32_t from_version = 0;
  std::uint32_t to_version = 0;
  std::vector<PatchOp> ops;
  friend bool operator==(const ChangePatch&, const ChangePatch&) = default;
};

/// Committed record set of one region at one version.
struct RegionSnapshot {
  RegionId region;
  std::uint32_t version = 0;
  std::map<RecordKey, Value> records;
  friend bool operator==(const RegionSnapshot&, const RegionSnapshot&) = default;
};

namespace detail {

inline void validate_key(BuildingBlock layer, const AttributeKey& key) {
  if (static_cast<std::uint8_t>(layer) >= kBuildingBlockCount) throw Error(Errc::malformed_key, "unknown layer");
  if (key.segment.value == 0) throw Error(Errc::malformed_key, "segment id 0");
  if (key.attribute.empty() || key.attribute.size() > 64) {
    throw Error(Errc::malformed_key, "attribute name must have 1..64 characters");
  }
  for (char c : key.attribute) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok) throw Error(Errc::malformed_key, "attribute '" + key.attribute + "' has characters outside [a-z0-9_]");
  }
}

}  // namespace detail

/// Versioned, layered, per-region attribute store with staged writes and
/// single-step change patches. Writers must be externally serialized; const
/// access to committed state is safe from several threads.
class MapStore {
 public:
  /// Stages a record. The value becomes visible through get() immediately but
  /// the region version only moves on commit().
  void put(const MapRecord& record) {
    detail::validate_key(record.layer, record.key);
    regions_[record.region].staged[RecordKey{record.layer, record.key}] = record.value;
  }

  /// Stages removal of a record.
  void erase(BuildingBlock layer, RegionId region, const AttributeKey& key) {
    detail::validate_key(layer, key);
    regions_[region].staged[RecordKey{layer, key}] = std::nullopt;
  }

  /// Staged-or-committed view.
  [[nodiscard]] std::optional<Value> get(BuildingBlock layer, RegionId region, const AttributeKey& key) const {
    auto r = regions_.find(region);
    if (r == regions_.end()) return std::nullopt;
    const RecordKey rk{layer, key};
    if (auto s = r->second.staged.find(rk); s != r->second.staged.end()) return s->second;
    if (auto c = r->second.records.find(rk); c != r->second.records.end()) return c->second;
    return std::nullopt;
  }

  /// Committed view only.
  [[nodiscard]] std::optional<Value> get_committed(BuildingBlock layer, RegionId region, const AttributeKey& key) const {
    auto r = regions_.find(region);
    if (r == regions_.end()) return std::nullopt;
    if (auto c = r->second.records.find(RecordKey{layer, key}); c != r->second.records.end()) return c->second;
    return std::nullopt;
  }

  /// Turns the staged deltas of `region` into the next version. Staged writes
  /// equal to the committed value are not deltas.
  ChangePatch commit(RegionId region) {
    auto it = regions_.find(region);
    if (it == regions_.end() || it->second.staged.empty()) {
      throw Error(Errc::nothing_staged, "region " + std::to_string(region.value));
    }
    auto& state = it->second;
    ChangePatch patch{region, state.version, state.version + 1, {}};
    for (const auto& [rk, staged] : state.staged) {
      auto cur = state.records.find(rk);
      if (staged) {
        if (cur == state.records.end() || cur->second != *staged) {
          patch.ops.push_back({PatchOp::Kind::set, rk.layer, rk.key, *staged});
        }
      } else if (cur != state.records.end()) {
        patch.ops.push_back({PatchOp::Kind::erase, rk.layer, rk.key, Value{std::int64_t{0}}});
      }
    }
    if (patch.ops.empty()) throw Error(Errc::nothing_staged, "staged writes of region " + std::to_string(region.value) + " change nothing");
    apply_ops(state.records, patch.ops);
    state.version = patch.to_version;
    state.staged.clear();
    state.history.push_back(patch);
    return patch;
  }

  /// Applies a patch atomically. A failing patch leaves the store untouched.
  void apply_patch(const ChangePatch& patch) {
    const auto region_name = "region " + std::to_string(patch.region.value);
    const std::uint32_t current = version(patch.region);
    if (patch.from_version != current) {
      throw Error(Errc::version_mismatch, region_name + " is at v" + std::to_string(current) + ", patch starts at v" +
                                              std::to_string(patch.from_version));
    }
    if (patch.to_version != patch.from_version + 1) throw Error(Errc::inconsistent_patch, "patch must advance one version");
    if (patch.ops.empty()) throw Error(Errc::inconsistent_patch, "patch has no ops");

    const RegionState* existing = nullptr;
    if (auto it = regions_.find(patch.region); it != regions_.end()) existing = &it->second;
    std::set<RecordKey> seen;
    for (const auto& op : patch.ops) {
      detail::validate_key(op.layer, op.key);
      const RecordKey rk{op.layer, op.key};
      if (!seen.insert(rk).second) throw Error(Errc::inconsistent_patch, "duplicate key in patch");
      if (op.kind == PatchOp::Kind::erase && (existing == nullptr || !existing->records.contains(rk))) {
        throw Error(Errc::inconsistent_patch, "erase of a missing record");
      }
    }

    auto& state = regions_[patch.region];
    apply_ops(state.records, patch.ops);
    state.version = patch.to_version;
    state.history.push_back(patch);
  }

  /// Stored patch chain covering (v_old, v_new].
  [[nodiscard]] std::vector<ChangePatch> diff(RegionId region, std::uint32_t v_old, std::uint32_t v_new) const {
    const std::uint32_t current = version(region);
    if (v_old > v_new || v_new > current) {
      throw Error(Errc::unknown_version, "region " + std::to_string(region.value) + " has no range (v" +
                                             std::to_string(v_old) + ", v" + std::to_string(v_new) + "]");
    }
    if (v_old == v_new) return {};
    const auto& state = regions_.at(region);
    if (v_old < state.history_base) {
      throw Error(Errc::history_pruned, "region " + std::to_string(region.value) + " history starts at v" +
                                            std::to_string(state.history_base));
    }
    const auto first = state.history.begin() + (v_old - state.history_base);
    return {first, first + (v_new - v_old)};
  }

  /// Drops retained patches older than `keep_from`.
  void prune_history(RegionId region, std::uint32_t keep_from) {
    auto it = regions_.find(region);
    if (it == regions_.end()) return;
    auto& state = it->second;
    keep_from = std::min(keep_from, state.version);
    if (keep_from <= state.history_base) return;
    state.history.erase(state.history.begin(), state.history.begin() + (keep_from - state.history_base));
    state.history_base = keep_from;
  }

  [[nodiscard]] RegionSnapshot snapshot(RegionId region) const {
    auto it = regions_.find(region);
    if (it == regions_.end()) return RegionSnapshot{region, 0, {}};
    return RegionSnapshot{region, it->second.version, it->second.records};
  }

  /// Replaces a region with a full snapshot (used when history is pruned).
  /// The snapshot becomes the new history base.
  void load_snapshot(const RegionSnapshot& snap) {
    for (const auto& [rk, _] : snap.records) detail::validate_key(rk.layer, rk.key);
    auto& state = regions_[snap.region];
    if (snap.version < state.version) {
      throw Error(Errc::version_mismatch, "snapshot would move region " + std::to_string(snap.region.value) + " backwards");
    }
    state.records = snap.records;
    state.version = snap.version;
    state.history.clear();
    state.history_base = snap.version;
    state.staged.clear();
  }

  [[nodiscard]] std::uint32_t version(RegionId region) const noexcept {
    auto it = regions_.find(region);
    return it == regions_.end() ? 0 : it->second.version;
  }

  [[nodiscard]] std::uint32_t history_base(RegionId region) const noexcept {
    auto it = regions_.find(region);
    return it == regions_.end() ? 0 : it->second.history_base;
  }

  [[nodiscard]] bool has_staged(RegionId region) const noexcept {
    auto it = regions_.find(region);
    return it != regions_.end() && !it->second.staged.empty();
  }

  [[nodiscard]] std::vector<RegionId> regions() const {
    std::vector<RegionId> out;
    for (const auto& [id, _] : regions_) out.push_back(id);
    return out;
  }

  [[nodiscard]] std::size_t record_count(RegionId region) const noexcept {
    auto it = regions_.find(region);
    return it == regions_.end() ? 0 : it->second.records.size();
  }

  friend bool operator==(const MapStore&, const MapStore&) = default;

 private:
  struct RegionState {
    std::uint32_t version = 0;
    std::map<RecordKey, Value> records;
    std::map<RecordKey, std::optional<Value>> staged;
    std::vector<ChangePatch> history;  // history[i] takes history_base + i to history_base + i + 1
    std::uint32_t history_base = 0;
    friend bool operator==(const RegionState&, const RegionState&) = default;
  };

  static void apply_ops(std::map<RecordKey, Value>& records, const std::vector<PatchOp>& ops) {
    for (const auto& op : ops) {
      RecordKey rk{op.layer, op.key};
      if (op.kind == PatchOp::Kind::set) {
        records[std::move(rk)] = op.value;
      } else {
        records.erase(rk);
      }
    }
  }

  std::map<RegionId, RegionState> regions_;
};

// ---------------------------------------------------------------------------
// Canonical binary format
//
// header:  "MPS1" | u8 kind (0x00 snapshot, 0x01 patch) | u32 region | u32 version | u32 count
// snapshot record: u16 len | u8 layer | u32 segment | u8 name_len | name | value
// patch op:        u16 len | u8 op (0x01 set, 0x02 delete) | u8 layer | u32 segment | u8 name_len | name | [value]
// value: u8 tag (0x01 int, 0x02 bool, 0x03 enum) then i64 | u8 | u16
// A patch header carries from_version; to_version is from_version + 1.

inline constexpr std::size_t kMapHeaderSize = 17;

namespace detail {

inline void write_value(ByteWriter& w, const Value& v) {
  if (auto i = std::get_if<std::int64_t>(&v)) {
    w.u8(0x01);
    w.i64(*i);
  } else if (auto b = std::get_if<bool>(&v)) {
    w.u8(0x02);
    w.u8(*b ? 1 : 0);
  } else {
    w.u8(0x03);
    w.u16(std::get<EnumTag>(v).value);
  }
}

inline Value read_value(ByteReader& r) {
  switch (r.u8()) {
    case 0x01: return Value{r.i64()};
    case 0x02: {
      const auto b = r.u8();
      if (b > 1) throw Error(Errc::parse_error, "bool value out of range");
      return Value{b == 1};
    }
    case 0x03: return Value{EnumTag{r.u16()}};
    default: throw Error(Errc::parse_error, "unknown value tag");
  }
}

inline void write_key(ByteWriter& w, BuildingBlock layer, const AttributeKey& key) {
  w.u8(static_cast<std::uint8_t>(layer));
  w.u32(key.segment.value);
  w.u8(static_cast<std::uint8_t>(key.attribute.size()));
  w.raw(std::string_view(key.attribute));
}

inline std::pair<BuildingBlock, AttributeKey> read_key(ByteReader& r) {
  const auto layer = r.u8();
  if (layer >= kBuildingBlockCount) throw Error(Errc::parse_error, "layer out of range");
  AttributeKey key;
  key.segment.value = r.u32();
  key.attribute = r.str(r.u8());
  return {static_cast<BuildingBlock>(layer), std::move(key)};
}

inline void write_header(ByteWriter& w, std::uint8_t kind, RegionId region, std::uint32_t version, std::uint32_t count) {
  w.raw(std::string_view("MPS1"));
  w.u8(kind);
  w.u32(region.value);
  w.u32(version);
  w.u32(count);
}

template <typename Body>
void write_record(ByteWriter& w, Body&& body) {
  const std::size_t len_pos = w.size();
  w.u16(0);
  body();
  const std::size_t len = w.size() - len_pos - 2;
  if (len > 0xFFFF) throw Error(Errc::field_overflow, "record longer than 65535 bytes");
  w.patch_u16(len_pos, static_cast<std::uint16_t>(len));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_snapshot(const RegionSnapshot& snap) {
  ByteWriter w;
  detail::write_header(w, 0x00, snap.region, snap.version, static_cast<std::uint32_t>(snap.records.size()));
  for (const auto& [rk, value] : snap.records) {
    detail::write_record(w, [&] {
      detail::write_key(w, rk.layer, rk.key);
      detail::write_value(w, value);
    });
  }
  return std::move(w).take();
}

inline std::vector<std::uint8_t> encode_patch(const ChangePatch& patch) {
  ByteWriter w;
  detail::write_header(w, 0x01, patch.region, patch.from_version, static_cast<std::uint32_t>(patch.ops.size()));
  for (const auto& op : patch.ops) {
    detail::write_record(w, [&] {
      w.u8(static_cast<std::uint8_t>(op.kind));
      detail::write_key(w, op.layer, op.key);
      if (op.kind == PatchOp::Kind::set) detail::write_value(w, op.value);
    });
  }
  return std::move(w).take();
}

inline RegionSnapshot decode_snapshot(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MPS1");
  if (r.u8() != 0x00) throw Error(Errc::parse_error, "not a snapshot");
  RegionSnapshot snap;
  snap.region.value = r.u32();
  snap.version = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ByteReader rec = r.sub(r.u16());
    auto [layer, key] = detail::read_key(rec);
    Value v = detail::read_value(rec);
    if (!rec.done()) throw Error(Errc::parse_error, "trailing bytes in record");
    if (!snap.records.emplace(RecordKey{layer, std::move(key)}, v).second) {
      throw Error(Errc::parse_error, "duplicate record");
    }
  }
  if (!r.done()) throw Error(Errc::parse_error, "trailing bytes after snapshot");
  return snap;
}

inline ChangePatch decode_patch(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MPS1");
  if (r.u8() != 0x01) throw Error(Errc::parse_error, "not a patch");
  ChangePatch patch;
  patch.region.value = r.u32();
  patch.from_version = r.u32();
  patch.to_version = patch.from_version + 1;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ByteReader rec = r.sub(r.u16());
    PatchOp op;
    const auto kind = rec.u8();
    if (kind != 0x01 && kind != 0x02) throw Error(Errc::parse_error, "unknown op tag");
    op.kind = static_cast<PatchOp::Kind>(kind);
    auto [layer, key] = detail::read_key(rec);
    op.layer = layer;
    op.key = std::move(key);
    op.value = op.kind == PatchOp::Kind::set ? detail::read_value(rec) : Value{std::int64_t{0}};
    if (!rec.done()) throw Error(Errc::parse_error, "trailing bytes in op");
    patch.ops.push_back(std::move(op));
  }
  if (!r.done()) throw Error(Errc::parse_error, "trailing bytes after patch");
  return patch;
}

inline std::size_t serialized_size(const RegionSnapshot& snap) { return encode_snapshot(snap).size(); }
inline std::size_t serialized_size(const ChangePatch& patch) { return encode_patch(patch).size(); }

}  // namespace mapchain
