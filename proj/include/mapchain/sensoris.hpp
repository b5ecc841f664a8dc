#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mapchain/attributes.hpp"
#include "mapchain/bytes.hpp"
#include "mapchain/error.hpp"
#include "mapchain/horizon.hpp"
#include "mapchain/map_store.hpp"
#include "mapchain/random.hpp"
#include "mapchain/road_model.hpp"

namespace mapchain {

enum class DefinitionClass : std::uint8_t { sd = 0, hd = 1, ad = 2 };

inline std::string_view to_string(DefinitionClass c) noexcept {
  switch (c) {
    case DefinitionClass::sd: return "SD";
    case DefinitionClass::hd: return "HD";
    case DefinitionClass::ad: return "AD";
  }
  return "?";
}

struct Observation {
  BuildingBlock layer = BuildingBlock::routing;
  AttributeKey key;
  Value observed;
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Vehicle sensor report. SD messages carry attribute observations; HD and AD
/// messages carry an opaque payload.
struct DataMessage {
  std::uint32_t vehicle_id = 0;
  std::uint64_t timestamp = 0;  // ms
  DefinitionClass cls = DefinitionClass::sd;
  SegmentId segment;
  double offset = 0.0;  // meters; travels as whole centimeters
  std::vector<Observation> observations;
  std::vector<std::uint8_t> blob;
  friend bool operator==(const DataMessage&, const DataMessage&) = default;
};

inline void validate(const DataMessage& m) {
  if (m.cls == DefinitionClass::sd) {
    if (m.observations.empty()) throw Error(Errc::invalid_argument, "SD message without observations");
    if (!m.blob.empty()) throw Error(Errc::invalid_argument, "SD message with a payload blob");
  } else if (!m.observations.empty()) {
    throw Error(Errc::invalid_argument, "attribute observations must be SD class");
  }
  if (!(m.offset >= 0.0)) throw Error(Errc::invalid_argument, "negative offset");
}

// ---------------------------------------------------------------------------
// Uplink batch format
//
// header: "SRS1" | u32 cloud | u32 tick | u32 count
// record: u16 len | u32 vehicle | u64 timestamp | u8 class | u32 segment | u32 offset_cm |
//         u8 obs_count | obs_count x (u8 layer | u32 segment | u8 name_len | name | value) |
//         u16 blob_len | blob
// value:  same tagging as map-store records

inline constexpr std::size_t kUplinkHeaderSize = 16;

struct UplinkBatch {
  std::uint32_t cloud_id = 0;
  std::uint32_t tick = 0;
  std::vector<DataMessage> messages;
  friend bool operator==(const UplinkBatch&, const UplinkBatch&) = default;
};

inline std::uint32_t offset_to_cm(double offset) {
  const double cm = std::round(offset * 100.0);
  if (cm < 0 || cm > 4294967295.0) throw Error(Errc::field_overflow, "offset does not fit u32 centimeters");
  return static_cast<std::uint32_t>(cm);
}

inline std::vector<std::uint8_t> encode_batch(const UplinkBatch& batch) {
  ByteWriter w;
  w.raw(std::string_view("SRS1"));
  w.u32(batch.cloud_id);
  w.u32(batch.tick);
  w.u32(static_cast<std::uint32_t>(batch.messages.size()));
  for (const auto& m : batch.messages) {
    validate(m);
    if (m.observations.size() > 0xFF) throw Error(Errc::field_overflow, "more than 255 observations");
    if (m.blob.size() > 0xFFFF) throw Error(Errc::field_overflow, "blob longer than 65535 bytes");
    detail::write_record(w, [&] {
      w.u32(m.vehicle_id);
      w.u64(m.timestamp);
      w.u8(static_cast<std::uint8_t>(m.cls));
      w.u32(m.segment.value);
      w.u32(offset_to_cm(m.offset));
      w.u8(static_cast<std::uint8_t>(m.observations.size()));
      for (const auto& o : m.observations) {
        detail::validate_key(o.layer, o.key);
        detail::write_key(w, o.layer, o.key);
        detail::write_value(w, o.observed);
      }
      w.u16(static_cast<std::uint16_t>(m.blob.size()));
      w.raw(std::span<const std::uint8_t>(m.blob));
    });
  }
  return std::move(w).take();
}

inline UplinkBatch decode_batch(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("SRS1");
  UplinkBatch b;
  b.cloud_id = r.u32();
  b.tick = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ByteReader rec = r.sub(r.u16());
    DataMessage m;
    m.vehicle_id = rec.u32();
    m.timestamp = rec.u64();
    const auto cls = rec.u8();
    if (cls > 2) throw Error(Errc::parse_error, "unknown definition class");
    m.cls = static_cast<DefinitionClass>(cls);
    m.segment.value = rec.u32();
    m.offset = rec.u32() / 100.0;
    const auto n = rec.u8();
    for (std::uint8_t j = 0; j < n; ++j) {
      auto [layer, key] = detail::read_key(rec);
      m.observations.push_back({layer, std::move(key), detail::read_value(rec)});
    }
    m.blob = rec.raw(rec.u16());
    if (!rec.done()) throw Error(Errc::parse_error, "trailing bytes in record");
    b.messages.push_back(std::move(m));
  }
  if (!r.done()) throw Error(Errc::parse_error, "trailing bytes after batch");
  return b;
}

// ---------------------------------------------------------------------------
// Vehicle side

struct NoiseConfig {
  double flip_probability = 0.0;
  std::uint32_t confirmation_period = 1;  // confirm every n-th traversal; 0 disables
};

/// Per-vehicle sensing state.
struct VehicleSensor {
  std::uint32_t vehicle_id = 0;
  Rng rng{0};
  std::uint64_t traversals = 0;

  VehicleSensor(std::uint32_t id, std::uint64_t seed) : vehicle_id(id), rng(seed) {}
};

/// One reading of `attribute` on `truth`: correct, or with probability
/// `flip` a uniformly chosen wrong value from the attribute's domain.
inline Value sense(const RoadSegment& truth, std::string_view attribute, double flip, Rng& rng) {
  const Value actual = ground_truth_value(truth, attribute);
  if (!rng.bernoulli(flip)) return actual;
  std::vector<Value> wrong;
  for (auto& v : attribute_domain(attribute)) {
    if (v != actual) wrong.push_back(v);
  }
  return wrong[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(wrong.size()) - 1))];
}

inline Value descriptor_value(const SegmentAttributes& a, std::string_view attribute) {
  if (attribute == kSpeedLimit) return Value{std::int64_t{a.speed_limit}};
  if (attribute == kLaneCount) return Value{std::int64_t{a.lane_count}};
  if (attribute == kRouteType) return Value{EnumTag{static_cast<std::uint16_t>(a.route_type)}};
  if (attribute == kTunnel) return Value{a.is_tunnel};
  if (attribute == kBridge) return Value{a.is_bridge};
  return Value{a.is_emergency_lane};
}

/// Descriptor of `seg` on the most probable path, if the horizon carries it.
inline const SegmentDescriptor* find_descriptor(const Horizon& horizon, SegmentId seg) noexcept {
  for (const auto& d : horizon.segments) {
    if (d.path_index == 1 && d.id == seg) return &d;
  }
  return nullptr;
}

/// Number of observations in `msgs` that disagree with the horizon.
inline std::size_t count_mismatches(const Horizon& horizon, std::span<const DataMessage> msgs) {
  std::size_t n = 0;
  for (const auto& m : msgs) {
    for (const auto& o : m.observations) {
      const auto* d = find_descriptor(horizon, o.key.segment);
      if (!d || descriptor_value(d->attributes, o.key.attribute) != o.observed) ++n;
    }
  }
  return n;
}

/// Senses the segment under the vehicle and compares it with what the
/// vehicle's horizon says. Each mismatch becomes its own DataMessage; readings
/// that agree are sent together as a confirmation on every
/// `confirmation_period`-th traversal.
inline std::vector<DataMessage> observe(VehicleSensor& vehicle, const RoadNetwork& truth, const Horizon& horizon,
                                        const VehiclePosition& pos, const NoiseConfig& noise) {
  validate_position(truth, pos);
  const SegmentDescriptor* desc = find_descriptor(horizon, pos.segment);
  const RoadSegment& seg = truth.segment(pos.segment);
  const std::uint64_t traversal = vehicle.traversals++;
  std::vector<DataMessage> out;
  DataMessage confirm{vehicle.vehicle_id, pos.gps_timestamp, DefinitionClass::sd, pos.segment, pos.offset, {}, {}};
  for (const auto& spec : kSegmentAttributes) {
    const Value reading = sense(seg, spec.name, noise.flip_probability, vehicle.rng);
    Observation obs{spec.layer, AttributeKey{pos.segment, std::string(spec.name)}, reading};
    if (desc && descriptor_value(desc->attributes, spec.name) == reading) {
      confirm.observations.push_back(std::move(obs));
    } else {
      out.push_back({vehicle.vehicle_id, pos.gps_timestamp, DefinitionClass::sd, pos.segment, pos.offset, {std::move(obs)}, {}});
    }
  }
  const bool confirm_now = noise.confirmation_period != 0 && traversal % noise.confirmation_period == 0;
  if (confirm_now && !confirm.observations.empty()) out.push_back(std::move(confirm));
  return out;
}

// ---------------------------------------------------------------------------
// Vehicle cloud: batching relay

class VehicleCloud {
 public:
  explicit VehicleCloud(std::uint32_t id) : id_(id) {}

  /// Buffers messages, dropping observations already seen from the same
  /// vehicle with the same value within the same tick (1000 ms).
  void submit(std::span<const DataMessage> msgs) {
    for (const auto& m : msgs) {
      validate(m);
      const std::uint64_t tick = m.timestamp / 1000;
      if (m.cls != DefinitionClass::sd) {
        if (std::find(buffer_.begin(), buffer_.end(), m) == buffer_.end()) buffer_.push_back(m);
        continue;
      }
      DataMessage kept = m;
      kept.observations.clear();
      for (const auto& o : m.observations) {
        if (seen_.emplace(m.vehicle_id, o.layer, o.key, o.observed, tick).second) kept.observations.push_back(o);
      }
      if (!kept.observations.empty()) buffer_.push_back(std::move(kept));
    }
  }

  /// Hands the buffered messages over as one batch and starts a new interval.
  UplinkBatch flush(std::uint32_t tick) {
    UplinkBatch b{id_, tick, std::move(buffer_)};
    buffer_.clear();
    seen_.clear();
    return b;
  }

  [[nodiscard]] std::uint32_t id() const noexcept { return id_; }
  [[nodiscard]] std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::uint32_t id_;
  std::vector<DataMessage> buffer_;
  std::set<std::tuple<std::uint32_t, BuildingBlock, AttributeKey, Value, std::uint64_t>> seen_;
};

// ---------------------------------------------------------------------------
// Service cloud: deviation detection, healing, jobs

struct DeviationKey {
  BuildingBlock layer = BuildingBlock::routing;
  RegionId region;
  AttributeKey key;
  friend auto operator<=>(const DeviationKey&, const DeviationKey&) = default;
};

struct Deviation {
  DeviationKey key;
  Value map_value;
  Value observed_value;
  std::size_t support = 0;
  std::uint64_t first_seen = 0;
  std::uint64_t last_seen = 0;
  friend bool operator==(const Deviation&, const Deviation&) = default;
};

struct JobConstraints {
  RegionId region;
  std::uint64_t window_start = 0;  // ms, inclusive
  std::uint64_t window_end = 0;    // ms, inclusive
  std::size_t min_vehicles = 1;
};

struct JobRequest {
  std::uint32_t job_id = 0;
  std::string attribute;  // requested observation type
  DefinitionClass cls = DefinitionClass::sd;
  JobConstraints constraints;
};

enum class JobState : std::uint8_t { pending, active, complete, failed };

inline std::string_view to_string(JobState s) noexcept {
  switch (s) {
    case JobState::pending: return "pending";
    case JobState::active: return "active";
    case JobState::complete: return "complete";
    case JobState::failed: return "failed";
  }
  return "?";
}

struct JobStatus {
  std::uint32_t job_id = 0;
  JobState state = JobState::pending;
  double progress = 0.0;
  friend bool operator==(const JobStatus&, const JobStatus&) = default;
};

/// Update for one region of a vehicle cache: a patch chain, or a snapshot when
/// the master no longer holds the patches the cache needs.
struct RegionUpdate {
  RegionId region;
  std::vector<ChangePatch> patches;
  std::optional<RegionSnapshot> snapshot;

  [[nodiscard]] bool empty() const noexcept { return patches.empty() && !snapshot; }
  [[nodiscard]] std::size_t bytes() const {
    if (snapshot) return serialized_size(*snapshot);
    std::size_t n = 0;
    for (const auto& p : patches) n += serialized_size(p);
    return n;
  }
};

inline RegionUpdate poll_updates(const MapStore& master, RegionId region, std::uint32_t have_version) {
  const std::uint32_t current = master.version(region);
  if (have_version > current) {
    throw Error(Errc::unknown_version, "cache is ahead of master in region " + std::to_string(region.value));
  }
  RegionUpdate u{region, {}, std::nullopt};
  if (have_version == current) return u;
  try {
    u.patches = master.diff(region, have_version, current);
  } catch (const Error& e) {
    if (e.code() != Errc::history_pruned) throw;
    u.snapshot = master.snapshot(region);
  }
  return u;
}

inline void apply_update(MapStore& cache, const RegionUpdate& u) {
  if (u.snapshot) {
    cache.load_snapshot(*u.snapshot);
    return;
  }
  for (const auto& p : u.patches) cache.apply_patch(p);
}

struct HealingConfig {
  std::size_t threshold_k = 3;
};

class ServiceCloud {
 public:
  ServiceCloud(MapStore master, RegionIndex regions, HealingConfig config = {})
      : master_(std::move(master)), regions_(std::move(regions)), config_(config) {
    if (config_.threshold_k < 1) throw Error(Errc::invalid_argument, "threshold_k must be >= 1");
  }

  /// Thread-safe: queues an encoded batch for the next fold().
  void submit(std::vector<std::uint8_t> batch) {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(std::move(batch));
  }

  /// Decodes and ingests queued batches in arrival order. Returns the number
  /// of batches folded. Undecodable batches are counted and skipped.
  std::size_t fold() {
    std::vector<std::vector<std::uint8_t>> work;
    {
      std::lock_guard lock(queue_mutex_);
      work.swap(queue_);
    }
    for (const auto& bytes : work) {
      try {
        ingest(decode_batch(bytes));
      } catch (const Error&) {
        ++rejected_batches_;
      }
    }
    return work.size();
  }

  void ingest(const UplinkBatch& batch) {
    for (const auto& m : batch.messages) {
      note_for_jobs(m);
      for (const auto& o : m.observations) {
        if (!regions_.contains(o.key.segment)) {
          ++rejected_observations_;
          continue;
        }
        DeviationKey key{o.layer, regions_.region_of(o.key.segment), o.key};
        auto& report = reports_[key][m.vehicle_id];
        if (report.timestamp <= m.timestamp) report = Report{o.observed, m.timestamp};
      }
    }
  }

  /// Keys where at least `k` distinct vehicles back a value other than the
  /// master's. Each vehicle counts once, with its latest report; the value with
  /// the most vehicles wins, ties going to the smaller value.
  [[nodiscard]] std::vector<Deviation> detect_deviations(std::size_t k) const {
    if (k < 1) throw Error(Errc::invalid_argument, "threshold must be >= 1");
    std::vector<Deviation> out;
    for (const auto& [key, by_vehicle] : reports_) {
      if (auto d = leading(key, by_vehicle); d && d->support >= k) out.push_back(*d);
    }
    return out;
  }

  [[nodiscard]] std::vector<Deviation> detect_deviations() const { return detect_deviations(config_.threshold_k); }

  /// Keys whose leading reported value differs from the master, whatever its support.
  [[nodiscard]] std::size_t open_deviations() const { return detect_deviations(1).size(); }

  /// Writes confirmed values into the master and commits one patch per region.
  /// A deviation whose master value changed since detection is skipped and
  /// left for the next cycle.
  std::vector<ChangePatch> heal(const std::vector<Deviation>& deviations) {
    std::set<RegionId> touched;
    std::vector<DeviationKey> healed;
    for (const auto& d : deviations) {
      const auto current = master_.get_committed(d.key.layer, d.key.region, d.key.key);
      if (!current || *current != d.map_value) {
        ++conflicts_;
        continue;
      }
      master_.put(MapRecord{d.key.layer, d.key.region, d.key.key, d.observed_value});
      touched.insert(d.key.region);
      healed.push_back(d.key);
    }
    std::vector<ChangePatch> patches;
    for (auto region : touched) patches.push_back(master_.commit(region));
    for (const auto& key : healed) reports_.erase(key);
    return patches;
  }

  /// One detection + healing cycle at the configured threshold.
  std::vector<ChangePatch> run_cycle() { return heal(detect_deviations()); }

  [[nodiscard]] RegionUpdate poll(RegionId region, std::uint32_t have_version) const {
    return poll_updates(master_, region, have_version);
  }

  // Jobs

  JobStatus submit_job(const JobRequest& req) {
    if (jobs_.contains(req.job_id)) throw Error(Errc::duplicate_job, "job " + std::to_string(req.job_id));
    if (req.constraints.window_end < req.constraints.window_start) throw Error(Errc::invalid_argument, "job window reversed");
    if (req.constraints.min_vehicles < 1) throw Error(Errc::invalid_argument, "min_vehicles must be >= 1");
    Job job{req, JobState::pending, {}, {}, {JobState::pending}};
    jobs_.emplace(req.job_id, std::move(job));
    return status(req.job_id);
  }

  /// Moves jobs forward at time `now_ms`: pending jobs become active once a
  /// vehicle reported from their region inside the window, active jobs
  /// complete at the required vehicle count, and jobs still open after the
  /// window fail.
  std::vector<JobStatus> advance_jobs(std::uint64_t now_ms) {
    std::vector<JobStatus> out;
    for (auto& [id, job] : jobs_) {
      if (job.state == JobState::pending && !job.in_region.empty()) transition(job, JobState::active);
      if (job.state == JobState::active && job.matching.size() >= job.request.constraints.min_vehicles) {
        transition(job, JobState::complete);
      }
      if ((job.state == JobState::pending || job.state == JobState::active) && now_ms > job.request.constraints.window_end) {
        if (job.state == JobState::pending) transition(job, JobState::active);
        transition(job, JobState::failed);
      }
      out.push_back(status(id));
    }
    return out;
  }

  [[nodiscard]] JobStatus status(std::uint32_t job_id) const {
    const auto& job = jobs_.at(job_id);
    const double need = static_cast<double>(job.request.constraints.min_vehicles);
    const double progress = std::min(1.0, static_cast<double>(job.matching.size()) / need);
    return JobStatus{job_id, job.state, progress};
  }

  [[nodiscard]] const std::vector<JobState>& job_trace(std::uint32_t job_id) const { return jobs_.at(job_id).trace; }

  [[nodiscard]] const MapStore& master() const noexcept { return master_; }
  [[nodiscard]] const RegionIndex& regions() const noexcept { return regions_; }
  [[nodiscard]] std::size_t conflicts() const noexcept { return conflicts_; }
  [[nodiscard]] std::size_t rejected_batches() const noexcept { return rejected_batches_; }
  [[nodiscard]] std::size_t rejected_observations() const noexcept { return rejected_observations_; }
  [[nodiscard]] std::size_t report_keys() const noexcept { return reports_.size(); }

 private:
  struct Report {
    Value value;
    std::uint64_t timestamp = 0;
  };

  struct Job {
    JobRequest request;
    JobState state = JobState::pending;
    std::set<std::uint32_t> in_region;
    std::set<std::uint32_t> matching;
    std::vector<JobState> trace;
  };

  static void transition(Job& job, JobState next) {
    job.state = next;
    job.trace.push_back(next);
  }

  void note_for_jobs(const DataMessage& m) {
    if (!regions_.contains(m.segment)) return;
    const RegionId region = regions_.region_of(m.segment);
    for (auto& [id, job] : jobs_) {
      const auto& c = job.request.constraints;
      if (job.state == JobState::complete || job.state == JobState::failed) continue;
      if (region != c.region || m.timestamp < c.window_start || m.timestamp > c.window_end) continue;
      job.in_region.insert(m.vehicle_id);
      if (m.cls != job.request.cls) continue;
      const bool wanted = job.request.attribute.empty() ||
                          std::any_of(m.observations.begin(), m.observations.end(),
                                      [&](const Observation& o) { return o.key.attribute == job.request.attribute; });
      if (wanted) job.matching.insert(m.vehicle_id);
    }
  }

  [[nodiscard]] std::optional<Deviation> leading(const DeviationKey& key,
                                                 const std::map<std::uint32_t, Report>& by_vehicle) const {
    const auto master_value = master_.get_committed(key.layer, key.region, key.key);
    if (!master_value) return std::nullopt;
    struct Tally {
      std::size_t support = 0;
      std::uint64_t first = UINT64_MAX;
      std::uint64_t last = 0;
    };
    std::map<Value, Tally> tally;
    for (const auto& [vehicle, report] : by_vehicle) {
      auto& t = tally[report.value];
      ++t.support;
      t.first = std::min(t.first, report.timestamp);
      t.last = std::max(t.last, report.timestamp);
    }
    const std::pair<const Value, Tally>* best = nullptr;
    for (const auto& entry : tally) {
      if (!best || entry.second.support > best->second.support) best = &entry;
    }
    if (!best || best->first == *master_value) return std::nullopt;
    return Deviation{key, *master_value, best->first, best->second.support, best->second.first, best->second.last};
  }

  MapStore master_;
  RegionIndex regions_;
  HealingConfig config_;
  std::map<DeviationKey, std::map<std::uint32_t, Report>> reports_;
  std::map<std::uint32_t, Job> jobs_;
  std::mutex queue_mutex_;
  std::vector<std::vector<std::uint8_t>> queue_;
  std::size_t conflicts_ = 0;
  std::size_t rejected_batches_ = 0;
  std::size_t rejected_observations_ = 0;
};

}  // namespace mapchain
