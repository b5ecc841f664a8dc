#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <locale>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "mapchain/adasis_codec.hpp"
#include "mapchain/attributes.hpp"
#include "mapchain/horizon.hpp"
#include "mapchain/map_store.hpp"
#include "mapchain/random.hpp"
#include "mapchain/reconstructor.hpp"
#include "mapchain/road_model.hpp"
#include "mapchain/sensoris.hpp"
#include "mapchain/transport.hpp"

namespace mapchain {

// ---------------------------------------------------------------------------
// Scenario

struct MapError {
  SegmentId segment;
  std::string attribute;
  Value wrong_value;
};

struct StartPosition {
  SegmentId segment;
  double offset = 0.0;
};

struct Scenario {
  // [network]
  std::uint64_t network_seed = 1;
  int network_segments = 40;
  std::optional<RoadNetwork> network;  // set when the scenario names a network file
  double tile_size = 1000.0;
  // [errors]
  std::vector<MapError> errors;
  // [fleet]
  int vehicles = 3;
  double speed = 15.0;  // m/s
  std::vector<StartPosition> starts;
  NoiseConfig noise;
  // [channel]
  ChannelConfig channel;
  int max_rounds = 10;
  // [healing]
  std::size_t threshold_k = 3;
  int cycle_interval = 10;
  int poll_interval = 5;
  int vehicle_clouds = 1;
  // [horizon]
  HorizonConfig horizon;
  // [sim]
  std::uint64_t seed = 1;
  int ticks = 60;
  bool parallel = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::parse_error, "bad boolean '" + std::string(v) + "'");
}

inline Value parse_attribute_value(std::string_view attribute, std::string_view v) {
  if (attribute == kSpeedLimit || attribute == kLaneCount) return Value{parse_number<std::int64_t>(v)};
  if (attribute == kRouteType) {
    if (auto r = parse_route_type(v)) return Value{EnumTag{static_cast<std::uint16_t>(*r)}};
    return Value{EnumTag{parse_number<std::uint16_t>(v)}};
  }
  if (attribute == kTunnel || attribute == kBridge || attribute == kEmergencyLane) return Value{parse_bool(v)};
  throw Error(Errc::invalid_argument, "unknown attribute '" + std::string(attribute) + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Parses the `[section]` / `key = value` scenario format. Relative network
/// file names resolve against `base_dir`. Unknown sections or keys are errors.
inline Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir = ".") {
  Scenario sc;
  std::string section;
  std::size_t line_no = 0;
  std::optional<std::string> network_file;

  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      return Error(Errc::parse_error, "scenario line " + std::to_string(line_no) + ": " + what);
    };
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("unterminated section header");
      section = std::string(line.substr(1, line.size() - 2));
      static const std::set<std::string> known{"network", "errors", "fleet", "channel", "healing", "horizon", "sim"};
      if (!known.contains(section)) throw fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw fail("expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    const auto num = [&]<typename T>(T& out) { out = detail::parse_number<T>(value); };

    try {
      if (section == "network") {
        if (key == "seed") num(sc.network_seed);
        else if (key == "segments") num(sc.network_segments);
        else if (key == "file") network_file = std::string(value);
        else if (key == "tile_size") num(sc.tile_size);
        else throw fail("unknown key '" + key + "'");
      } else if (section == "errors") {
        if (key != "error") throw fail("unknown key '" + key + "'");
        const auto tok = detail::split_ws(value);
        if (tok.size() != 3) throw fail("error needs <segment> <attribute> <value>");
        MapError e;
        e.segment.value = detail::parse_number<std::uint32_t>(tok[0]);
        e.attribute = std::string(tok[1]);
        e.wrong_value = detail::parse_attribute_value(tok[1], tok[2]);
        sc.errors.push_back(std::move(e));
      } else if (section == "fleet") {
        if (key == "vehicles") num(sc.vehicles);
        else if (key == "speed") num(sc.speed);
        else if (key == "noise") num(sc.noise.flip_probability);
        else if (key == "confirmation_period") num(sc.noise.confirmation_period);
        else if (key == "start") {
          const auto tok = detail::split_ws(value);
          if (tok.size() != 2) throw fail("start needs <segment> <offset>");
          sc.starts.push_back({SegmentId{detail::parse_number<std::uint32_t>(tok[0])}, detail::parse_number<double>(tok[1])});
        } else throw fail("unknown key '" + key + "'");
      } else if (section == "channel") {
        if (key == "drop") num(sc.channel.drop_probability);
        else if (key == "corrupt") num(sc.channel.corrupt_probability);
        else if (key == "bidirectional") sc.channel.bidirectional = detail::parse_bool(value);
        else if (key == "frames_per_tick") num(sc.channel.frames_per_tick);
        else if (key == "max_rounds") num(sc.max_rounds);
        else throw fail("unknown key '" + key + "'");
      } else if (section == "healing") {
        if (key == "threshold_k") num(sc.threshold_k);
        else if (key == "cycle_interval") num(sc.cycle_interval);
        else if (key == "poll_interval") num(sc.poll_interval);
        else if (key == "vehicle_clouds") num(sc.vehicle_clouds);
        else throw fail("unknown key '" + key + "'");
      } else if (section == "horizon") {
        if (key == "length") num(sc.horizon.horizon_length);
        else if (key == "mode") {
          if (value == "single_path") sc.horizon.mode = HorizonMode::single_path;
          else if (value == "multi_path") sc.horizon.mode = HorizonMode::multi_path;
          else throw fail("mode must be single_path or multi_path");
        } else if (key == "max_branch_depth") num(sc.horizon.max_branch_depth);
        else if (key == "profile_tolerance") num(sc.horizon.profile_tolerance);
        else throw fail("unknown key '" + key + "'");
      } else if (section == "sim") {
        if (key == "seed") num(sc.seed);
        else if (key == "ticks") num(sc.ticks);
        else if (key == "parallel") sc.parallel = detail::parse_bool(value);
        else throw fail("unknown key '" + key + "'");
      } else {
        throw fail("key outside a section");
      }
    } catch (const Error& e) {
      if (e.code() == Errc::parse_error && e.detail().starts_with("scenario line")) throw;
      throw fail(e.code() == Errc::parse_error ? e.detail() : std::string(e.what()));
    }
  }
  if (network_file) {
    std::filesystem::path p(*network_file);
    if (p.is_relative()) p = base_dir / p;
    sc.network = network_from_text(detail::read_file(p));
  }
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(detail::read_file(path), path.parent_path());
}

inline RoadNetwork scenario_network(const Scenario& sc) {
  return sc.network ? *sc.network : generate_synthetic(sc.network_seed, sc.network_segments);
}

/// Checks everything that can be checked before tick 0.
inline void validate(const Scenario& sc, const RoadNetwork& net) {
  auto bad = [](const std::string& what) { return Error(Errc::invalid_argument, what); };
  if (sc.ticks <= 0) throw bad("ticks must be > 0");
  if (sc.vehicles < 1) throw bad("fleet needs at least one vehicle");
  if (!(sc.speed >= 0.0)) throw bad("speed must be >= 0");
  if (!(sc.noise.flip_probability >= 0.0 && sc.noise.flip_probability <= 1.0)) throw bad("noise outside [0,1]");
  validate(sc.channel);
  if (sc.max_rounds < 0) throw bad("max_rounds must be >= 0");
  if (sc.threshold_k < 1) throw bad("threshold_k must be >= 1");
  if (sc.cycle_interval < 1 || sc.poll_interval < 1) throw bad("intervals must be >= 1");
  if (sc.vehicle_clouds < 1) throw bad("at least one vehicle cloud");
  if (!(sc.horizon.horizon_length > 0.0)) throw bad("horizon length must be > 0");
  if (sc.horizon.max_branch_depth < 0) throw bad("max_branch_depth must be >= 0");
  if (!(sc.horizon.profile_tolerance > 0.0)) throw bad("profile_tolerance must be > 0");
  if (!(sc.tile_size > 0.0)) throw bad("tile_size must be > 0");
  if (sc.starts.size() > static_cast<std::size_t>(sc.vehicles)) throw bad("more start positions than vehicles");
  for (const auto& s : sc.starts) {
    if (!net.contains(s.segment)) throw bad("start on unknown segment " + std::to_string(s.segment.value));
    if (!(s.offset >= 0.0 && s.offset <= net.segment(s.segment).length)) throw bad("start offset outside segment");
  }
  for (const auto& e : sc.errors) {
    if (!net.contains(e.segment)) throw bad("error on unknown segment " + std::to_string(e.segment.value));
    if (!layer_of(e.attribute)) throw bad("error on unknown attribute '" + e.attribute + "'");
    const auto domain = attribute_domain(e.attribute);
    if (domain.front().index() != e.wrong_value.index()) throw bad("error value has the wrong type for " + e.attribute);
  }
}

// ---------------------------------------------------------------------------
// Horizon delivery over the channel

struct DeliveryResult {
  bool complete = false;
  int rounds = 0;  // retransmission rounds used
  std::uint64_t frames_sent = 0;
};

/// Sends one horizon and keeps answering retransmission requests until the
/// reconstructor is complete, `max_rounds` requests were served, the frame
/// budget is spent, or the channel has no back path.
inline DeliveryResult deliver_horizon(const Horizon& h, HorizonTransmitter& tx, Channel& channel, DecoderState& decoder,
                                      Reconstructor& recon, std::size_t frame_budget, int max_rounds) {
  DeliveryResult out;
  recon.reset();
  std::vector<Frame> frames = tx.emit(h);
  while (true) {
    const std::size_t n = std::min(frames.size(), frame_budget);
    frame_budget -= n;
    out.frames_sent += n;
    const auto delivered = channel.transmit(std::span<const Frame>(frames.data(), n));
    const auto intact = intact_frames(delivered);
    const auto decoded = decode_stream(intact, decoder);
    recon.ingest(decoded.messages, decoded.gaps);
    if (recon.complete()) {
      out.complete = true;
      break;
    }
    if (out.rounds >= max_rounds || frame_budget == 0) break;
    const auto req = recon.retransmit_request(decoder);
    if (!req || !channel.request_retransmission(*req)) break;
    frames.clear();
    for (const auto& r : channel.take_requests()) {
      auto more = tx.respond(r);
      frames.insert(frames.end(), more.begin(), more.end());
    }
    ++out.rounds;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

struct TickMetrics {
  int tick = 0;
  std::vector<bool> horizon_complete;
  std::size_t open_deviations = 0;
  std::size_t master_mismatch = 0;
  std::size_t cache_mismatch = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_dropped = 0;
  std::uint64_t patch_bytes = 0;
  std::uint64_t uplink_bytes = 0;
  friend bool operator==(const TickMetrics&, const TickMetrics&) = default;
};

struct TraversalEvent {
  int tick = 0;
  std::uint32_t vehicle = 0;
  SegmentId segment;
  std::size_t mismatches = 0;
};

struct HealEvent {
  int tick = 0;
  RegionId region;
  std::uint32_t version = 0;
  std::size_t ops = 0;
};

struct SimReport {
  int ticks = 0;
  std::size_t final_master_mismatch = 0;
  std::size_t final_cache_mismatch = 0;
  std::size_t healing_patches = 0;
  std::size_t complete_horizons = 0;
  std::size_t horizons = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_dropped = 0;
  std::uint64_t patch_bytes = 0;
  std::uint64_t uplink_bytes = 0;
};

struct SimResult {
  std::vector<TickMetrics> metrics;
  SimReport report;
  std::vector<TraversalEvent> traversals;
  std::vector<HealEvent> heals;
};

using SimLogger = std::function<void(int level, const std::string&)>;  // 0 error, 1 info, 2 debug

class Simulation {
 public:
  explicit Simulation(Scenario scenario, SimLogger log = {})
      : sc_(std::move(scenario)),
        net_(scenario_network(sc_)),
        regions_(net_, sc_.tile_size),
        cloud_(initial_master(), regions_, HealingConfig{sc_.threshold_k}),
        log_(std::move(log)) {
    validate(sc_, net_);
    Rng rng(mix_seed(sc_.seed, 0));
    std::vector<SegmentId> ids;
    for (const auto& [id, _] : net_.segments()) ids.push_back(id);
    for (int i = 0; i < sc_.vehicles; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      StartPosition start;
      if (idx < sc_.starts.size()) {
        start = sc_.starts[idx];
      } else {
        start.segment = ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ids.size()) - 1))];
      }
      ChannelConfig cc = sc_.channel;
      cc.seed = mix_seed(sc_.seed, 1000 + idx);
      vehicles_.push_back(Vehicle{static_cast<std::uint32_t>(i + 1), start.segment, start.offset, cloud_.master(),
                                  HorizonTransmitter{}, Channel(cc), DecoderState{}, Reconstructor{},
                                  VehicleSensor(static_cast<std::uint32_t>(i + 1), mix_seed(sc_.seed, 2000 + idx)),
                                  std::nullopt, Horizon{}});
    }
    for (int c = 0; c < sc_.vehicle_clouds; ++c) clouds_.emplace_back(static_cast<std::uint32_t>(c + 1));
  }

  [[nodiscard]] bool done() const noexcept { return tick_ >= sc_.ticks; }

  TickMetrics step() {
    const int t = tick_;
    TickMetrics m;
    m.tick = t;

    if (t > 0) {
      for (auto& v : vehicles_) advance(v, sc_.speed);
    }

    extract_all();

    for (auto& v : vehicles_) {
      const auto before = v.channel.stats();
      const auto r = deliver_horizon(v.horizon, v.tx, v.channel, v.decoder, v.recon, sc_.channel.frames_per_tick,
                                     sc_.max_rounds);
      const auto after = v.channel.stats();
      m.horizon_complete.push_back(r.complete);
      m.frames_sent += after.sent - before.sent;
      m.frames_dropped += (after.dropped - before.dropped) + (after.corrupted - before.corrupted);
      if (!r.complete) log(2, "tick " + std::to_string(t) + " vehicle " + std::to_string(v.id) + " horizon incomplete");
    }

    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      auto& v = vehicles_[i];
      if (v.last_observed == v.segment) continue;
      v.last_observed = v.segment;
      const VehiclePosition pos = position_of(v, t);
      const auto msgs = observe(v.sensor, net_, v.horizon, pos, sc_.noise);
      const std::size_t mismatches = count_mismatches(v.horizon, msgs);
      traversals_.push_back({t, v.id, v.segment, mismatches});
      if (mismatches > 0) {
        log(1, "tick " + std::to_string(t) + " vehicle " + std::to_string(v.id) + " reports " +
                   std::to_string(mismatches) + " mismatch(es) on segment " + std::to_string(v.segment.value));
      }
      clouds_[i % clouds_.size()].submit(msgs);
    }

    if ((t + 1) % sc_.cycle_interval == 0) {
      for (auto& c : clouds_) {
        auto bytes = encode_batch(c.flush(static_cast<std::uint32_t>(t)));
        m.uplink_bytes += bytes.size();
        cloud_.submit(std::move(bytes));
      }
      cloud_.fold();
      for (const auto& p : cloud_.run_cycle()) {
        heals_.push_back({t, p.region, p.to_version, p.ops.size()});
        log(1, "tick " + std::to_string(t) + " healed region " + std::to_string(p.region.value) + " -> v" +
                   std::to_string(p.to_version) + " (" + std::to_string(p.ops.size()) + " op)");
      }
    }

    if ((t + 1) % sc_.poll_interval == 0) {
      for (auto& v : vehicles_) {
        for (const auto& [region, _] : regions_.regions()) {
          const auto u = cloud_.poll(region, v.cache.version(region));
          if (u.empty()) continue;
          m.patch_bytes += u.bytes();
          apply_update(v.cache, u);
        }
      }
    }

    m.open_deviations = cloud_.open_deviations();
    m.master_mismatch = master_mismatch();
    for (const auto& v : vehicles_) m.cache_mismatch = std::max(m.cache_mismatch, cache_mismatch(v));
    ++tick_;
    return m;
  }

  SimResult run() {
    SimResult r;
    while (!done()) r.metrics.push_back(step());
    auto& rep = r.report;
    rep.ticks = static_cast<int>(r.metrics.size());
    for (const auto& m : r.metrics) {
      rep.frames_sent += m.frames_sent;
      rep.frames_dropped += m.frames_dropped;
      rep.patch_bytes += m.patch_bytes;
      rep.uplink_bytes += m.uplink_bytes;
      rep.horizons += m.horizon_complete.size();
      rep.complete_horizons += static_cast<std::size_t>(std::count(m.horizon_complete.begin(), m.horizon_complete.end(), true));
    }
    if (!r.metrics.empty()) {
      rep.final_master_mismatch = r.metrics.back().master_mismatch;
      rep.final_cache_mismatch = r.metrics.back().cache_mismatch;
    }
    rep.healing_patches = heals_.size();
    r.traversals = traversals_;
    r.heals = heals_;
    return r;
  }

  [[nodiscard]] const RoadNetwork& network() const noexcept { return net_; }
  [[nodiscard]] const RegionIndex& regions() const noexcept { return regions_; }
  [[nodiscard]] const ServiceCloud& cloud() const noexcept { return cloud_; }
  [[nodiscard]] const Scenario& scenario() const noexcept { return sc_; }
  [[nodiscard]] const MapStore& cache(std::size_t vehicle) const { return vehicles_.at(vehicle).cache; }
  [[nodiscard]] const Horizon& horizon(std::size_t vehicle) const { return vehicles_.at(vehicle).horizon; }
  [[nodiscard]] VehiclePosition position(std::size_t vehicle) const { return position_of(vehicles_.at(vehicle), tick_); }

  /// Keys where the master differs from ground truth.
  [[nodiscard]] std::size_t master_mismatch() const {
    std::size_t n = 0;
    for (const auto& [id, seg] : net_.segments()) {
      const RegionId region = regions_.region_of(id);
      for (const auto& spec : kSegmentAttributes) {
        const auto v = cloud_.master().get_committed(spec.layer, region, AttributeKey{id, std::string(spec.name)});
        if (!v || *v != ground_truth_value(seg, spec.name)) ++n;
      }
    }
    return n;
  }

 private:
  struct Vehicle {
    std::uint32_t id;
    SegmentId segment;
    double offset;
    MapStore cache;
    HorizonTransmitter tx;
    Channel channel;
    DecoderState decoder;
    Reconstructor recon;
    VehicleSensor sensor;
    std::optional<SegmentId> last_observed;
    Horizon horizon;
  };

  MapStore initial_master() const {
    MapStore store = build_map_store(net_, regions_);
    std::set<RegionId> touched;
    for (const auto& e : sc_.errors) {
      if (!net_.contains(e.segment) || !layer_of(e.attribute)) continue;  // rejected by validate()
      const RegionId region = regions_.region_of(e.segment);
      store.put(MapRecord{*layer_of(e.attribute), region, AttributeKey{e.segment, e.attribute}, e.wrong_value});
      touched.insert(region);
    }
    for (auto region : touched) {
      if (store.has_staged(region)) {
        try {
          store.commit(region);
        } catch (const Error& err) {
          if (err.code() != Errc::nothing_staged) throw;  // "error" equal to the truth
        }
      }
    }
    return store;
  }

  void advance(Vehicle& v, double distance) const {
    while (distance > 0.0) {
      const double len = net_.segment(v.segment).length;
      if (v.offset + distance <= len) {
        v.offset += distance;
        return;
      }
      const auto next = most_probable_successor(net_, v.segment);
      if (!next) {
        v.offset = len;  // parked at a dead end
        return;
      }
      distance -= len - v.offset;
      v.segment = *next;
      v.offset = 0.0;
    }
  }

  [[nodiscard]] VehiclePosition position_of(const Vehicle& v, int t) const {
    VehiclePosition p;
    p.segment = v.segment;
    p.offset = v.offset;
    p.speed = sc_.speed;
    p.gps_timestamp = static_cast<std::uint64_t>(t) * 1000;
    p.current_lane = 1;
    return p;
  }

  void extract_all() {
    const int t = tick_;
    auto work = [&](std::size_t i) {
      auto& v = vehicles_[i];
      v.horizon = extract_horizon(net_, v.cache, regions_, position_of(v, t), sc_.horizon);
    };
    if (!sc_.parallel || vehicles_.size() < 2) {
      for (std::size_t i = 0; i < vehicles_.size(); ++i) work(i);
      return;
    }
    const std::size_t workers = std::min<std::size_t>(vehicles_.size(), std::max(2u, std::thread::hardware_concurrency()));
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < vehicles_.size(); i += workers) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  [[nodiscard]] std::size_t cache_mismatch(const Vehicle& v) const {
    std::size_t n = 0;
    for (const auto& [region, _] : regions_.regions()) {
      const auto mine = v.cache.snapshot(region).records;
      const auto master = cloud_.master().snapshot(region).records;
      for (const auto& [key, value] : master) {
        auto it = mine.find(key);
        if (it == mine.end() || it->second != value) ++n;
      }
      for (const auto& [key, value] : mine) {
        if (!master.contains(key)) ++n;
      }
    }
    return n;
  }

  void log(int level, const std::string& msg) const {
    if (log_) log_(level, msg);
  }

  Scenario sc_;
  RoadNetwork net_;
  RegionIndex regions_;
  ServiceCloud cloud_;
  SimLogger log_;
  std::vector<Vehicle> vehicles_;
  std::vector<VehicleCloud> clouds_;
  std::vector<TraversalEvent> traversals_;
  std::vector<HealEvent> heals_;
  int tick_ = 0;
};

inline SimResult run(const Scenario& scenario, SimLogger log = {}) {
  Simulation sim(scenario, std::move(log));
  return sim.run();
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kCsvHeader =
    "tick,horizon_complete,open_deviations,master_mismatch,cache_mismatch,frames_sent,frames_dropped,patch_bytes,"
    "uplink_bytes";

/// horizon_complete is one 0/1 digit per vehicle, in vehicle order.
inline void emit_csv(const std::vector<TickMetrics>& metrics, std::ostream& out) {
  if (metrics.empty()) throw Error(Errc::invalid_argument, "no metrics to write");
  out << kCsvHeader << '\n';
  for (const auto& m : metrics) {
    std::string flags;
    for (bool b : m.horizon_complete) flags.push_back(b ? '1' : '0');
    out << m.tick << ',' << flags << ',' << m.open_deviations << ',' << m.master_mismatch << ',' << m.cache_mismatch
        << ',' << m.frames_sent << ',' << m.frames_dropped << ',' << m.patch_bytes << ',' << m.uplink_bytes << '\n';
  }
}

inline std::string csv_string(const std::vector<TickMetrics>& metrics) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  emit_csv(metrics, out);
  return out.str();
}

inline void emit_csv(const std::vector<TickMetrics>& metrics, const std::filesystem::path& path) {
  const std::string text = csv_string(metrics);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

}  // namespace mapchain
