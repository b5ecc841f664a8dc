// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "mapchain/sim.hpp"
#include "support/oracles.hpp"

using namespace mapchain;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& name, const std::function<Verdict()>& body) {
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::cout << "criterion " << (n < 10 ? " " : "") << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << name << "  ("
            << v.detail << ")" << std::endl;
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

std::vector<Frame> encode_all(const std::vector<AdasisMessage>& msgs, CounterState& cs) {
  std::vector<Frame> out;
  for (const auto& m : msgs) {
    auto [frames, next] = encode_message(m, cs);
    cs = next;
    out.insert(out.end(), frames.begin(), frames.end());
  }
  return out;
}

Horizon random_horizon(std::uint64_t seed, HorizonMode mode, double length) {
  const auto net = generate_synthetic(seed, 80);
  const RegionIndex regions(net);
  const auto store = build_map_store(net, regions);
  Rng rng(mix_seed(seed, 17));
  std::vector<SegmentId> ids;
  for (const auto& [id, _] : net.segments()) ids.push_back(id);
  const SegmentId start = ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ids.size()) - 1))];
  VehiclePosition pos{start, rng.uniform(0.0, net.segment(start).length), rng.uniform(0.0, 40.0)};
  pos.gps_timestamp = static_cast<std::uint64_t>(rng.uniform_int(0, 1'000'000'000));
  HorizonConfig cfg;
  cfg.mode = mode;
  cfg.max_branch_depth = static_cast<int>(rng.uniform_int(0, 2));
  cfg.horizon_length = length;
  return extract_horizon(net, store, regions, pos, cfg);
}

Verdict codec_roundtrip() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  std::size_t bad = 0, total = 0;
  for (auto type : oracle::kAllTypes) {
    for (int i = 0; i < 10000; ++i) {
      const auto msg = oracle::random_message(rng, type);
      const auto [frames, next] = encode_message(msg, CounterState{static_cast<std::uint8_t>(i & 7)});
      DecoderState ds;
      const auto dec = decode_stream(frames, ds);
      ++total;
      if (dec.messages.size() != 1 || !(dec.messages[0] == msg) || !dec.gaps.empty() || !dec.errors.empty()) ++bad;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 5.0,
          std::to_string(total - bad) + "/" + std::to_string(total) + " exact, " + fmt(secs) + " s, limit 5 s"};
}

Verdict quantization_bound() {
  Rng rng(2002);
  int violations = 0;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double len = rng.uniform(1.0, static_cast<double>(kPathLengthMax));
    const double offset = rng.uniform(0.0, len);
    const double err = std::abs(dequantize_offset(quantize_offset(offset, len), len) - offset);
    const double bound = len / 16382.0;
    worst = std::max(worst, err / bound);
    if (err > bound) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " violations, worst error " + fmt(worst, 4) + " of bound"};
}

Verdict lossless_equivalence() {
  int mismatches = 0;
  std::string first;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto mode = seed % 2 ? HorizonMode::multi_path : HorizonMode::single_path;
    const auto h = random_horizon(seed, mode, 400.0 + 30.0 * static_cast<double>(seed));
    HorizonTransmitter tx;
    Channel ch({0.0, 0.0, false, seed});
    DecoderState dec;
    Reconstructor recon;
    const auto r = deliver_horizon(h, tx, ch, dec, recon, 1 << 20, 0);
    std::string why;
    if (!r.complete || !oracle::horizons_equivalent(h, recon.horizon(), &why)) {
      if (first.empty()) first = ", first at seed " + std::to_string(seed) + ": " + (r.complete ? why : "incomplete");
      ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 100 scenarios" + first};
}

Verdict loss_detection() {
  Rng rng(4004);
  std::vector<AdasisMessage> msgs;
  for (int i = 0; i < 400; ++i) {
    msgs.push_back(oracle::random_message(rng, oracle::kAllTypes[static_cast<std::size_t>(rng.uniform_int(0, 4))]));
  }
  CounterState cs;
  const auto frames = encode_all(msgs, cs);
  int missed = 0;
  for (int k = 1; k <= 7; ++k) {
    for (int trial = 0; trial < 20; ++trial) {
      // Leave at least one frame after the cut so the next counter is seen.
      const auto pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frames.size()) - k - 1));
      auto cut = frames;
      cut.erase(cut.begin() + static_cast<std::ptrdiff_t>(pos), cut.begin() + static_cast<std::ptrdiff_t>(pos) + k);
      DecoderState ds;
      if (decode_stream(cut, ds).gaps.empty()) ++missed;
    }
  }
  // Eight frames are a full counter cycle. Cut on message boundaries of a
  // single-frame stream so nothing else gives the loss away.
  const std::vector<AdasisMessage> singles(200, AttachmentMsg{1, 10, AttachmentType::other, 3});
  CounterState cs1;
  const auto flat = encode_all(singles, cs1);
  int eight_detected = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(flat.size()) - 9));
    auto cut = flat;
    cut.erase(cut.begin() + static_cast<std::ptrdiff_t>(pos), cut.begin() + static_cast<std::ptrdiff_t>(pos) + 8);
    DecoderState ds;
    const auto dec = decode_stream(cut, ds);
    if (!dec.gaps.empty() || dec.messages.size() != singles.size() - 8) ++eight_detected;
  }
  return {missed == 0 && eight_detected == 0,
          "k=1..7: " + std::to_string(140 - missed) + "/140 detected; k=8: " + std::to_string(eight_detected) +
              "/20 detected, undetectable as expected"};
}

Verdict bidirectional_recovery() {
  int worst = 0, failed = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto h = random_horizon(seed + 500, HorizonMode::multi_path, 1500.0);
    HorizonTransmitter tx;
    Channel ch({0.1, 0.0, true, seed});
    DecoderState dec;
    Reconstructor recon;
    const auto r = deliver_horizon(h, tx, ch, dec, recon, 1 << 20, 10);
    if (!r.complete || !oracle::horizons_equivalent(h, recon.horizon())) ++failed;
    worst = std::max(worst, r.rounds);
  }
  return {failed == 0 && worst <= 10,
          std::to_string(10 - failed) + "/10 complete, worst " + std::to_string(worst) + " rounds, limit 10"};
}

Verdict change_only_economy() {
  const auto net = generate_synthetic(66, 100);
  const RegionIndex tiles(net);
  const auto tiled = build_map_store(net, tiles);
  // Put every segment of the network into one region.
  const RegionId region{1};
  MapStore store;
  std::set<SegmentId> segments;
  for (const auto& [r, _] : tiles.regions()) {
    for (const auto& [rk, value] : tiled.snapshot(r).records) {
      store.put(MapRecord{rk.layer, region, rk.key, value});
      segments.insert(rk.key.segment);
    }
  }
  store.commit(region);
  if (segments.size() != 100) return {false, std::to_string(segments.size()) + " segments in the region"};
  const auto snapshot_bytes = encode_snapshot(store.snapshot(region)).size();
  const SegmentId seg = *segments.begin();
  const auto records_before = store.record_count(region);
  store.put(MapRecord{*layer_of(kSpeedLimit), region, AttributeKey{seg, std::string(kSpeedLimit)}, Value{std::int64_t{7}}});
  const auto patch = store.commit(region);
  if (store.record_count(region) != records_before) return {false, "edit added a record instead of changing one"};
  const auto patch_bytes = encode_patch(patch).size();
  const double ratio = static_cast<double>(patch_bytes) / static_cast<double>(snapshot_bytes);
  return {patch.ops.size() == 1 && ratio < 0.10,
          std::to_string(patch_bytes) + " vs " + std::to_string(snapshot_bytes) + " bytes, " + fmt(100 * ratio, 2) +
              "%, limit 10%"};
}

Verdict patch_soundness() {
  const RegionId region{1};
  int bad = 0, patches_total = 0;
  for (std::uint64_t seq = 1; seq <= 50; ++seq) {
    Rng rng(mix_seed(7007, seq));
    MapStore master;
    oracle::RecordSet shadow;
    std::vector<ChangePatch> patches;
    const int commits = static_cast<int>(rng.uniform_int(1, 12));
    for (int c = 0; c < commits; ++c) {
      const int edits = static_cast<int>(rng.uniform_int(1, 20));
      for (int i = 0; i < edits; ++i) {
        const auto layer = static_cast<BuildingBlock>(rng.uniform_int(0, 5));
        const auto key = oracle::random_key(rng, 30);
        if (rng.bernoulli(0.25) && shadow.contains(RecordKey{layer, key})) {
          master.erase(layer, region, key);
          shadow.erase(RecordKey{layer, key});
        } else {
          const auto v = oracle::random_value(rng);
          master.put(MapRecord{layer, region, key, v});
          shadow[RecordKey{layer, key}] = v;
        }
      }
      if (master.snapshot(region).records == shadow) continue;
      patches.push_back(decode_patch(encode_patch(master.commit(region))));
    }
    patches_total += static_cast<int>(patches.size());
    MapStore replica;
    for (const auto& p : patches) replica.apply_patch(p);
    const auto got = replica.snapshot(region).records;
    if (got != shadow || got != oracle::replay({}, patches) || got != master.snapshot(region).records) ++bad;
  }
  return {bad == 0, std::to_string(50 - bad) + "/50 sequences exact over " + std::to_string(patches_total) + " patches"};
}

Verdict mpp_correctness() {
  Rng rng(8008);
  int junctions = 0, wrong = 0, nondeterministic = 0;
  for (std::uint64_t g = 1; g <= 50; ++g) {
    const int size = static_cast<int>(rng.uniform_int(5, 50));
    const auto net = generate_synthetic(mix_seed(8008, g), size);
    if (net.size() > 50) return {false, "graph larger than 50 segments"};
    for (const auto& [start, seg] : net.segments()) {
      const double offset = rng.uniform(0.0, seg.length);
      const double length = rng.uniform(200.0, 4000.0);
      const auto path = compute_mpp(net, {start, offset}, length);
      const auto again = compute_mpp(net, {start, offset}, length);
      if (again.segments != path.segments || again.total_length != path.total_length) ++nondeterministic;
      for (std::size_t i = 0; i + 1 < path.segments.size(); ++i) {
        ++junctions;
        if (oracle::argmax_successor(net, path.segments[i]) != path.segments[i + 1]) ++wrong;
      }
    }
  }
  return {wrong == 0 && nondeterministic == 0 && junctions > 0,
          std::to_string(junctions - wrong) + "/" + std::to_string(junctions) + " junctions match, " +
              std::to_string(nondeterministic) + " nondeterministic"};
}

Verdict healing_convergence() {
  const std::filesystem::path dir{MAPCHAIN_SCENARIO_DIR};
  const auto sc = load_scenario(dir / "golden.ini");
  Simulation sim(sc);
  // Third arrival on the wrong segment, from the ring geometry.
  const auto& net = sim.network();
  const double to_third = net.segment(SegmentId{1}).length + net.segment(SegmentId{2}).length;
  int heal_tick = static_cast<int>(std::ceil(to_third / sc.speed));
  while ((heal_tick + 1) % sc.cycle_interval != 0) ++heal_tick;
  const auto r = sim.run();

  bool master_ok = r.heals.size() == 1 && r.heals[0].tick == heal_tick;
  int converged = -1;
  for (const auto& m : r.metrics) {
    if (m.tick < heal_tick && m.master_mismatch == 0) master_ok = false;
    if (m.tick >= heal_tick && m.master_mismatch != 0) master_ok = false;
    if (m.tick < heal_tick) continue;
    if (m.cache_mismatch != 0) converged = -1;
    else if (converged < 0) converged = m.tick;
  }
  const bool caches_ok = converged >= 0 && converged <= heal_tick + sc.poll_interval;
  const auto csv = csv_string(r.metrics);
  const bool identical = csv == csv_string(run(sc).metrics);
  const bool golden = csv == detail::read_file(std::filesystem::path(MAPCHAIN_GOLDEN_DIR) / "golden.csv");
  return {master_ok && caches_ok && identical && golden,
          "healed at tick " + (r.heals.empty() ? std::string("never") : std::to_string(r.heals[0].tick)) +
              " (expected " + std::to_string(heal_tick) + "), caches converged at tick " + std::to_string(converged) +
              ", csv repeatable " + (identical ? "yes" : "no") + ", matches golden file " + (golden ? "yes" : "no")};
}

Verdict no_false_healing() {
  Scenario sc;
  sc.network_seed = 10;
  sc.network_segments = 60;
  sc.vehicles = 6;
  sc.speed = 17;
  sc.noise.flip_probability = 0.0;
  sc.cycle_interval = 10;
  sc.ticks = 100 * sc.cycle_interval;
  sc.seed = 10;
  const auto r = run(sc);
  std::size_t deviations = 0, patch_bytes = 0, reported = 0;
  for (const auto& m : r.metrics) {
    deviations = std::max(deviations, m.open_deviations);
    patch_bytes += m.patch_bytes;
  }
  for (const auto& t : r.traversals) reported += t.mismatches;
  const bool ok = deviations == 0 && reported == 0 && r.heals.empty() && patch_bytes == 0 && r.traversals.size() > 100;
  return {ok, "100 cycles, " + std::to_string(r.traversals.size()) + " traversals, " + std::to_string(deviations) +
                  " deviations, " + std::to_string(r.heals.size()) + " patches"};
}

Verdict channel_statistics() {
  Channel ch({0.1, 0.0, false, 11011});
  std::vector<Frame> frames(10000);
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i].bytes[0] = static_cast<std::uint8_t>(((i & 7) << 5) | (5 << 2));
  const auto delivered = static_cast<double>(ch.transmit(frames).size());
  const auto band = oracle::binomial(10000, 0.9);
  return {band.within(delivered), fmt(delivered, 0) + " delivered, mean " + fmt(band.mean, 0) + " +/- " +
                                      fmt(3 * band.sigma, 1)};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  std::cout << "mapchain acceptance" << std::endl;
  report(1, "codec roundtrip", codec_roundtrip);
  report(2, "offset quantization bound", quantization_bound);
  report(3, "lossless oracle equivalence", lossless_equivalence);
  report(4, "loss detection", loss_detection);
  report(5, "bidirectional recovery", bidirectional_recovery);
  report(6, "change-only economy", change_only_economy);
  report(7, "patch soundness", patch_soundness);
  report(8, "MPP correctness", mpp_correctness);
  report(9, "healing convergence", healing_convergence);
  report(10, "no false healing", no_false_healing);
  report(11, "channel statistics", channel_statistics);
  report(12, "suite wall time", [&] {
    const auto t1 = Clock::now();
    const std::string cmd = std::string("\"") + MAPCHAIN_UNIT_TESTS_PATH + "\" --gtest_brief=1 > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    const double unit = seconds_since(t1);
    const double total = seconds_since(t0);
    return Verdict{rc == 0 && total < 60.0,
                   "unit suite " + fmt(unit, 2) + " s" + (rc == 0 ? "" : " with failures") + ", total " + fmt(total, 2) +
                       " s, limit 60 s"};
  });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
