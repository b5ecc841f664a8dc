#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "mapchain/error.hpp"
#include "mapchain/horizon.hpp"

namespace mapchain {

// ---------------------------------------------------------------------------
// Offset quantization

inline constexpr std::uint16_t kOffsetFullScale = 8191;  // 13 bits

inline std::uint16_t quantize_offset(double offset, double path_length) {
  if (!(path_length > 0.0)) throw Error(Errc::out_of_range, "path length must be > 0");
  if (!(offset >= 0.0 && offset <= path_length)) {
    throw Error(Errc::out_of_range, "offset " + std::to_string(offset) + " outside [0, " + std::to_string(path_length) + "]");
  }
  const double q = std::round(offset / path_length * kOffsetFullScale);
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, double{kOffsetFullScale}));
}

inline double dequantize_offset(std::uint16_t q, double path_length) {
  if (q > kOffsetFullScale) throw Error(Errc::out_of_range, "quantized offset above 8191");
  return static_cast<double>(q) / kOffsetFullScale * path_length;
}

// ---------------------------------------------------------------------------
// Messages
//
// Field widths (bits), packed MSB-first in declaration order:
//   Position   path 6, offset 13, probability 6, confidence 6, gps_ms 48, speed 10, lane 4, count 16   (2 frames)
//   Segment    path 6, offset 13, end 13, speed_limit 8, lanes 4, route 2, tunnel 1, bridge 1,
//              emergency 1, path_length_dm 20                                                       (2 frames)
//   Stub       path 6, offset 13, branch 6, angle 7 (signed, 3 deg), lanes 4, probability 6       (1 frame)
//   Profile    path 6, offset 13, value0 16 (signed), distance1 13, value1 16 (signed), interp 1  (2 frames)
//   Attachment path 6, offset 13, type 1, value 16                                               (1 frame)

struct PositionMsg {
  std::uint8_t path_index = 0;
  std::uint16_t offset_q = 0;
  std::uint8_t probability_q = 0;
  std::uint8_t confidence_q = 0;
  std::uint64_t gps_timestamp = 0;
  std::uint16_t speed_q = 0;  // 0.1 m/s
  std::uint8_t current_lane = 0;
  std::uint16_t message_count = 0;  // messages in this horizon transmission, this one included
  friend bool operator==(const PositionMsg&, const PositionMsg&) = default;
};

struct SegmentMsg {
  std::uint8_t path_index = 0;
  std::uint16_t offset_q = 0;
  std::uint16_t end_q = 0;
  std::uint8_t speed_limit = 0;
  std::uint8_t lane_count = 0;
  RouteType route_type = RouteType::motorway;
  bool is_tunnel = false;
  bool is_bridge = false;
  bool is_emergency_lane = false;
  std::uint32_t path_length_dm = 0;
  friend bool operator==(const SegmentMsg&, const SegmentMsg&) = default;
};

struct StubMsg {
  std::uint8_t path_index = 0;
  std::uint16_t offset_q = 0;
  std::uint8_t branch_path_index = 0;  // 0 = branch not transmitted
  std::int8_t turn_angle_q = 0;        // 3 degree steps
  std::uint8_t lane_count = 0;
  std::uint8_t branch_probability_q = 0;
  friend bool operator==(const StubMsg&, const StubMsg&) = default;
};

struct ProfileMsg {
  std::uint8_t path_index = 0;
  std::uint16_t offset_q = 0;
  std::int16_t value0 = 0;  // curvature * 1e5
  std::uint16_t distance1_q = 0;
  std::int16_t value1 = 0;
  Interpolation interpolation = Interpolation::discrete;
  friend bool operator==(const ProfileMsg&, const ProfileMsg&) = default;
};

struct AttachmentMsg {
  std::uint8_t path_index = 0;
  std::uint16_t offset_q = 0;
  AttachmentType attribute_type = AttachmentType::speed_limit_sign;
  std::uint16_t attribute_value = 0;
  friend bool operator==(const AttachmentMsg&, const AttachmentMsg&) = default;
};

using AdasisMessage = std::variant<PositionMsg, SegmentMsg, StubMsg, ProfileMsg, AttachmentMsg>;

enum class MessageType : std::uint8_t { position = 1, segment = 2, stub = 3, profile = 4, attachment = 5 };

inline MessageType message_type(const AdasisMessage& m) noexcept {
  return static_cast<MessageType>(m.index() + 1);
}

inline constexpr int frames_for(MessageType t) noexcept {
  return (t == MessageType::stub || t == MessageType::attachment) ? 1 : 2;
}

inline constexpr double kCurvatureScale = 1e5;
inline constexpr double kAngleStep = 3.0;
inline constexpr double kFractionScale = 63.0;
inline constexpr double kSpeedScale = 10.0;
inline constexpr double kPathLengthScale = 10.0;  // decimeters
inline constexpr std::uint32_t kPathLengthMax = (1u << 20) - 1;

// ---------------------------------------------------------------------------
// Frames

/// 8-byte bus frame. Byte 0: counter (3) | type (3) | continuation (1) | reserved (1);
/// bytes 1..7: 56 payload bits.
struct Frame {
  std::array<std::uint8_t, 8> bytes{};

  [[nodiscard]] std::uint8_t counter() const noexcept { return bytes[0] >> 5; }
  [[nodiscard]] std::uint8_t type() const noexcept { return (bytes[0] >> 2) & 0x7; }
  [[nodiscard]] bool continuation() const noexcept { return (bytes[0] >> 1) & 0x1; }
  [[nodiscard]] bool reserved() const noexcept { return bytes[0] & 0x1; }

  friend bool operator==(const Frame&, const Frame&) = default;
};

static_assert(sizeof(Frame) == 8);

namespace detail {

inline constexpr std::size_t kPayloadBytes = 7;
inline constexpr std::size_t kMaxPayloadBits = 2 * kPayloadBytes * 8;

/// MSB-first bit packer over two frame payloads.
class BitWriter {
 public:
  void put(std::uint64_t value, int bits) {
    for (int i = bits - 1; i >= 0; --i) {
      if ((value >> i) & 1U) buf_[pos_ / 8] |= static_cast<std::uint8_t>(0x80U >> (pos_ % 8));
      ++pos_;
    }
  }
  [[nodiscard]] const std::array<std::uint8_t, 2 * kPayloadBytes>& bytes() const noexcept { return buf_; }
  [[nodiscard]] std::size_t bits() const noexcept { return pos_; }

 private:
  std::array<std::uint8_t, 2 * kPayloadBytes> buf_{};
  std::size_t pos_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const std::array<std::uint8_t, 2 * kPayloadBytes>& buf) : buf_(buf) {}
  std::uint64_t get(int bits) {
    std::uint64_t v = 0;
    for (int i = 0; i < bits; ++i) {
      v = (v << 1) | ((buf_[pos_ / 8] >> (7 - pos_ % 8)) & 1U);
      ++pos_;
    }
    return v;
  }
  std::int64_t get_signed(int bits) {
    const std::uint64_t raw = get(bits);
    const std::uint64_t sign = 1ULL << (bits - 1);
    return static_cast<std::int64_t>(raw ^ sign) - static_cast<std::int64_t>(sign);
  }

 private:
  const std::array<std::uint8_t, 2 * kPayloadBytes>& buf_;
  std::size_t pos_ = 0;
};

inline void check_unsigned(std::uint64_t v, int bits, const char* field) {
  if (v >= (1ULL << bits)) throw Error(Errc::field_overflow, std::string(field) + " exceeds " + std::to_string(bits) + " bits");
}

inline void check_signed(std::int64_t v, std::int64_t lo, std::int64_t hi, const char* field) {
  if (v < lo || v > hi) throw Error(Errc::field_overflow, std::string(field) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

inline std::uint64_t twos(std::int64_t v, int bits) { return static_cast<std::uint64_t>(v) & ((1ULL << bits) - 1); }

struct PackVisitor {
  BitWriter& w;

  void operator()(const PositionMsg& m) const {
    check_unsigned(m.path_index, 6, "path_index");
    check_unsigned(m.offset_q, 13, "offset_q");
    check_unsigned(m.probability_q, 6, "probability_q");
    check_unsigned(m.confidence_q, 6, "confidence_q");
    check_unsigned(m.gps_timestamp, 48, "gps_timestamp");
    check_unsigned(m.speed_q, 10, "speed_q");
    check_unsigned(m.current_lane, 4, "current_lane");
    w.put(m.path_index, 6);
    w.put(m.offset_q, 13);
    w.put(m.probability_q, 6);
    w.put(m.confidence_q, 6);
    w.put(m.gps_timestamp, 48);
    w.put(m.speed_q, 10);
    w.put(m.current_lane, 4);
    w.put(m.message_count, 16);
  }
  void operator()(const SegmentMsg& m) const {
    check_unsigned(m.path_index, 6, "path_index");
    check_unsigned(m.offset_q, 13, "offset_q");
    check_unsigned(m.end_q, 13, "end_q");
    check_unsigned(m.lane_count, 4, "lane_count");
    check_unsigned(static_cast<std::uint8_t>(m.route_type), 2, "route_type");
    check_unsigned(m.path_length_dm, 20, "path_length_dm");
    w.put(m.path_index, 6);
    w.put(m.offset_q, 13);
    w.put(m.end_q, 13);
    w.put(m.speed_limit, 8);
    w.put(m.lane_count, 4);
    w.put(static_cast<std::uint8_t>(m.route_type), 2);
    w.put(m.is_tunnel, 1);
    w.put(m.is_bridge, 1);
    w.put(m.is_emergency_lane, 1);
    w.put(m.path_length_dm, 20);
  }
  void operator()(const StubMsg& m) const {
    check_unsigned(m.path_index, 6, "path_index");
    check_unsigned(m.offset_q, 13, "offset_q");
    check_unsigned(m.branch_path_index, 6, "branch_path_index");
    check_signed(m.turn_angle_q, -59, 60, "turn_angle_q");
    check_unsigned(m.lane_count, 4, "lane_count");
    check_unsigned(m.branch_probability_q, 6, "branch_probability_q");
    w.put(m.path_index, 6);
    w.put(m.offset_q, 13);
    w.put(m.branch_path_index, 6);
    w.put(twos(m.turn_angle_q, 7), 7);
    w.put(m.lane_count, 4);
    w.put(m.branch_probability_q, 6);
  }
  void operator()(const ProfileMsg& m) const {
    check_unsigned(m.path_index, 6, "path_index");
    check_unsigned(m.offset_q, 13, "offset_q");
    check_unsigned(m.distance1_q, 13, "distance1_q");
    check_unsigned(static_cast<std::uint8_t>(m.interpolation), 1, "interpolation");
    w.put(m.path_index, 6);
    w.put(m.offset_q, 13);
    w.put(twos(m.value0, 16), 16);
    w.put(m.distance1_q, 13);
    w.put(twos(m.value1, 16), 16);
    w.put(static_cast<std::uint8_t>(m.interpolation), 1);
  }
  void operator()(const AttachmentMsg& m) const {
    check_unsigned(m.path_index, 6, "path_index");
    check_unsigned(m.offset_q, 13, "offset_q");
    check_unsigned(static_cast<std::uint8_t>(m.attribute_type), 1, "attribute_type");
    w.put(m.path_index, 6);
    w.put(m.offset_q, 13);
    w.put(static_cast<std::uint8_t>(m.attribute_type), 1);
    w.put(m.attribute_value, 16);
  }
};

inline std::optional<AdasisMessage> unpack(MessageType type, const std::array<std::uint8_t, 2 * kPayloadBytes>& payload) {
  BitReader r(payload);
  switch (type) {
    case MessageType::position: {
      PositionMsg m;
      m.path_index = static_cast<std::uint8_t>(r.get(6));
      m.offset_q = static_cast<std::uint16_t>(r.get(13));
      m.probability_q = static_cast<std::uint8_t>(r.get(6));
      m.confidence_q = static_cast<std::uint8_t>(r.get(6));
      m.gps_timestamp = r.get(48);
      m.speed_q = static_cast<std::uint16_t>(r.get(10));
      m.current_lane = static_cast<std::uint8_t>(r.get(4));
      m.message_count = static_cast<std::uint16_t>(r.get(16));
      return m;
    }
    case MessageType::segment: {
      SegmentMsg m;
      m.path_index = static_cast<std::uint8_t>(r.get(6));
      m.offset_q = static_cast<std::uint16_t>(r.get(13));
      m.end_q = static_cast<std::uint16_t>(r.get(13));
      m.speed_limit = static_cast<std::uint8_t>(r.get(8));
      m.lane_count = static_cast<std::uint8_t>(r.get(4));
      m.route_type = static_cast<RouteType>(r.get(2));
      m.is_tunnel = r.get(1) != 0;
      m.is_bridge = r.get(1) != 0;
      m.is_emergency_lane = r.get(1) != 0;
      m.path_length_dm = static_cast<std::uint32_t>(r.get(20));
      return m;
    }
    case MessageType::stub: {
      StubMsg m;
      m.path_index = static_cast<std::uint8_t>(r.get(6));
      m.offset_q = static_cast<std::uint16_t>(r.get(13));
      m.branch_path_index = static_cast<std::uint8_t>(r.get(6));
      const auto angle = r.get_signed(7);
      if (angle < -59 || angle > 60) return std::nullopt;
      m.turn_angle_q = static_cast<std::int8_t>(angle);
      m.lane_count = static_cast<std::uint8_t>(r.get(4));
      m.branch_probability_q = static_cast<std::uint8_t>(r.get(6));
      return m;
    }
    case MessageType::profile: {
      ProfileMsg m;
      m.path_index = static_cast<std::uint8_t>(r.get(6));
      m.offset_q = static_cast<std::uint16_t>(r.get(13));
      m.value0 = static_cast<std::int16_t>(r.get_signed(16));
      m.distance1_q = static_cast<std::uint16_t>(r.get(13));
      m.value1 = static_cast<std::int16_t>(r.get_signed(16));
      m.interpolation = static_cast<Interpolation>(r.get(1));
      return m;
    }
    case MessageType::attachment: {
      AttachmentMsg m;
      m.path_index = static_cast<std::uint8_t>(r.get(6));
      m.offset_q = static_cast<std::uint16_t>(r.get(13));
      m.attribute_type = static_cast<AttachmentType>(r.get(1));
      m.attribute_value = static_cast<std::uint16_t>(r.get(16));
      return m;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Encoder-side sequence counter; the next frame carries `next`.
struct CounterState {
  std::uint8_t next = 0;
  friend bool operator==(const CounterState&, const CounterState&) = default;
};

/// Packs one message into 1 or 2 frames. The counter advances mod 8 per frame.
inline std::pair<std::vector<Frame>, CounterState> encode_message(const AdasisMessage& msg, CounterState state) {
  detail::BitWriter w;
  std::visit(detail::PackVisitor{w}, msg);
  const MessageType type = message_type(msg);
  const int n = frames_for(type);
  std::vector<Frame> frames(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Frame& f = frames[static_cast<std::size_t>(i)];
    const bool more = i + 1 < n;
    f.bytes[0] = static_cast<std::uint8_t>((state.next << 5) | (static_cast<std::uint8_t>(type) << 2) | (more ? 0x2 : 0x0));
    std::copy_n(w.bytes().begin() + i * static_cast<int>(detail::kPayloadBytes), detail::kPayloadBytes, f.bytes.begin() + 1);
    state.next = static_cast<std::uint8_t>((state.next + 1) & 0x7);
  }
  return {std::move(frames), state};
}

/// Counter jump seen by the receiver.
struct GapEvent {
  std::uint8_t expected_counter = 0;
  std::uint8_t received_counter = 0;
  std::size_t frame_index = 0;      // index of the frame that revealed the gap
  std::size_t messages_before = 0;  // messages decoded before the gap in this call
  [[nodiscard]] std::uint8_t skipped() const noexcept {
    return static_cast<std::uint8_t>((received_counter - expected_counter) & 0x7);
  }
  friend bool operator==(const GapEvent&, const GapEvent&) = default;
};

struct DecodeErrorEvent {
  enum class Kind : std::uint8_t { bad_type, orphan_continuation, bad_sequence, bad_field };
  Kind kind = Kind::bad_type;
  std::size_t frame_index = 0;
  std::uint8_t type_tag = 0;
  friend bool operator==(const DecodeErrorEvent&, const DecodeErrorEvent&) = default;
};

/// Receiver state carried across decode_stream calls.
struct DecoderState {
  std::optional<std::uint8_t> expected_counter;
  std::optional<std::uint8_t> last_counter;
  std::optional<Frame> pending_first;  // first frame of a two-frame message
  std::size_t frames_seen = 0;
  friend bool operator==(const DecoderState&, const DecoderState&) = default;
};

struct DecodeResult {
  std::vector<AdasisMessage> messages;
  std::vector<GapEvent> gaps;
  std::vector<DecodeErrorEvent> errors;
};

/// Reassembles messages. Counter skips become GapEvents and drop any half-built
/// message; a second frame without its first is discarded, so decoding resumes
/// with the next frame that starts a message. Nothing here throws.
inline DecodeResult decode_stream(std::span<const Frame> frames, DecoderState& state) {
  DecodeResult out;
  for (const Frame& f : frames) {
    const std::size_t index = state.frames_seen++;
    const std::uint8_t counter = f.counter();
    if (state.expected_counter && counter != *state.expected_counter) {
      out.gaps.push_back({*state.expected_counter, counter, index, out.messages.size()});
      state.pending_first.reset();
    }
    state.expected_counter = static_cast<std::uint8_t>((counter + 1) & 0x7);
    state.last_counter = counter;

    const std::uint8_t tag = f.type();
    if (tag < 1 || tag > 5) {
      out.errors.push_back({DecodeErrorEvent::Kind::bad_type, index, tag});
      state.pending_first.reset();
      continue;
    }
    const auto type = static_cast<MessageType>(tag);
    std::array<std::uint8_t, 2 * detail::kPayloadBytes> payload{};
    auto emit = [&] {
      if (auto msg = detail::unpack(type, payload)) {
        out.messages.push_back(std::move(*msg));
      } else {
        out.errors.push_back({DecodeErrorEvent::Kind::bad_field, index, tag});
      }
    };

    if (state.pending_first) {
      const Frame first = *state.pending_first;
      state.pending_first.reset();
      if (first.type() == tag && !f.continuation()) {
        std::copy_n(first.bytes.begin() + 1, detail::kPayloadBytes, payload.begin());
        std::copy_n(f.bytes.begin() + 1, detail::kPayloadBytes, payload.begin() + detail::kPayloadBytes);
        emit();
        continue;
      }
      // The half-built message is lost; the current frame may still start one.
      out.errors.push_back({DecodeErrorEvent::Kind::bad_sequence, index, tag});
    }

    if (frames_for(type) == 2) {
      if (f.continuation()) {
        state.pending_first = f;
      } else {
        out.errors.push_back({DecodeErrorEvent::Kind::orphan_continuation, index, tag});
      }
      continue;
    }
    if (f.continuation()) {
      out.errors.push_back({DecodeErrorEvent::Kind::bad_sequence, index, tag});
      continue;
    }
    std::copy_n(f.bytes.begin() + 1, detail::kPayloadBytes, payload.begin());
    emit();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Horizon <-> messages

/// Sort key reproducing the emission order within one horizon.
inline auto emission_key(const AdasisMessage& m) {
  return std::visit(
      [](const auto& v) -> std::tuple<int, int, int, int, int> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PositionMsg>) return {0, 0, 0, 0, 0};
        else if constexpr (std::is_same_v<T, SegmentMsg>) return {v.path_index, 0, v.offset_q, 0, 0};
        else if constexpr (std::is_same_v<T, StubMsg>) return {v.path_index, 1, v.offset_q, v.branch_path_index, v.turn_angle_q};
        else if constexpr (std::is_same_v<T, ProfileMsg>) return {v.path_index, 2, v.offset_q, 0, 0};
        else return {v.path_index, 3, v.offset_q, static_cast<int>(v.attribute_type), v.attribute_value};
      },
      m);
}

namespace detail {

inline std::int16_t quantize_curvature(double k) {
  const double q = std::round(k * kCurvatureScale);
  if (q < -32768.0 || q > 32767.0) throw Error(Errc::codec_range, "curvature " + std::to_string(k) + " outside +-0.327");
  return static_cast<std::int16_t>(q);
}

inline std::uint8_t quantize_fraction(double f) {
  return static_cast<std::uint8_t>(std::round(std::clamp(f, 0.0, 1.0) * kFractionScale));
}

inline std::int8_t quantize_angle(double degrees) {
  auto q = static_cast<int>(std::round(degrees / kAngleStep));
  if (q <= -60) q = 60;  // -180 and +180 are the same heading
  return static_cast<std::int8_t>(q);
}

inline std::uint8_t small_count(int v, int bits, const char* what) {
  if (v < 0 || v >= (1 << bits)) throw Error(Errc::codec_range, std::string(what) + " does not fit");
  return static_cast<std::uint8_t>(v);
}

}  // namespace detail

/// Flattens a horizon into its deterministic message order: position first,
/// then per path ascending its segments, stubs, profiles and attachments, each
/// ascending by offset.
inline std::vector<AdasisMessage> horizon_to_messages(const Horizon& h) {
  if (h.paths.empty()) throw Error(Errc::codec_range, "horizon has no paths");
  if (h.paths.size() > kMaxPaths) throw Error(Errc::codec_range, "more than 63 paths");
  std::map<std::uint8_t, double> lengths;
  for (const auto& p : h.paths) {
    if (p.index < 1 || p.index > kMaxPaths) throw Error(Errc::codec_range, "path index outside [1, 63]");
    const double dm = std::round(p.total_length * kPathLengthScale);
    if (dm < 1.0 || dm > kPathLengthMax) throw Error(Errc::codec_range, "path length outside the 20-bit decimeter range");
    lengths[p.index] = p.total_length;
  }
  auto length_of = [&](std::uint8_t path) {
    auto it = lengths.find(path);
    if (it == lengths.end()) throw Error(Errc::codec_range, "reference to unknown path " + std::to_string(path));
    return it->second;
  };
  auto q = [&](std::uint8_t path, double offset) {
    const double len = length_of(path);
    // Cumulative sums may overshoot the total by an ulp.
    return quantize_offset(std::min(offset, len), len);
  };

  std::vector<AdasisMessage> body;
  for (const auto& s : h.segments) {
    SegmentMsg m;
    m.path_index = s.path_index;
    m.offset_q = q(s.path_index, s.offset);
    m.end_q = q(s.path_index, s.offset + s.length);
    m.speed_limit = static_cast<std::uint8_t>(std::clamp(s.attributes.speed_limit, 0, 255));
    m.lane_count = detail::small_count(s.attributes.lane_count, 4, "lane_count");
    m.route_type = s.attributes.route_type;
    m.is_tunnel = s.attributes.is_tunnel;
    m.is_bridge = s.attributes.is_bridge;
    m.is_emergency_lane = s.attributes.is_emergency_lane;
    m.path_length_dm = static_cast<std::uint32_t>(std::round(length_of(s.path_index) * kPathLengthScale));
    body.emplace_back(m);
  }
  for (const auto& s : h.stubs) {
    StubMsg m;
    m.path_index = s.parent_path;
    m.offset_q = q(s.parent_path, s.offset);
    if (s.branch_path) {
      length_of(*s.branch_path);
      m.branch_path_index = *s.branch_path;
    }
    m.turn_angle_q = detail::quantize_angle(s.turn_angle);
    m.lane_count = detail::small_count(s.lane_count, 4, "stub lane_count");
    m.branch_probability_q = detail::quantize_fraction(s.branch_probability);
    body.emplace_back(m);
  }
  for (const auto& p : h.profiles) {
    ProfileMsg m;
    m.path_index = p.path_index;
    m.offset_q = q(p.path_index, p.offset);
    m.value0 = detail::quantize_curvature(p.value0);
    m.distance1_q = q(p.path_index, p.distance1);
    m.value1 = detail::quantize_curvature(p.value1);
    m.interpolation = p.interpolation;
    body.emplace_back(m);
  }
  for (const auto& a : h.attachments) {
    AttachmentMsg m;
    m.path_index = a.path_index;
    m.offset_q = q(a.path_index, a.offset);
    m.attribute_type = a.type;
    if (a.value < 0 || a.value > 0xFFFF) throw Error(Errc::codec_range, "attachment value does not fit 16 bits");
    m.attribute_value = static_cast<std::uint16_t>(a.value);
    body.emplace_back(m);
  }
  std::stable_sort(body.begin(), body.end(),
                   [](const AdasisMessage& a, const AdasisMessage& b) { return emission_key(a) < emission_key(b); });

  const auto& pos = h.position;
  PositionMsg pm;
  pm.path_index = pos.path_index;
  pm.offset_q = q(pos.path_index, pos.offset);
  pm.probability_q = detail::quantize_fraction(pos.probability);
  pm.confidence_q = detail::quantize_fraction(pos.confidence);
  if (pos.gps_timestamp >= (1ULL << 48)) throw Error(Errc::codec_range, "gps timestamp exceeds 48 bits");
  pm.gps_timestamp = pos.gps_timestamp;
  const double speed_q = std::round(pos.speed * kSpeedScale);
  if (speed_q < 0 || speed_q > 1023) throw Error(Errc::codec_range, "speed outside [0, 102.3] m/s");
  pm.speed_q = static_cast<std::uint16_t>(speed_q);
  pm.current_lane = detail::small_count(pos.current_lane, 4, "current_lane");
  if (body.size() + 1 > 0xFFFF) throw Error(Errc::codec_range, "horizon needs more than 65535 messages");
  pm.message_count = static_cast<std::uint16_t>(body.size() + 1);

  std::vector<AdasisMessage> out;
  out.reserve(body.size() + 1);
  out.emplace_back(pm);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

/// Rebuilds a horizon from received messages (dequantized). Paths are known
/// from their SegmentMsgs; messages for unknown paths are ignored here.
inline Horizon messages_to_horizon(std::span<const AdasisMessage> messages) {
  Horizon h;
  std::map<std::uint8_t, double> lengths;
  for (const auto& m : messages) {
    if (auto s = std::get_if<SegmentMsg>(&m)) lengths[s->path_index] = s->path_length_dm / kPathLengthScale;
  }
  for (auto [index, len] : lengths) h.paths.push_back(Path{index, {}, len});

  for (const auto& m : messages) {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          auto it = lengths.find(v.path_index);
          if (it == lengths.end()) return;
          const double len = it->second;
          if constexpr (std::is_same_v<T, PositionMsg>) {
            h.position = HorizonPosition{v.path_index,
                                         dequantize_offset(v.offset_q, len),
                                         v.speed_q / kSpeedScale,
                                         v.gps_timestamp,
                                         v.current_lane,
                                         v.probability_q / kFractionScale,
                                         v.confidence_q / kFractionScale};
          } else if constexpr (std::is_same_v<T, SegmentMsg>) {
            const double start = dequantize_offset(v.offset_q, len);
            SegmentAttributes a{v.speed_limit, v.lane_count, v.route_type, v.is_tunnel, v.is_bridge, v.is_emergency_lane};
            h.segments.push_back({v.path_index, start, dequantize_offset(v.end_q, len) - start, a, SegmentId{}});
          } else if constexpr (std::is_same_v<T, StubMsg>) {
            Stub s;
            s.parent_path = v.path_index;
            s.offset = dequantize_offset(v.offset_q, len);
            if (v.branch_path_index != 0) s.branch_path = v.branch_path_index;
            s.turn_angle = v.turn_angle_q * kAngleStep;
            s.lane_count = v.lane_count;
            s.branch_probability = v.branch_probability_q / kFractionScale;
            h.stubs.push_back(s);
          } else if constexpr (std::is_same_v<T, ProfileMsg>) {
            h.profiles.push_back({v.path_index, dequantize_offset(v.offset_q, len), v.value0 / kCurvatureScale,
                                  dequantize_offset(v.distance1_q, len), v.value1 / kCurvatureScale, v.interpolation});
          } else {
            h.attachments.push_back({v.path_index, dequantize_offset(v.offset_q, len), v.attribute_type, v.attribute_value});
          }
        },
        m);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Provider-side transmitter

enum class RetransmitScope : std::uint8_t { since_counter = 0, full_horizon = 1 };

struct RetransmitRequest {
  std::uint8_t from_counter = 0;
  RetransmitScope scope = RetransmitScope::full_horizon;
  friend bool operator==(const RetransmitRequest&, const RetransmitRequest&) = default;
};

/// Encodes horizons onto the frame stream and keeps the last emission so it
/// can answer retransmission requests.
class HorizonTransmitter {
 public:
  std::vector<Frame> emit(const Horizon& h) {
    messages_ = horizon_to_messages(h);
    return encode_from(0);
  }

  /// Re-encodes the requested part of the last emission with fresh counters.
  /// since_counter resumes at the message holding the most recent frame that
  /// carried `from_counter`; unknown counters fall back to the full horizon.
  std::vector<Frame> respond(const RetransmitRequest& req) {
    if (messages_.empty()) return {};
    std::size_t first = 0;
    if (req.scope == RetransmitScope::since_counter) {
      for (std::size_t i = frame_counters_.size(); i-- > 0;) {
        if (frame_counters_[i] == (req.from_counter & 0x7)) {
          first = frame_message_[i];
          break;
        }
      }
    }
    return encode_from(first);
  }

  [[nodiscard]] const std::vector<AdasisMessage>& last_messages() const noexcept { return messages_; }
  [[nodiscard]] CounterState counter() const noexcept { return counter_; }

 private:
  std::vector<Frame> encode_from(std::size_t first) {
    std::vector<Frame> out;
    frame_counters_.clear();
    frame_message_.clear();
    for (std::size_t i = first; i < messages_.size(); ++i) {
      auto [frames, next] = encode_message(messages_[i], counter_);
      counter_ = next;
      for (const auto& f : frames) {
        frame_counters_.push_back(f.counter());
        frame_message_.push_back(i);
        out.push_back(f);
      }
    }
    return out;
  }

  std::vector<AdasisMessage> messages_;
  std::vector<std::uint8_t> frame_counters_;
  std::vector<std::size_t> frame_message_;
  CounterState counter_;
};

}  // namespace mapchain
