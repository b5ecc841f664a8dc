#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mapchain/adasis_codec.hpp"
#include "mapchain/horizon.hpp"

namespace mapchain {

inline constexpr std::size_t kPendingLimit = 1024;

/// Something the reconstructor knows it has not received.
struct MissingEntity {
  enum class Kind : std::uint8_t { position, messages, segment_span, profile_span, branch_path };
  Kind kind = Kind::position;
  std::uint8_t path_index = 0;
  std::uint16_t from_q = 0;  // span kinds: quantized [from_q, to_q) not covered
  std::uint16_t to_q = 0;
  std::size_t count = 0;  // messages: how many are unaccounted for
  friend bool operator==(const MissingEntity&, const MissingEntity&) = default;
};

inline std::string to_string(const MissingEntity& m) {
  switch (m.kind) {
    case MissingEntity::Kind::position: return "position";
    case MissingEntity::Kind::messages: return "messages(" + std::to_string(m.count) + ")";
    case MissingEntity::Kind::segment_span:
      return "segments(path " + std::to_string(m.path_index) + ", " + std::to_string(m.from_q) + ".." + std::to_string(m.to_q) + ")";
    case MissingEntity::Kind::profile_span:
      return "profiles(path " + std::to_string(m.path_index) + ", " + std::to_string(m.from_q) + ".." + std::to_string(m.to_q) + ")";
    case MissingEntity::Kind::branch_path: return "path " + std::to_string(m.path_index);
  }
  return "?";
}

struct CompletenessReport {
  bool complete = false;
  std::vector<MissingEntity> missing;
};

struct ReconstructorEvent {
  enum class Kind : std::uint8_t { buffer_overflow };
  Kind kind = Kind::buffer_overflow;
  AdasisMessage discarded;
};

/// Rebuilds the horizon from decoded messages. Entities are keyed by what
/// identifies them on the wire, so a repeated message overwrites its earlier
/// copy. Messages for paths whose first segment has not arrived wait in a
/// bounded buffer.
class Reconstructor {
 public:
  void reset() { *this = Reconstructor{}; }

  void ingest(std::span<const AdasisMessage> messages, std::span<const GapEvent> gaps = {}) {
    gaps_.insert(gaps_.end(), gaps.begin(), gaps.end());
    for (const auto& m : messages) accept(m);
    if (!gaps_.empty() && position_ && resolved_count() == position_->message_count) gaps_.clear();
  }

  [[nodiscard]] CompletenessReport completeness() const {
    CompletenessReport r;
    if (!position_) r.missing.push_back({MissingEntity::Kind::position});
    if (position_ && resolved_count() < position_->message_count) {
      r.missing.push_back({MissingEntity::Kind::messages, 0, 0, 0, position_->message_count - resolved_count()});
    }
    for (const auto& [path, len] : paths_) {
      (void)len;
      add_span_gaps(r.missing, MissingEntity::Kind::segment_span, path, segment_spans(path), 0);
      add_span_gaps(r.missing, MissingEntity::Kind::profile_span, path, profile_spans(path), 1);
    }
    for (const auto& [key, stub] : stubs_) {
      if (stub.branch_path_index != 0 && !paths_.contains(stub.branch_path_index)) {
        r.missing.push_back({MissingEntity::Kind::branch_path, stub.branch_path_index});
      }
    }
    if (!pending_.empty() && r.missing.empty()) r.missing.push_back({MissingEntity::Kind::messages, 0, 0, 0, pending_.size()});
    r.complete = r.missing.empty() && gaps_.empty();
    return r;
  }

  [[nodiscard]] bool complete() const { return completeness().complete; }

  /// Resolved messages in emission order.
  [[nodiscard]] std::vector<AdasisMessage> messages() const {
    std::vector<AdasisMessage> out;
    if (position_) out.emplace_back(*position_);
    for (const auto& [k, m] : segments_) out.emplace_back(m);
    for (const auto& [k, m] : stubs_) out.emplace_back(m);
    for (const auto& [k, m] : profiles_) out.emplace_back(m);
    for (const auto& [k, m] : attachments_) out.emplace_back(m);
    std::stable_sort(out.begin(), out.end(),
                     [](const AdasisMessage& a, const AdasisMessage& b) { return emission_key(a) < emission_key(b); });
    return out;
  }

  [[nodiscard]] Horizon horizon() const {
    const auto msgs = messages();
    return messages_to_horizon(msgs);
  }

  [[nodiscard]] std::size_t resolved_count() const noexcept {
    return (position_ ? 1 : 0) + segments_.size() + stubs_.size() + profiles_.size() + attachments_.size();
  }

  /// What to ask the provider for, if anything. A short count with no gap
  /// means the tail of the stream was lost, so only the tail is requested, as
  /// long as the tail fits in one counter cycle (4 messages of at most 2
  /// frames) and the previous tail request made progress.
  [[nodiscard]] std::optional<RetransmitRequest> retransmit_request(const DecoderState& decoder) {
    if (complete()) return std::nullopt;
    if (position_ && gaps_.empty() && decoder.last_counter && resolved_count() < position_->message_count) {
      const std::size_t missing = position_->message_count - resolved_count();
      const bool progressed = !tail_request_at_ || resolved_count() > *tail_request_at_;
      if (missing <= 4 && progressed) {
        tail_request_at_ = resolved_count();
        return RetransmitRequest{static_cast<std::uint8_t>((*decoder.last_counter + 1) & 0x7), RetransmitScope::since_counter};
      }
    }
    tail_request_at_.reset();
    return RetransmitRequest{0, RetransmitScope::full_horizon};
  }

  [[nodiscard]] const std::vector<GapEvent>& outstanding_gaps() const noexcept { return gaps_; }
  [[nodiscard]] const std::vector<ReconstructorEvent>& events() const noexcept { return events_; }
  [[nodiscard]] std::size_t pending_count() const noexcept { return pending_.size(); }
  [[nodiscard]] bool has_position() const noexcept { return position_.has_value(); }

 private:
  using Span = std::pair<std::uint16_t, std::uint16_t>;

  void accept(const AdasisMessage& m) {
    const std::uint8_t path = std::visit([](const auto& v) { return v.path_index; }, m);
    const auto* seg = std::get_if<SegmentMsg>(&m);
    if (!seg && !paths_.contains(path)) {
      if (std::find(pending_.begin(), pending_.end(), m) != pending_.end()) return;
      if (pending_.size() == kPendingLimit) {
        events_.push_back({ReconstructorEvent::Kind::buffer_overflow, pending_.front()});
        pending_.pop_front();
      }
      pending_.push_back(m);
      return;
    }
    std::visit([&](const auto& v) { store(v); }, m);
    if (seg) flush_pending(seg->path_index);
  }

  void flush_pending(std::uint8_t path) {
    std::deque<AdasisMessage> keep;
    std::vector<AdasisMessage> ready;
    for (auto& m : pending_) {
      const std::uint8_t p = std::visit([](const auto& v) { return v.path_index; }, m);
      if (p == path) {
        ready.push_back(std::move(m));
      } else {
        keep.push_back(std::move(m));
      }
    }
    pending_ = std::move(keep);
    for (const auto& m : ready) std::visit([&](const auto& v) { store(v); }, m);
  }

  void store(const PositionMsg& m) { position_ = m; }
  void store(const SegmentMsg& m) {
    paths_[m.path_index] = m.path_length_dm;
    segments_[{m.path_index, m.offset_q, m.end_q}] = m;
  }
  void store(const StubMsg& m) {
    stubs_[{m.path_index, m.offset_q, m.branch_path_index, m.turn_angle_q}] = m;
  }
  void store(const ProfileMsg& m) { profiles_[{m.path_index, m.offset_q}] = m; }
  void store(const AttachmentMsg& m) {
    attachments_[{m.path_index, m.offset_q, static_cast<std::uint8_t>(m.attribute_type)}] = m;
  }

  [[nodiscard]] std::vector<Span> segment_spans(std::uint8_t path) const {
    std::vector<Span> out;
    for (auto it = segments_.lower_bound({path, 0, 0}); it != segments_.end() && std::get<0>(it->first) == path; ++it) {
      out.emplace_back(it->second.offset_q, it->second.end_q);
    }
    return out;
  }

  [[nodiscard]] std::vector<Span> profile_spans(std::uint8_t path) const {
    std::vector<Span> out;
    for (auto it = profiles_.lower_bound({path, 0}); it != profiles_.end() && it->first.first == path; ++it) {
      const int end = it->second.offset_q + it->second.distance1_q;
      out.emplace_back(it->second.offset_q, static_cast<std::uint16_t>(std::min(end, int{kOffsetFullScale})));
    }
    return out;
  }

  /// Reports every hole in [0, 8191] left by `spans` (sorted by start).
  /// `slack` absorbs independent rounding of span starts and lengths.
  static void add_span_gaps(std::vector<MissingEntity>& out, MissingEntity::Kind kind, std::uint8_t path,
                            const std::vector<Span>& spans, int slack) {
    int reached = 0;
    for (const auto& [from, to] : spans) {
      if (from > reached + slack) out.push_back({kind, path, static_cast<std::uint16_t>(reached), from});
      reached = std::max(reached, int{to});
    }
    if (reached + slack < kOffsetFullScale) {
      out.push_back({kind, path, static_cast<std::uint16_t>(reached), kOffsetFullScale});
    }
  }

  std::optional<PositionMsg> position_;
  std::map<std::uint8_t, std::uint32_t> paths_;  // path index -> length in dm
  std::map<std::tuple<std::uint8_t, std::uint16_t, std::uint16_t>, SegmentMsg> segments_;
  std::map<std::tuple<std::uint8_t, std::uint16_t, std::uint8_t, std::int8_t>, StubMsg> stubs_;
  std::map<std::pair<std::uint8_t, std::uint16_t>, ProfileMsg> profiles_;
  std::map<std::tuple<std::uint8_t, std::uint16_t, std::uint8_t>, AttachmentMsg> attachments_;
  std::deque<AdasisMessage> pending_;
  std::vector<GapEvent> gaps_;
  std::vector<ReconstructorEvent> events_;
  std::optional<std::size_t> tail_request_at_;
};

}  // namespace mapchain
