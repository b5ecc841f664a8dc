#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "mapchain/adasis_codec.hpp"
#include "mapchain/error.hpp"
#include "mapchain/random.hpp"

namespace mapchain {

struct ChannelConfig {
  double drop_probability = 0.0;
  double corrupt_probability = 0.0;
  bool bidirectional = false;
  std::uint64_t seed = 0;
  std::size_t frames_per_tick = 1024;
};

inline void validate(const ChannelConfig& c) {
  if (!(c.drop_probability >= 0.0 && c.drop_probability <= 1.0)) {
    throw Error(Errc::invalid_argument, "drop_probability outside [0,1]");
  }
  if (!(c.corrupt_probability >= 0.0 && c.corrupt_probability <= 1.0)) {
    throw Error(Errc::invalid_argument, "corrupt_probability outside [0,1]");
  }
  if (c.frames_per_tick == 0) throw Error(Errc::invalid_argument, "frames_per_tick must be > 0");
}

/// A frame as it leaves the channel. `corrupted` is the out-of-band link-layer
/// verdict; the payload of a corrupted frame has one bit flipped.
struct DeliveredFrame {
  Frame frame;
  bool corrupted = false;
  friend bool operator==(const DeliveredFrame&, const DeliveredFrame&) = default;
};

struct ChannelStats {
  std::uint64_t sent = 0;
  std::uint64_t dropped = 0;
  std::uint64_t corrupted = 0;
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

class Channel {
 public:
  explicit Channel(ChannelConfig config) : config_(config), rng_(config.seed) { validate(config_); }

  /// Each frame is dropped independently; survivors are corrupted independently.
  /// Two draws are consumed per frame regardless of outcome.
  std::vector<DeliveredFrame> transmit(std::span<const Frame> frames) {
    std::vector<DeliveredFrame> out;
    out.reserve(frames.size());
    for (const Frame& f : frames) {
      ++stats_.sent;
      const bool drop = rng_.bernoulli(config_.drop_probability);
      const bool corrupt = rng_.bernoulli(config_.corrupt_probability);
      if (drop) {
        ++stats_.dropped;
        continue;
      }
      DeliveredFrame d{f, false};
      if (corrupt) {
        const auto bit = rng_.uniform_int(0, 55);
        d.frame.bytes[1 + static_cast<std::size_t>(bit / 8)] ^= static_cast<std::uint8_t>(0x80U >> (bit % 8));
        d.corrupted = true;
        ++stats_.corrupted;
      }
      out.push_back(d);
    }
    return out;
  }

  /// Queues a request for the provider. Impossible without a back channel.
  bool request_retransmission(const RetransmitRequest& req) {
    if (!config_.bidirectional) return false;
    requests_.push_back(req);
    return true;
  }

  std::vector<RetransmitRequest> take_requests() {
    std::vector<RetransmitRequest> out(requests_.begin(), requests_.end());
    requests_.clear();
    return out;
  }

  [[nodiscard]] const ChannelConfig& config() const noexcept { return config_; }
  [[nodiscard]] const ChannelStats& stats() const noexcept { return stats_; }

 private:
  ChannelConfig config_;
  Rng rng_;
  ChannelStats stats_;
  std::deque<RetransmitRequest> requests_;
};

/// Receiver-side filter: corrupted frames are discarded, turning corruption into loss.
inline std::vector<Frame> intact_frames(std::span<const DeliveredFrame> delivered) {
  std::vector<Frame> out;
  out.reserve(delivered.size());
  for (const auto& d : delivered) {
    if (!d.corrupted) out.push_back(d.frame);
  }
  return out;
}

}  // namespace mapchain
