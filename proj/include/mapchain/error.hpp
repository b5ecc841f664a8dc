#pragma once

#include <stdexcept>
#include <string>

namespace mapchain {

enum class Errc {
  empty_network,
  invalid_segment,
  duplicate_segment,
  dangling_node,
  unknown_segment,
  out_of_range,
  malformed_key,
  nothing_staged,
  version_mismatch,
  unknown_version,
  history_pruned,
  inconsistent_patch,
  field_overflow,
  codec_range,
  invalid_position,
  uncovered_region,
  duplicate_job,
  invalid_argument,
  parse_error,
  io_error,
};

inline const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::empty_network: return "empty network";
    case Errc::invalid_segment: return "invalid segment";
    case Errc::duplicate_segment: return "duplicate segment id";
    case Errc::dangling_node: return "dangling node reference";
    case Errc::unknown_segment: return "unknown segment";
    case Errc::out_of_range: return "out of range";
    case Errc::malformed_key: return "malformed key";
    case Errc::nothing_staged: return "nothing staged";
    case Errc::version_mismatch: return "version mismatch";
    case Errc::unknown_version: return "unknown version";
    case Errc::history_pruned: return "history pruned";
    case Errc::inconsistent_patch: return "inconsistent patch";
    case Errc::field_overflow: return "field overflow";
    case Errc::codec_range: return "codec range exceeded";
    case Errc::invalid_position: return "invalid position";
    case Errc::uncovered_region: return "uncovered region";
    case Errc::duplicate_job: return "duplicate job id";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::parse_error: return "parse error";
    case Errc::io_error: return "i/o error";
  }
  return "unknown error";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }
  [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace mapchain
