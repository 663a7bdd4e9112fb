#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckd/error.hpp"

namespace ckd {

// One DVS event: microsecond timestamp, pixel coordinates, polarity bit.
struct EventRecord {
  std::uint64_t t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint8_t p = 0;  // 0 = brightness decrease, 1 = increase

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct EventStream {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<EventRecord> events;  // non-decreasing in t

  // Bounds, polarity and sort-order checks; throws ParseError(InvalidRecord)
  // with the offending record index.
  void validate() const;
};

// CKDE container: magic "CKDE", version u16 = 1, width u16, height u16,
// reserved u32 = 0, count u64, then `count` packed 13-byte records
// (t u64, x u16, y u16, p u8). All little-endian.
inline constexpr std::size_t kCkdeHeaderSize = 22;
inline constexpr std::size_t kCkdeRecordSize = 13;

EventStream parse_event_file(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_event_stream(const EventStream& stream);

EventStream read_event_file(const std::string& path);
void write_event_file(const std::string& path, const EventStream& stream);

}  // namespace ckd
