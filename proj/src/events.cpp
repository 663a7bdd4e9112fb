#include "ckd/events.hpp"

#include <fstream>

namespace ckd {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'D', 'E'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (std::uint16_t(p[1]) << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

void EventStream::validate() const {
  std::uint64_t prev_t = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const EventRecord& e = events[i];
    if (e.x >= width || e.y >= height)
      throw ParseError(ParseError::Kind::InvalidRecord,
                       "record " + std::to_string(i) + ": coordinate (" + std::to_string(e.x) + "," +
                           std::to_string(e.y) + ") outside " + std::to_string(width) + "x" +
                           std::to_string(height) + " sensor",
                       i);
    if (e.p > 1)
      throw ParseError(ParseError::Kind::InvalidRecord,
                       "record " + std::to_string(i) + ": polarity " + std::to_string(e.p) + " not in {0,1}",
                       i);
    if (i > 0 && e.t < prev_t)
      throw ParseError(ParseError::Kind::InvalidRecord,
                       "record " + std::to_string(i) + ": timestamp " + std::to_string(e.t) +
                           " decreases below " + std::to_string(prev_t),
                       i);
    prev_t = e.t;
  }
}

EventStream parse_event_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw ParseError(ParseError::Kind::UnrecognizedFormat, "unrecognized format: bad magic");
  if (bytes.size() < kCkdeHeaderSize)
    throw ParseError(ParseError::Kind::UnexpectedEndOfStream,
                     "unexpected end of stream in header at byte offset " + std::to_string(bytes.size()),
                     bytes.size());
  const std::uint16_t version = get_u16(bytes.data() + 4);
  if (version != kVersion)
    throw ParseError(ParseError::Kind::UnrecognizedFormat,
                     "unrecognized format: unsupported version " + std::to_string(version));
  EventStream stream;
  stream.width = get_u16(bytes.data() + 6);
  stream.height = get_u16(bytes.data() + 8);
  const std::uint32_t reserved = get_u32(bytes.data() + 10);
  if (reserved != 0)
    throw ParseError(ParseError::Kind::UnrecognizedFormat,
                     "unrecognized format: reserved field is " + std::to_string(reserved));
  const std::uint64_t count = get_u64(bytes.data() + 14);

  stream.events.reserve(static_cast<std::size_t>(count));
  std::size_t off = kCkdeHeaderSize;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (off + kCkdeRecordSize > bytes.size())
      throw ParseError(ParseError::Kind::UnexpectedEndOfStream,
                       "unexpected end of stream: record " + std::to_string(i) +
                           " truncated at byte offset " + std::to_string(off),
                       off);
    EventRecord e;
    e.t = get_u64(bytes.data() + off);
    e.x = get_u16(bytes.data() + off + 8);
    e.y = get_u16(bytes.data() + off + 10);
    e.p = bytes[off + 12];
    stream.events.push_back(e);
    off += kCkdeRecordSize;
  }
  if (off != bytes.size())
    throw ParseError(ParseError::Kind::InvalidRecord,
                     std::to_string(bytes.size() - off) + " trailing bytes after " +
                         std::to_string(count) + " records",
                     count);
  stream.validate();
  return stream;
}

std::vector<std::uint8_t> serialize_event_stream(const EventStream& stream) {
  stream.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kCkdeHeaderSize + stream.events.size() * kCkdeRecordSize);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_u16(out, stream.width);
  put_u16(out, stream.height);
  put_u32(out, 0);
  put_u64(out, stream.events.size());
  for (const EventRecord& e : stream.events) {
    put_u64(out, e.t);
    put_u16(out, e.x);
    put_u16(out, e.y);
    out.push_back(e.p);
  }
  return out;
}

EventStream read_event_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open event file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_event_file(bytes);
}

void write_event_file(const std::string& path, const EventStream& stream) {
  const std::vector<std::uint8_t> bytes = serialize_event_stream(stream);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write event file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ckd
