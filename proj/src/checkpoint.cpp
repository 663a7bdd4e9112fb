#include "ckd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ckd {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'P', 'T'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

double get_f64(const std::uint8_t* p) {
  const std::uint64_t bits = get_u64(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

const Checkpoint::Entry& Checkpoint::find(const std::string& name) const {
  for (const Entry& e : entries)
    if (e.name == name) return e;
  throw Error("checkpoint has no tensor named " + name);
}

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params,
                     const std::map<std::string, std::string>& meta) {
  nlohmann::ordered_json manifest;
  manifest["meta"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : meta) manifest["meta"][k] = v;
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const Parameter& p : params) {
    manifest["tensors"].push_back(
        {{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += p.tensor.numel() * 8;
  }
  const std::string mjson = manifest.dump();

  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + mjson.size() + offset);
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u16(bytes, 1);
  put_u16(bytes, 0);
  put_u64(bytes, mjson.size());
  bytes.insert(bytes.end(), mjson.begin(), mjson.end());
  for (const Parameter& p : params)
    for (double v : p.tensor.values()) put_f64(bytes, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw ParseError(ParseError::Kind::UnrecognizedFormat, path + ": not a checkpoint file");
  const std::uint64_t mlen = get_u64(bytes.data() + 8);
  if (16 + mlen > bytes.size())
    throw ParseError(ParseError::Kind::UnexpectedEndOfStream, path + ": truncated manifest", bytes.size());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::UnrecognizedFormat, path + ": bad manifest: " + e.what());
  }

  Checkpoint ckpt;
  for (auto& [k, v] : manifest.at("meta").items()) ckpt.meta[k] = v.get<std::string>();
  const std::size_t data_start = 16 + static_cast<std::size_t>(mlen);
  for (const auto& t : manifest.at("tensors")) {
    Checkpoint::Entry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    const std::uint64_t off = t.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_numel(e.shape);
    if (data_start + off + n * 8 > bytes.size())
      throw ParseError(ParseError::Kind::UnexpectedEndOfStream, path + ": truncated tensor " + e.name,
                       data_start + off);
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.values[i] = get_f64(bytes.data() + data_start + off + i * 8);
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

void load_into(const Checkpoint& ckpt, std::vector<Parameter> params) {
  for (Parameter& p : params) {
    const Checkpoint::Entry& e = ckpt.find(p.name);
    if (e.shape != p.tensor.shape())
      throw ShapeError("load_into(" + p.name + ")", p.tensor.shape(), e.shape);
    std::vector<double>& dst = p.tensor.values_mut();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  }
}

}  // namespace ckd
