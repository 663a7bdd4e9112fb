#include "ckd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace ckd {

FrameTensor integrate_frames_raw(const EventStream& stream, std::size_t timesteps, std::size_t height,
                                 std::size_t width) {
  if (timesteps == 0) throw Error("integrate_frames: timesteps must be >= 1");
  if (!stream.events.empty() && (stream.width != width || stream.height != height))
    throw Error("integrate_frames: stream is " + std::to_string(stream.width) + "x" +
                std::to_string(stream.height) + ", target is " + std::to_string(width) + "x" +
                std::to_string(height));
  FrameTensor out;
  out.timesteps = timesteps;
  out.height = height;
  out.width = width;
  out.values.assign(timesteps * FrameTensor::kChannels * height * width, 0.0);
  if (stream.events.empty()) return out;

  const std::uint64_t t_min = stream.events.front().t;
  const std::uint64_t t_max = stream.events.back().t;
  const std::uint64_t span = t_max - t_min;
  for (const EventRecord& e : stream.events) {
    std::size_t bin = 0;
    if (span > 0) {
      // floor((t - t_min) / (span / T)) without rounding loss
      const auto scaled = static_cast<unsigned __int128>(e.t - t_min) * timesteps;
      bin = std::min<std::size_t>(static_cast<std::size_t>(scaled / span), timesteps - 1);
    }
    out.at(bin, e.p, e.y, e.x) += 1.0;
  }
  return out;
}

FrameTensor integrate_frames(const EventStream& stream, std::size_t timesteps, std::size_t height,
                             std::size_t width) {
  FrameTensor out = integrate_frames_raw(stream, timesteps, height, width);
  double mx = 0.0;
  for (double v : out.values) mx = std::max(mx, v);
  if (mx > 0.0)
    for (double& v : out.values) v /= mx;
  return out;
}

FrameTensor static_to_frames(const Image& image, std::size_t timesteps) {
  if (timesteps == 0) throw Error("static_to_frames: timesteps must be >= 1");
  FrameTensor out;
  out.timesteps = timesteps;
  out.height = image.height;
  out.width = image.width;
  out.values.resize(timesteps * FrameTensor::kChannels * image.height * image.width);
  const std::size_t pixels = static_cast<std::size_t>(image.height) * image.width;
  std::vector<double> v(pixels);
  for (std::size_t i = 0; i < pixels; ++i) {
    const std::uint8_t r = image.rgb[3 * i], g = image.rgb[3 * i + 1], b = image.rgb[3 * i + 2];
    v[i] = static_cast<double>(std::max({r, g, b})) / 255.0;
  }
  for (std::size_t t = 0; t < timesteps; ++t)
    for (std::size_t c = 0; c < FrameTensor::kChannels; ++c)
      std::copy(v.begin(), v.end(), out.values.begin() + (t * FrameTensor::kChannels + c) * pixels);
  return out;
}

DatasetIndex build_class_index(const std::vector<PairedSample>& samples, std::size_t num_classes) {
  DatasetIndex idx;
  idx.by_class.resize(num_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int y = samples[i].label;
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw Error("sample " + std::to_string(i) + " has label " + std::to_string(y) +
                  " outside 0.." + std::to_string(num_classes - 1));
    idx.by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  return idx;
}

PairedSample pair_by_category(const std::vector<PairedSample>& samples, std::size_t dyn_id,
                              const DatasetIndex& static_index, Rng& rng) {
  const PairedSample& dyn = samples.at(dyn_id);
  const auto y = static_cast<std::size_t>(dyn.label);
  if (y >= static_index.by_class.size() || static_index.by_class[y].empty())
    throw Error("pair_by_category: no static samples for class " + std::to_string(dyn.label));
  const auto& pool = static_index.by_class[y];
  const std::size_t pick = pool[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
  return {samples[pick].static_image, dyn.event_stream, dyn.label};
}

namespace {

constexpr std::size_t kArchetypes = 10;

// Shape membership relative to the center, with nominal radius r.
bool inside_shape(std::size_t archetype, double dx, double dy, double r) {
  switch (archetype) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= 0.8 * r && std::abs(dx) <= (dy + r) * 0.55;
    case 3:  // plus cross
      return (std::abs(dx) <= 0.32 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.32 * r && std::abs(dx) <= r);
    case 4: {  // horizontal bars
      if (std::abs(dx) > 0.9 * r || std::abs(dy) > r) return false;
      return static_cast<int>(std::floor((dy + r) / (0.5 * r))) % 2 == 0;
    }
    case 5: {  // vertical bars
      if (std::abs(dy) > 0.9 * r || std::abs(dx) > r) return false;
      return static_cast<int>(std::floor((dx + r) / (0.5 * r))) % 2 == 0;
    }
    case 6: {  // ring
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case 7:  // diamond
      return std::abs(dx) + std::abs(dy) <= r;
    case 8: {  // checkerboard
      if (std::abs(dx) > 0.9 * r || std::abs(dy) > 0.9 * r) return false;
      const int ix = static_cast<int>(std::floor((dx + r) / (0.6 * r)));
      const int iy = static_cast<int>(std::floor((dy + r) / (0.6 * r)));
      return (ix + iy) % 2 == 0;
    }
    case 9: {  // diagonal cross
      if (std::abs(dx) > r || std::abs(dy) > r) return false;
      const double inv_sqrt2 = 0.7071067811865476;
      return std::abs(dx - dy) * inv_sqrt2 <= 0.3 * r || std::abs(dx + dy) * inv_sqrt2 <= 0.3 * r;
    }
    default:
      throw Error("unknown shape archetype " + std::to_string(archetype));
  }
}

double class_radius(std::size_t cls, std::size_t h, std::size_t w) {
  return static_cast<double>(std::min(h, w)) * (0.18 + 0.012 * static_cast<double>(cls));
}

Image render_static(std::size_t cls, double r, double cx, double cy, std::size_t h, std::size_t w,
                    Rng& rng) {
  const double fg = rng.uniform(0.75, 1.0);
  const double bg = rng.uniform(0.0, 0.08);
  // Random chroma with one channel pinned at 1, so V = max(R,G,B) tracks fg.
  double mix[3] = {rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)};
  mix[static_cast<std::size_t>(rng.uniform_int(0, 2))] = 1.0;

  Image img;
  img.width = static_cast<std::uint16_t>(w);
  img.height = static_cast<std::uint16_t>(h);
  img.rgb.resize(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // 3x3 supersampling for anti-aliasing
      int hits = 0;
      for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / 3.0;
          const double py = static_cast<double>(y) + (sy + 0.5) / 3.0;
          if (inside_shape(cls, px - cx, py - cy, r)) ++hits;
        }
      const double cov = hits / 9.0;
      const double v = bg + (fg - bg) * cov;
      for (int c = 0; c < 3; ++c)
        img.rgb[(y * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v * mix[c], 0.0, 1.0) * 255.0));
    }
  return img;
}

EventStream render_events(std::size_t cls, double r, std::size_t h, std::size_t w,
                          const SynthConfig& cfg, Rng& rng) {
  const double margin = r + 1.0;
  auto random_center = [&] {
    return std::pair<double, double>{rng.uniform(margin, static_cast<double>(w) - margin),
                                     rng.uniform(margin, static_cast<double>(h) - margin)};
  };

  // Linear sweep whose endpoints both keep the shape inside the frame.
  double ax, ay, bx, by;
  const double len = rng.uniform(0.3, 0.55) * static_cast<double>(std::min(h, w));
  for (int attempt = 0;; ++attempt) {
    std::tie(ax, ay) = random_center();
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    bx = ax + len * std::cos(angle);
    by = ay + len * std::sin(angle);
    if ((bx >= margin && bx <= w - margin && by >= margin && by <= h - margin) || attempt > 100) break;
  }

  const std::size_t steps = std::max<std::size_t>(2, cfg.trajectory_steps);
  std::vector<std::uint8_t> prev(h * w, 0), curr(h * w, 0);
  std::vector<EventRecord> signal;
  for (std::size_t k = 0; k < steps; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(steps - 1);
    const double cx = ax + (bx - ax) * f;
    const double cy = ay + (by - ay) * f;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        curr[y * w + x] = inside_shape(cls, (x + 0.5) - cx, (y + 0.5) - cy, r) ? 1 : 0;
    if (k > 0) {
      const std::uint64_t t =
          static_cast<std::uint64_t>(std::llround(f * static_cast<double>(cfg.t_span_us)));
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t i = y * w + x;
          if (curr[i] != prev[i])
            signal.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                              static_cast<std::uint8_t>(curr[i] ? 1 : 0)});
        }
    }
    std::swap(prev, curr);
  }

  std::vector<EventRecord> noise;
  noise.reserve(cfg.noise_events);
  for (std::size_t i = 0; i < cfg.noise_events; ++i)
    noise.push_back({static_cast<std::uint64_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.t_span_us))),
                     static_cast<std::uint16_t>(rng.uniform_int(0, static_cast<std::int64_t>(w) - 1)),
                     static_cast<std::uint16_t>(rng.uniform_int(0, static_cast<std::int64_t>(h) - 1)),
                     static_cast<std::uint8_t>(rng.bernoulli(0.5) ? 1 : 0)});
  std::sort(noise.begin(), noise.end(), [](const EventRecord& a, const EventRecord& b) {
    return std::tie(a.t, a.y, a.x, a.p) < std::tie(b.t, b.y, b.x, b.p);
  });

  EventStream stream;
  stream.width = static_cast<std::uint16_t>(w);
  stream.height = static_cast<std::uint16_t>(h);
  stream.events.resize(signal.size() + noise.size());
  std::merge(signal.begin(), signal.end(), noise.begin(), noise.end(), stream.events.begin(),
             [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
  stream.validate();
  return stream;
}

PairedSample make_sample(std::size_t cls, const SynthConfig& cfg, std::uint64_t uid) {
  Rng rng(hash_seed(cfg.seed, uid));
  const double r = class_radius(cls, cfg.height, cfg.width) * rng.uniform(0.9, 1.1);
  const double margin = r + 1.0;
  const double cx = rng.uniform(margin, static_cast<double>(cfg.width) - margin);
  const double cy = rng.uniform(margin, static_cast<double>(cfg.height) - margin);
  PairedSample s;
  s.label = static_cast<int>(cls);
  s.static_image = render_static(cls, r, cx, cy, cfg.height, cfg.width, rng);
  s.event_stream = render_events(cls, r, cfg.height, cfg.width, cfg, rng);
  return s;
}

}  // namespace

std::size_t synth_archetype_count() { return kArchetypes; }

PairedDataset synth_paired_dataset(const SynthConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.num_classes > kArchetypes)
    throw Error("num_classes must be in 1.." + std::to_string(kArchetypes) + ", got " +
                std::to_string(cfg.num_classes));
  if (cfg.height < 8 || cfg.width < 8) throw Error("synthetic images must be at least 8x8");

  PairedDataset ds;
  ds.num_classes = cfg.num_classes;
  ds.width = static_cast<std::uint16_t>(cfg.width);
  ds.height = static_cast<std::uint16_t>(cfg.height);
  std::uint64_t uid = 0;
  for (std::size_t cls = 0; cls < cfg.num_classes; ++cls)
    for (std::size_t i = 0; i < cfg.train_per_class; ++i)
      ds.train.push_back(make_sample(cls, cfg, uid++));
  uid = 1ull << 32;  // independent stream ids for the test split
  for (std::size_t cls = 0; cls < cfg.num_classes; ++cls)
    for (std::size_t i = 0; i < cfg.test_per_class; ++i)
      ds.test.push_back(make_sample(cls, cfg, uid++));
  return ds;
}

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write image: " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError(ParseError::Kind::UnrecognizedFormat, path + ": not a P6 PPM");
  long w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw ParseError(ParseError::Kind::UnrecognizedFormat, path + ": unsupported PPM header");
  in.get();  // single whitespace after header
  Image img;
  img.width = static_cast<std::uint16_t>(w);
  img.height = static_cast<std::uint16_t>(h);
  img.rgb.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw ParseError(ParseError::Kind::UnexpectedEndOfStream, path + ": truncated pixel data",
                     static_cast<std::uint64_t>(in.gcount()));
  return img;
}

namespace {

std::string sample_stem(const std::string& split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05zu", split.c_str(), i);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const PairedDataset& ds) {
  fs::create_directories(fs::path(dir) / "static");
  fs::create_directories(fs::path(dir) / "events");
  nlohmann::ordered_json manifest;
  manifest["width"] = ds.width;
  manifest["height"] = ds.height;
  manifest["num_classes"] = ds.num_classes;
  manifest["samples"] = nlohmann::ordered_json::array();
  auto emit = [&](const std::vector<PairedSample>& samples, const std::string& split) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::string stem = sample_stem(split, i);
      const std::string img_rel = "static/" + stem + ".ppm";
      const std::string ev_rel = "events/" + stem + ".ckde";
      write_ppm((fs::path(dir) / img_rel).string(), samples[i].static_image);
      write_event_file((fs::path(dir) / ev_rel).string(), samples[i].event_stream);
      manifest["samples"].push_back({{"split", split},
                                     {"label", samples[i].label},
                                     {"image", img_rel},
                                     {"events", ev_rel}});
    }
  };
  emit(ds.train, "train");
  emit(ds.test, "test");
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw Error("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

PairedDataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw Error("no manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::UnrecognizedFormat, std::string("bad manifest: ") + e.what());
  }
  PairedDataset ds;
  ds.width = manifest.at("width").get<std::uint16_t>();
  ds.height = manifest.at("height").get<std::uint16_t>();
  ds.num_classes = manifest.at("num_classes").get<std::size_t>();
  for (const auto& entry : manifest.at("samples")) {
    PairedSample s;
    s.label = entry.at("label").get<int>();
    s.static_image = read_ppm((fs::path(dir) / entry.at("image").get<std::string>()).string());
    s.event_stream = read_event_file((fs::path(dir) / entry.at("events").get<std::string>()).string());
    const std::string split = entry.at("split").get<std::string>();
    if (split == "train")
      ds.train.push_back(std::move(s));
    else if (split == "test")
      ds.test.push_back(std::move(s));
    else
      throw Error("unknown split '" + split + "' in manifest");
  }
  return ds;
}

std::vector<Tensor> to_step_tensors(const std::vector<FrameTensor>& batch) {
  if (batch.empty()) throw Error("to_step_tensors: empty batch");
  const std::size_t t_steps = batch.front().timesteps;
  const std::size_t h = batch.front().height, w = batch.front().width;
  const std::size_t plane = FrameTensor::kChannels * h * w;
  std::vector<Tensor> steps;
  steps.reserve(t_steps);
  for (std::size_t t = 0; t < t_steps; ++t) {
    std::vector<double> buf(batch.size() * plane);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const FrameTensor& f = batch[i];
      if (f.timesteps != t_steps || f.height != h || f.width != w)
        throw Error("to_step_tensors: inconsistent frame shapes in batch");
      std::copy_n(f.values.begin() + t * plane, plane, buf.begin() + i * plane);
    }
    steps.push_back(Tensor::from_values({batch.size(), FrameTensor::kChannels, h, w}, std::move(buf)));
  }
  return steps;
}

Tensor v_channel_batch(const std::vector<const Image*>& batch) {
  if (batch.empty()) throw Error("v_channel_batch: empty batch");
  const std::size_t h = batch.front()->height, w = batch.front()->width;
  std::vector<double> buf(batch.size() * h * w);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Image& img = *batch[i];
    if (img.height != h || img.width != w) throw Error("v_channel_batch: inconsistent image sizes");
    for (std::size_t p = 0; p < h * w; ++p) {
      const std::uint8_t r = img.rgb[3 * p], g = img.rgb[3 * p + 1], b = img.rgb[3 * p + 2];
      buf[i * h * w + p] = static_cast<double>(std::max({r, g, b})) / 255.0;
    }
  }
  return Tensor::from_values({batch.size(), 1, h, w}, std::move(buf));
}

}  // namespace ckd
