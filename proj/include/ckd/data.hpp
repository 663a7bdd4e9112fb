#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckd/events.hpp"
#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct Image {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<std::uint8_t> rgb;

  friend bool operator==(const Image&, const Image&) = default;
};

// T x 2 x H x W accumulated event frames; channel 0 holds polarity-0 counts,
// channel 1 polarity-1.
struct FrameTensor {
  std::size_t timesteps = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  static constexpr std::size_t kChannels = 2;

  double at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return values[((t * kChannels + c) * height + y) * width + x];
  }
  double& at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) {
    return values[((t * kChannels + c) * height + y) * width + x];
  }
};

// Per-polarity event counts over T equal-duration bins spanning
// [t_min, t_max]; events at t_max land in the last bin.
FrameTensor integrate_frames_raw(const EventStream& stream, std::size_t timesteps, std::size_t height,
                                 std::size_t width);
// Same, then divided by the max count (when positive) so entries lie in [0,1].
FrameTensor integrate_frames(const EventStream& stream, std::size_t timesteps, std::size_t height,
                             std::size_t width);

// HSV value channel of an RGB image: max(R,G,B)/255 per pixel, replicated
// into both polarity channels and all T timesteps.
FrameTensor static_to_frames(const Image& image, std::size_t timesteps);

// Same-category pair: a static image and an event stream carrying one label.
struct PairedSample {
  Image static_image;
  EventStream event_stream;
  int label = 0;
};

// Per-class sample ids, for category-paired drawing.
struct DatasetIndex {
  std::vector<std::vector<std::size_t>> by_class;
};

DatasetIndex build_class_index(const std::vector<PairedSample>& samples, std::size_t num_classes);

// Re-pairs the dynamic side of samples[dyn_id] with a uniformly drawn static
// sample of the same class.
PairedSample pair_by_category(const std::vector<PairedSample>& samples, std::size_t dyn_id,
                              const DatasetIndex& static_index, Rng& rng);

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t train_per_class = 16;
  std::size_t test_per_class = 20;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t t_span_us = 1'000'000;
  std::size_t noise_events = 150;      // uniform background activity per stream
  std::size_t trajectory_steps = 48;   // micro-steps of the shape sweep
  std::uint64_t seed = 7;
};

struct PairedDataset {
  std::vector<PairedSample> train;
  std::vector<PairedSample> test;
  std::size_t num_classes = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
};

// Each class is a geometric shape archetype with a class-specific size. The
// static image renders the shape anti-aliased at a random position; the
// event stream sweeps the same shape along a random linear trajectory,
// emitting polarity-1 events at newly covered pixels and polarity-0 at
// vacated ones, plus uniform noise. Deterministic per seed.
PairedDataset synth_paired_dataset(const SynthConfig& cfg);

std::size_t synth_archetype_count();

// Binary PPM (P6) image files.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

// Directory layout: static/*.ppm, events/*.ckde, manifest.json listing
// sample paths, labels and split membership.
void save_dataset(const std::string& dir, const PairedDataset& ds);
PairedDataset load_dataset(const std::string& dir);

// Batch glue for the nets: per-timestep [N,2,H,W] tensors, and [N,1,H,W]
// V-channel tensors for the teacher.
std::vector<Tensor> to_step_tensors(const std::vector<FrameTensor>& batch);
Tensor v_channel_batch(const std::vector<const Image*>& batch);

}  // namespace ckd
