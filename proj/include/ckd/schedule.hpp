#pragma once

#include <cstdint>
#include <vector>

#include "ckd/data.hpp"
#include "ckd/rng.hpp"

namespace ckd {

// Position within a fixed-length training run: batch b_i of epoch e_c, with
// b_l batches per epoch and N_b batches overall.
struct ReplacementState {
  std::size_t batch_index = 0;
  std::size_t epoch_index = 0;
  std::size_t batches_per_epoch = 0;
  std::size_t total_batches = 0;

  void validate() const;
};

// Cubic ramp ((b_i + e_c * b_l) / N_b)^3: starts at 0, stays below 0.125
// until the midpoint, approaches 1 by the final batch.
double replace_probability(const ReplacementState& state);

// One training batch whose slots hold either the pair's event-derived frames
// (replaced_mask true) or its replicated V-channel frames.
struct HybridBatch {
  std::vector<FrameTensor> inputs;
  std::vector<std::uint8_t> replaced_mask;
  std::vector<int> labels;
};

// Independent Bernoulli(p) draw per sample, in batch order.
HybridBatch apply_replacement(const std::vector<PairedSample>& pairs, std::size_t timesteps, double p,
                              Rng& rng);

}  // namespace ckd
