#include "ckd/schedule.hpp"

namespace ckd {

void ReplacementState::validate() const {
  if (total_batches == 0) throw Error("replace_probability: total_batches must be > 0");
  if (batches_per_epoch == 0) throw Error("replace_probability: batches_per_epoch must be > 0");
  if (batch_index >= batches_per_epoch)
    throw Error("replace_probability: batch_index " + std::to_string(batch_index) +
                " >= batches_per_epoch " + std::to_string(batches_per_epoch));
  if (batch_index + epoch_index * batches_per_epoch >= total_batches)
    throw Error("replace_probability: global batch index exceeds total_batches");
}

double replace_probability(const ReplacementState& state) {
  state.validate();
  const double progress = static_cast<double>(state.batch_index + state.epoch_index * state.batches_per_epoch) /
                          static_cast<double>(state.total_batches);
  return progress * progress * progress;
}

HybridBatch apply_replacement(const std::vector<PairedSample>& pairs, std::size_t timesteps, double p,
                              Rng& rng) {
  if (p < 0.0 || p > 1.0) throw Error("apply_replacement: p must be in [0,1]");
  HybridBatch batch;
  batch.inputs.reserve(pairs.size());
  batch.replaced_mask.reserve(pairs.size());
  batch.labels.reserve(pairs.size());
  for (const PairedSample& pair : pairs) {
    const bool replaced = rng.bernoulli(p);
    if (replaced)
      batch.inputs.push_back(integrate_frames(pair.event_stream, timesteps, pair.event_stream.height,
                                              pair.event_stream.width));
    else
      batch.inputs.push_back(static_to_frames(pair.static_image, timesteps));
    batch.replaced_mask.push_back(replaced ? 1 : 0);
    batch.labels.push_back(pair.label);
  }
  return batch;
}

}  // namespace ckd
