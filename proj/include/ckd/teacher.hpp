#pragma once

#include <cstdint>
#include <vector>

#include "ckd/tensor.hpp"

namespace ckd {

struct TeacherArch {
  std::size_t in_channels = 1;  // the V channel
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::size_t> channels = {32, 64};  // conv-ReLU blocks, 2x2 max pool
  std::size_t num_classes = 10;
};

// Conventional conv net trained on static V-channel images and then frozen;
// once frozen it only serves logits and never receives gradients.
class TeacherNet {
 public:
  struct Block {
    Tensor weight;
    Tensor bias;
    std::size_t pool = 2;
  };

  std::vector<Block> blocks;
  Tensor readout_weight;
  Tensor readout_bias;
  TeacherArch arch;
  bool frozen = false;

  std::size_t feature_dim() const;
  std::vector<Parameter> parameters();
  void freeze();  // clears requires_grad on all parameters
};

TeacherNet build_teacher(const TeacherArch& arch, std::uint64_t seed);

struct TeacherTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

// Trains from scratch with cross-entropy on [1,H,W] V-channel images and
// returns the net frozen. epochs = 0 returns the (frozen) initialization.
TeacherNet train_teacher(const std::vector<Tensor>& images, const std::vector<int>& labels,
                         const TeacherArch& arch, const TeacherTrainConfig& cfg);

// Logits for a [batch, 1, H, W] input. The net must be frozen; the output
// carries no gradient path.
Tensor teacher_logits(const TeacherNet& net, const Tensor& batch);

// Plain forward used internally by training (tracked while unfrozen).
Tensor teacher_forward(const TeacherNet& net, const Tensor& batch);

}  // namespace ckd
