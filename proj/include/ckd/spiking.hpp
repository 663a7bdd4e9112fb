#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckd/ops.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

struct LifConfig {
  double tau_leak = 0.5;       // membrane decay factor, in (0, 1]
  double v_threshold = 1.0;    // firing threshold, > 0
  double surrogate_width = 1.0;

  void validate() const;
};

// Triangular pseudo-derivative of the spike threshold, used as dH/dx in the
// backward pass only: max(0, 1 - |x|/width) / width.
double surrogate_grad(double x, double width);

// v = tau * u + input_current
Tensor leaky_integrate(const Tensor& u, const Tensor& input_current, double tau);

// Binary threshold crossing: s = H(v - v_threshold), with the triangular
// surrogate as its backward rule. With smooth = true the forward is replaced
// by the C1 antiderivative of the surrogate (a quadratic ramp), which makes
// the op finite-difference checkable; training always runs binary.
Tensor spike(const Tensor& v, const LifConfig& cfg, bool smooth = false);

// Hard reset: u_next = v * (1 - s).
Tensor reset_mul(const Tensor& v, const Tensor& s);

struct LifStepResult {
  Tensor u_next;
  Tensor spikes;
};

// One membrane update: v = tau*u + I, s = H(v - V_th), u_next = v*(1 - s).
LifStepResult lif_step(const Tensor& u, const Tensor& input_current, const LifConfig& cfg,
                       bool smooth = false);

struct StudentArch {
  std::size_t in_channels = 2;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::size_t> channels = {16, 32};  // conv-LIF blocks, each with 2x2 avg pool
  std::size_t timesteps = 10;
  std::size_t num_classes = 10;
  LifConfig lif;
};

// Conv-LIF stack with a linear readout, weight-shared across however many
// input streams are forwarded through it.
class SpikingNetwork {
 public:
  SpikingNetwork() = default;

  struct Block {
    Tensor weight;  // [oc, ic, 3, 3]
    Tensor bias;    // [oc]
    std::size_t pool = 2;
  };

  std::vector<Block> blocks;
  Tensor readout_weight;  // [feature_dim, num_classes]
  Tensor readout_bias;    // [num_classes]
  StudentArch arch;

  std::size_t feature_dim() const;
  std::size_t parameter_count() const;
  std::vector<Parameter> parameters();
  // Sum of per-parameter mutation counters; equal across two forwards iff
  // they saw the same weights.
  std::uint64_t parameter_version() const;
};

SpikingNetwork build_student(const StudentArch& arch, std::uint64_t seed);

struct TemporalActivations {
  std::vector<Tensor> features;  // T tensors [batch, feature_dim], penultimate layer
  std::vector<Tensor> logits;    // T tensors [batch, num_classes]
};

// Unrolls the LIF recurrence over the T step inputs (each [batch, C, H, W]).
// Membrane state starts at zero and is not carried across calls.
TemporalActivations forward_temporal(const SpikingNetwork& net, const std::vector<Tensor>& step_inputs,
                                     bool smooth = false);

}  // namespace ckd
