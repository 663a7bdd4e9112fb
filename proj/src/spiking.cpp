#include "ckd/spiking.hpp"

#include <cmath>

#include "ckd/rng.hpp"

namespace ckd {

using autograd::Node;

void LifConfig::validate() const {
  if (!(tau_leak > 0.0 && tau_leak <= 1.0))
    throw ConfigError("tau_leak must be in (0,1], got " + std::to_string(tau_leak));
  if (!(v_threshold > 0.0)) throw ConfigError("v_threshold must be > 0");
  if (!(surrogate_width > 0.0)) throw ConfigError("surrogate_width must be > 0");
}

double surrogate_grad(double x, double width) {
  const double a = 1.0 - std::abs(x) / width;
  return a > 0.0 ? a / width : 0.0;
}

namespace {

// C1 antiderivative of the triangular surrogate; equals H away from the
// +-width band. Forward companion for finite-difference checks.
double smooth_step(double x, double w) {
  if (x <= -w) return 0.0;
  if (x >= w) return 1.0;
  if (x < 0.0) {
    const double d = x + w;
    return d * d / (2.0 * w * w);
  }
  return 0.5 + x / w - x * x / (2.0 * w * w);
}

}  // namespace

Tensor leaky_integrate(const Tensor& u, const Tensor& input_current, double tau) {
  if (u.shape() != input_current.shape())
    throw ShapeError("leaky_integrate", u.shape(), input_current.shape());
  std::vector<double> out(u.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tau * u.values()[i] + input_current.values()[i];
  return autograd::make_op(u.shape(), std::move(out), {u, input_current}, [tau](Node& self) {
    auto* pu = self.parents[0].get();
    auto* pi = self.parents[1].get();
    if (pu->requires_grad) {
      pu->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pu->grad[i] += tau * self.grad[i];
    }
    if (pi->requires_grad) {
      pi->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pi->grad[i] += self.grad[i];
    }
  });
}

Tensor spike(const Tensor& v, const LifConfig& cfg, bool smooth) {
  const double vth = cfg.v_threshold;
  const double w = cfg.surrogate_width;
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = v.values()[i] - vth;
    out[i] = smooth ? smooth_step(x, w) : (x >= 0.0 ? 1.0 : 0.0);
  }
  return autograd::make_op(v.shape(), std::move(out), {v}, [vth, w](Node& self) {
    auto* pv = self.parents[0].get();
    if (!pv->requires_grad) return;
    pv->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pv->grad[i] += self.grad[i] * surrogate_grad(pv->values[i] - vth, w);
  });
}

Tensor reset_mul(const Tensor& v, const Tensor& s) {
  if (v.shape() != s.shape()) throw ShapeError("reset_mul", v.shape(), s.shape());
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.values()[i] * (1.0 - s.values()[i]);
  return autograd::make_op(v.shape(), std::move(out), {v, s}, [](Node& self) {
    auto* pv = self.parents[0].get();
    auto* ps = self.parents[1].get();
    if (pv->requires_grad) {
      pv->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pv->grad[i] += self.grad[i] * (1.0 - ps->values[i]);
    }
    if (ps->requires_grad) {
      ps->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        ps->grad[i] -= self.grad[i] * pv->values[i];
    }
  });
}

LifStepResult lif_step(const Tensor& u, const Tensor& input_current, const LifConfig& cfg,
                       bool smooth) {
  cfg.validate();
  Tensor v = leaky_integrate(u, input_current, cfg.tau_leak);
  Tensor s = spike(v, cfg, smooth);
  Tensor u_next = reset_mul(v, s);
  return {u_next, s};
}

std::size_t SpikingNetwork::feature_dim() const {
  std::size_t h = arch.height, w = arch.width;
  for (const Block& b : blocks) {
    h /= b.pool;
    w /= b.pool;
  }
  return blocks.back().weight.shape()[0] * h * w;
}

std::size_t SpikingNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const Block& b : blocks) n += b.weight.numel() + b.bias.numel();
  return n + readout_weight.numel() + readout_bias.numel();
}

std::vector<Parameter> SpikingNetwork::parameters() {
  std::vector<Parameter> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    out.push_back({"block" + std::to_string(i) + ".weight", blocks[i].weight});
    out.push_back({"block" + std::to_string(i) + ".bias", blocks[i].bias});
  }
  out.push_back({"readout.weight", readout_weight});
  out.push_back({"readout.bias", readout_bias});
  return out;
}

std::uint64_t SpikingNetwork::parameter_version() const {
  std::uint64_t v = 0;
  for (const Block& b : blocks) v += b.weight.version() + b.bias.version();
  return v + readout_weight.version() + readout_bias.version();
}

namespace {

Tensor he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> vals(shape_numel(shape));
  for (double& v : vals) v = rng.uniform(-limit, limit);
  return Tensor::from_values(shape, std::move(vals), true);
}

}  // namespace

SpikingNetwork build_student(const StudentArch& arch, std::uint64_t seed) {
  arch.lif.validate();
  if (arch.channels.empty()) throw ConfigError("student needs at least one conv block");
  if (arch.timesteps == 0) throw ConfigError("timesteps must be >= 1");
  std::size_t h = arch.height, w = arch.width;
  for (std::size_t i = 0; i < arch.channels.size(); ++i) {
    if (h % 2 != 0 || w % 2 != 0 || h / 2 == 0 || w / 2 == 0)
      throw ConfigError("input " + std::to_string(arch.height) + "x" + std::to_string(arch.width) +
                        " collapses below 1x1 after " + std::to_string(arch.channels.size()) +
                        " poolings");
    h /= 2;
    w /= 2;
  }

  SpikingNetwork net;
  net.arch = arch;
  Rng rng(hash_seed(seed, 0x5719));
  std::size_t in_c = arch.in_channels;
  for (std::size_t oc : arch.channels) {
    SpikingNetwork::Block b;
    b.weight = he_uniform({oc, in_c, 3, 3}, in_c * 9, rng);
    b.bias = Tensor::zeros({oc}, true);
    b.pool = 2;
    net.blocks.push_back(std::move(b));
    in_c = oc;
  }
  const std::size_t feat = in_c * h * w;
  net.readout_weight = he_uniform({feat, arch.num_classes}, feat, rng);
  net.readout_bias = Tensor::zeros({arch.num_classes}, true);
  return net;
}

TemporalActivations forward_temporal(const SpikingNetwork& net, const std::vector<Tensor>& step_inputs,
                                     bool smooth) {
  if (step_inputs.size() != net.arch.timesteps)
    throw Error("forward_temporal: got " + std::to_string(step_inputs.size()) +
                " step inputs, network is configured for T=" + std::to_string(net.arch.timesteps));
  const std::size_t batch = step_inputs.front().shape()[0];

  TemporalActivations acts;
  std::vector<Tensor> membranes(net.blocks.size());
  for (std::size_t t = 0; t < step_inputs.size(); ++t) {
    Tensor x = step_inputs[t];
    if (x.shape()[0] != batch) throw ShapeError("forward_temporal", step_inputs.front().shape(), x.shape());
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
      const auto& block = net.blocks[b];
      Tensor current = conv2d(x, block.weight, block.bias, 1);
      if (t == 0) membranes[b] = Tensor::zeros(current.shape());
      LifStepResult r = lif_step(membranes[b], current, net.arch.lif, smooth);
      membranes[b] = r.u_next;
      x = avgpool2d(r.spikes, block.pool);
    }
    Tensor feat = reshape(x, {batch, net.feature_dim()});
    acts.features.push_back(feat);
    acts.logits.push_back(add_rowvec(matmul(feat, net.readout_weight), net.readout_bias));
  }
  return acts;
}

}  // namespace ckd
