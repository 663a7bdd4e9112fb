#include "ckd/teacher.hpp"

#include <cmath>
#include <numeric>

#include "ckd/losses.hpp"
#include "ckd/ops.hpp"
#include "ckd/optim.hpp"
#include "ckd/rng.hpp"

namespace ckd {

std::size_t TeacherNet::feature_dim() const {
  std::size_t h = arch.height, w = arch.width;
  for (const Block& b : blocks) {
    h /= b.pool;
    w /= b.pool;
  }
  return blocks.back().weight.shape()[0] * h * w;
}

std::vector<Parameter> TeacherNet::parameters() {
  std::vector<Parameter> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    out.push_back({"block" + std::to_string(i) + ".weight", blocks[i].weight});
    out.push_back({"block" + std::to_string(i) + ".bias", blocks[i].bias});
  }
  out.push_back({"readout.weight", readout_weight});
  out.push_back({"readout.bias", readout_bias});
  return out;
}

void TeacherNet::freeze() {
  for (Parameter& p : parameters()) p.tensor.set_requires_grad(false);
  frozen = true;
}

namespace {

Tensor he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> vals(shape_numel(shape));
  for (double& v : vals) v = rng.uniform(-limit, limit);
  return Tensor::from_values(shape, std::move(vals), true);
}

}  // namespace

TeacherNet build_teacher(const TeacherArch& arch, std::uint64_t seed) {
  if (arch.channels.empty()) throw ConfigError("teacher needs at least one conv block");
  std::size_t h = arch.height, w = arch.width;
  for (std::size_t i = 0; i < arch.channels.size(); ++i) {
    if (h % 2 != 0 || w % 2 != 0 || h / 2 == 0 || w / 2 == 0)
      throw ConfigError("teacher input collapses below 1x1 after pooling");
    h /= 2;
    w /= 2;
  }
  TeacherNet net;
  net.arch = arch;
  Rng rng(hash_seed(seed, 0x7eac));
  std::size_t in_c = arch.in_channels;
  for (std::size_t oc : arch.channels) {
    TeacherNet::Block b;
    b.weight = he_uniform({oc, in_c, 3, 3}, in_c * 9, rng);
    b.bias = Tensor::zeros({oc}, true);
    net.blocks.push_back(std::move(b));
    in_c = oc;
  }
  const std::size_t feat = in_c * h * w;
  net.readout_weight = he_uniform({feat, arch.num_classes}, feat, rng);
  net.readout_bias = Tensor::zeros({arch.num_classes}, true);
  return net;
}

Tensor teacher_forward(const TeacherNet& net, const Tensor& batch) {
  if (batch.shape().size() != 4 || batch.shape()[1] != net.arch.in_channels)
    throw ShapeError("teacher_forward", batch.shape(),
                     {0, net.arch.in_channels, net.arch.height, net.arch.width});
  Tensor x = batch;
  for (const auto& block : net.blocks) x = maxpool2d(relu(conv2d(x, block.weight, block.bias, 1)), block.pool);
  Tensor feat = reshape(x, {batch.shape()[0], net.feature_dim()});
  return add_rowvec(matmul(feat, net.readout_weight), net.readout_bias);
}

Tensor teacher_logits(const TeacherNet& net, const Tensor& batch) {
  if (!net.frozen) throw Error("teacher_logits requires a frozen teacher");
  return teacher_forward(net, batch);
}

TeacherNet train_teacher(const std::vector<Tensor>& images, const std::vector<int>& labels,
                         const TeacherArch& arch, const TeacherTrainConfig& cfg) {
  if (images.empty()) throw Error("train_teacher: empty dataset");
  if (images.size() != labels.size()) throw Error("train_teacher: image/label count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= arch.num_classes)
      throw Error("train_teacher: label " + std::to_string(y) + " out of range");

  TeacherNet net = build_teacher(arch, cfg.seed);
  Adam opt(net.parameters(), {.lr = cfg.lr});
  Rng rng(hash_seed(cfg.seed, 0x7ea1));

  const std::size_t m = images.size();
  const std::size_t pixels = arch.in_channels * arch.height * arch.width;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = m; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, m - start);
      std::vector<double> buf(bs * pixels);
      std::vector<int> ybuf(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const Tensor& img = images[order[start + i]];
        if (img.numel() != pixels) throw ShapeError("train_teacher", img.shape(), {1, arch.height, arch.width});
        std::copy(img.values().begin(), img.values().end(), buf.begin() + i * pixels);
        ybuf[i] = labels[order[start + i]];
      }
      Tensor x = Tensor::from_values({bs, arch.in_channels, arch.height, arch.width}, std::move(buf));
      Tensor logits = teacher_forward(net, x);
      Tensor loss = tet_loss({logits}, ybuf);  // single-step CE
      backward(loss);
      opt.step();
      opt.zero_grad();
    }
  }
  net.freeze();
  return net;
}

}  // namespace ckd
