#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "ckd/data.hpp"
#include "ckd/ops.hpp"
#include "ckd/teacher.hpp"

using namespace ckd;

namespace {

TeacherArch small_arch() {
  TeacherArch arch;
  arch.height = arch.width = 16;
  arch.channels = {8, 16};
  arch.num_classes = 3;
  return arch;
}

// V-channel image tensors + labels from a small synthetic set.
std::pair<std::vector<Tensor>, std::vector<int>> small_dataset() {
  SynthConfig cfg;
  cfg.num_classes = 3;
  cfg.train_per_class = 8;
  cfg.test_per_class = 1;
  cfg.height = cfg.width = 16;
  cfg.noise_events = 20;
  cfg.seed = 3;
  PairedDataset ds = synth_paired_dataset(cfg);
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (const auto& s : ds.train) {
    images.push_back(reshape(v_channel_batch({&s.static_image}), {1, 16, 16}));
    labels.push_back(s.label);
  }
  return {images, labels};
}

std::vector<double> flat_params(TeacherNet& net) {
  std::vector<double> out;
  for (const Parameter& p : net.parameters())
    out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

}  // namespace

TEST_CASE("epochs=0 returns the frozen initialization") {
  auto [images, labels] = small_dataset();
  TeacherTrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  TeacherNet trained = train_teacher(images, labels, small_arch(), cfg);
  TeacherNet init = build_teacher(small_arch(), 5);
  CHECK(trained.frozen);
  CHECK(flat_params(trained) == flat_params(init));
}

TEST_CASE("training is deterministic per seed") {
  auto [images, labels] = small_dataset();
  TeacherTrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 9;
  TeacherNet a = train_teacher(images, labels, small_arch(), cfg);
  TeacherNet b = train_teacher(images, labels, small_arch(), cfg);
  CHECK(flat_params(a) == flat_params(b));
}

TEST_CASE("the synthetic 10-class shape task is learnable to 95% in 20 epochs") {
  SynthConfig dcfg;
  dcfg.num_classes = 10;
  dcfg.train_per_class = 6;
  dcfg.test_per_class = 1;
  dcfg.height = dcfg.width = 24;
  dcfg.seed = 4;
  PairedDataset ds = synth_paired_dataset(dcfg);
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (const auto& s : ds.train) {
    images.push_back(reshape(v_channel_batch({&s.static_image}), {1, 24, 24}));
    labels.push_back(s.label);
  }

  TeacherArch arch;
  arch.height = arch.width = 24;
  arch.channels = {16, 32};
  arch.num_classes = 10;
  TeacherTrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.seed = 1;
  TeacherNet net = train_teacher(images, labels, arch, cfg);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tensor logits = teacher_logits(net, reshape(images[i], {1, 1, 24, 24}));
    std::size_t best = 0;
    for (std::size_t c = 1; c < 10; ++c)
      if (logits.values()[c] > logits.values()[best]) best = c;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / images.size() >= 0.95);
}

TEST_CASE("teacher_logits contract") {
  auto [images, labels] = small_dataset();
  TeacherNet net = build_teacher(small_arch(), 2);

  SUBCASE("unfrozen nets are refused") {
    CHECK_THROWS_AS(teacher_logits(net, reshape(images[0], {1, 1, 16, 16})), Error);
  }

  net.freeze();
  SUBCASE("identical inputs give identical rows, shape batch x classes") {
    std::vector<double> two;
    two.insert(two.end(), images[0].values().begin(), images[0].values().end());
    two.insert(two.end(), images[0].values().begin(), images[0].values().end());
    Tensor logits = teacher_logits(net, Tensor::from_values({2, 1, 16, 16}, two));
    CHECK(logits.shape() == Shape{2, 3});
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(logits.values()[c] == logits.values()[3 + c]);
  }
  SUBCASE("forward is deterministic") {
    Tensor x = reshape(images[1], {1, 1, 16, 16});
    Tensor l1 = teacher_logits(net, x);
    Tensor l2 = teacher_logits(net, x);
    CHECK(std::memcmp(l1.values().data(), l2.values().data(), l1.numel() * sizeof(double)) == 0);
  }
  SUBCASE("no gradient path exists into a frozen teacher") {
    Tensor x = reshape(images[2], {1, 1, 16, 16});
    Tensor logits = teacher_logits(net, x);
    CHECK_FALSE(logits.requires_grad());
    // and its parameters collect nothing when a downstream loss is built
    Tensor student_like = Tensor::from_values({1, 3}, {0.1, 0.2, 0.3}, true);
    backward(sum(mul(add(logits, student_like), add(logits, student_like))));
    for (const Parameter& p : net.parameters()) CHECK_FALSE(p.tensor.has_grad());
  }
}

TEST_CASE("empty and malformed teacher datasets are rejected") {
  TeacherTrainConfig cfg;
  CHECK_THROWS_AS(train_teacher({}, {}, small_arch(), cfg), Error);
  auto [images, labels] = small_dataset();
  labels[0] = 7;  // outside num_classes
  CHECK_THROWS_AS(train_teacher(images, labels, small_arch(), cfg), Error);
}
