#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ckd/train.hpp"

using namespace ckd;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.seed = 1;
  cfg.epochs = 2;
  cfg.batch_size = 6;
  cfg.timesteps = 3;
  cfg.student_channels = {6, 12};
  cfg.teacher_channels = {8, 16};
  cfg.teacher_epochs = 3;
  cfg.e_threshold = 0.5;
  cfg.dataset.num_classes = 4;
  cfg.dataset.train_per_class = 6;
  cfg.dataset.test_per_class = 3;
  cfg.dataset.height = cfg.dataset.width = 16;
  cfg.dataset.noise_events = 30;
  cfg.dataset.seed = 11;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config JSON round-trips and rejects unknown keys") {
  RunConfig cfg = tiny_config();
  cfg.mode = RunMode::NoKdBaseline;
  const auto j = cfg.to_json();
  RunConfig back = RunConfig::from_json(j);
  CHECK(back.to_json().dump() == j.dump());

  auto bad = j;
  bad["learning_rate"] = 0.1;  // the key is `lr`
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);

  auto bad2 = j;
  bad2["dataset"]["classes"] = 3;
  CHECK_THROWS_AS(RunConfig::from_json(bad2), ConfigError);

  auto bad3 = j;
  bad3["mode"] = "distill_hard";
  CHECK_THROWS_AS(RunConfig::from_json(bad3), ConfigError);

  auto bad4 = j;
  bad4["batch_size"] = 1;  // CKA needs two rows
  CHECK_THROWS_AS(RunConfig::from_json(bad4), ConfigError);
}

TEST_CASE("metrics CSV has the fixed header and row discipline") {
  CHECK(metrics_csv_header() ==
        "epoch,batch,p_replace,gamma,loss_cls_s,loss_da,loss_kd,loss_cls_e,loss_all,test_top1");

  RunConfig cfg = tiny_config();
  cfg.mode = RunMode::DvsOnlyBaseline;
  PairedDataset ds = synth_paired_dataset(cfg.dataset);
  TrainResult r = train_ckd(cfg, ds, nullptr);

  const std::size_t bpe = ds.train.size() / cfg.batch_size;
  REQUIRE(r.metrics.size() == cfg.epochs * bpe);
  for (std::size_t i = 0; i < r.metrics.size(); ++i) {
    const bool epoch_end = (i + 1) % bpe == 0;
    CHECK(r.metrics[i].has_test == epoch_end);
  }

  TempDir tmp("ckd_metrics_test");
  write_metrics_csv((tmp.path / "metrics.csv").string(), r.metrics);
  const std::string text = slurp(tmp.path / "metrics.csv");
  CHECK(text.rfind(metrics_csv_header() + "\n", 0) == 0);
  // a non-boundary row ends with the empty test column
  const auto second_row_end = text.find('\n', text.find('\n') + 1);
  CHECK(text[second_row_end - 1] == ',');
}

TEST_CASE("dvs-only baseline trains only the dynamic stream") {
  RunConfig cfg = tiny_config();
  cfg.mode = RunMode::DvsOnlyBaseline;
  PairedDataset ds = synth_paired_dataset(cfg.dataset);
  TrainResult r = train_ckd(cfg, ds, nullptr);
  for (const MetricsRow& row : r.metrics) {
    CHECK(row.loss_cls_s == 0.0);
    CHECK(row.loss_da == 0.0);
    CHECK(row.loss_kd == 0.0);
    CHECK(row.loss_cls_e > 0.0);
    CHECK(row.loss_all == row.loss_cls_e);
    CHECK(row.gamma == 0.0);
  }
  CHECK_FALSE(r.theta.defined());
}

TEST_CASE("schedule columns are monotone and end at the cubic limit") {
  RunConfig cfg = tiny_config();
  cfg.mode = RunMode::NoKdBaseline;
  PairedDataset ds = synth_paired_dataset(cfg.dataset);
  TrainResult r = train_ckd(cfg, ds, nullptr);

  double prev_p = -1.0;
  for (const MetricsRow& row : r.metrics) {
    CHECK(row.p_replace >= prev_p);
    prev_p = row.p_replace;
    CHECK(row.gamma == 0.0);  // forced off outside ckd mode
    CHECK(row.loss_kd == 0.0);
  }
  const std::size_t total = cfg.epochs * (ds.train.size() / cfg.batch_size);
  const double last = static_cast<double>(total - 1) / static_cast<double>(total);
  CHECK(r.metrics.back().p_replace == doctest::Approx(last * last * last).epsilon(1e-15));
}

TEST_CASE("full ckd mode trains and logs a non-increasing gamma") {
  RunConfig cfg = tiny_config();
  PairedDataset ds = synth_paired_dataset(cfg.dataset);
  TeacherNet teacher = train_run_teacher(cfg, ds, cfg.seed);
  TrainResult r = train_ckd(cfg, ds, &teacher);

  double prev_gamma = 2.0;
  for (const MetricsRow& row : r.metrics) {
    CHECK(row.gamma <= prev_gamma);
    prev_gamma = row.gamma;
  }
  CHECK(r.theta.defined());
  CHECK(r.final_test_top1 >= 0.0);
  CHECK(r.final_test_top1 <= 1.0);

  SUBCASE("teacher checkpoint bytes are untouched by distillation") {
    TempDir tmp("ckd_teacher_bytes");
    const std::string before = (tmp.path / "before.ckpt").string();
    const std::string after = (tmp.path / "after.ckpt").string();
    save_checkpoint(before, teacher.parameters(), teacher_meta(teacher));
    TrainResult again = train_ckd(cfg, ds, &teacher);
    save_checkpoint(after, teacher.parameters(), teacher_meta(teacher));
    CHECK(slurp(before) == slurp(after));
  }
  SUBCASE("ckd mode refuses missing or unfrozen teachers") {
    CHECK_THROWS_AS(train_ckd(cfg, ds, nullptr), ConfigError);
    TeacherNet raw = build_teacher(teacher.arch, 3);
    CHECK_THROWS_AS(train_ckd(cfg, ds, &raw), Error);
  }
}

TEST_CASE("identical config and seed reproduce the metrics bytes") {
  RunConfig cfg = tiny_config();
  PairedDataset ds = synth_paired_dataset(cfg.dataset);
  TeacherNet teacher = train_run_teacher(cfg, ds, cfg.seed);

  TempDir tmp("ckd_determinism");
  TrainResult a = train_ckd(cfg, ds, &teacher);
  write_metrics_csv((tmp.path / "a.csv").string(), a.metrics);
  TrainResult b = train_ckd(cfg, ds, &teacher);
  write_metrics_csv((tmp.path / "b.csv").string(), b.metrics);
  CHECK(slurp(tmp.path / "a.csv") == slurp(tmp.path / "b.csv"));

  RunConfig other = cfg;
  other.seed = 2;
  TrainResult c = train_ckd(other, ds, &teacher);
  write_metrics_csv((tmp.path / "c.csv").string(), c.metrics);
  CHECK(slurp(tmp.path / "a.csv") != slurp(tmp.path / "c.csv"));
}

TEST_CASE("evaluate") {
  RunConfig cfg = tiny_config();
  PairedDataset ds = synth_paired_dataset(cfg.dataset);

  SUBCASE("an untrained net sits near chance level") {
    StudentArch arch;
    arch.height = arch.width = 16;
    arch.channels = {6, 12};
    arch.timesteps = 3;
    arch.num_classes = 4;
    SpikingNetwork net = build_student(arch, 99);
    const double acc = evaluate(net, ds.test);
    CHECK(acc >= 0.0);
    CHECK(acc <= 0.6);  // 12 samples, 4 classes: far from a trained model
  }
  SUBCASE("accuracy is invariant under test-set shuffling") {
    cfg.mode = RunMode::DvsOnlyBaseline;
    TrainResult r = train_ckd(cfg, ds, nullptr);
    std::vector<PairedSample> shuffled = ds.test;
    std::rotate(shuffled.begin(), shuffled.begin() + 5, shuffled.end());
    CHECK(evaluate(r.net, ds.test) == doctest::Approx(evaluate(r.net, shuffled)));
    // single-sample evaluations agree with the batch result
    double sum = 0.0;
    for (const PairedSample& s : ds.test) {
      const double one = evaluate(r.net, {s});
      CHECK((one == 0.0 || one == 1.0));
      sum += one;
    }
    CHECK(sum / static_cast<double>(ds.test.size()) == doctest::Approx(evaluate(r.net, ds.test)));
  }
  SUBCASE("empty test set is an error") {
    StudentArch arch;
    arch.height = arch.width = 16;
    arch.channels = {6};
    arch.timesteps = 2;
    SpikingNetwork net = build_student(arch, 1);
    CHECK_THROWS_AS(evaluate(net, {}), Error);
  }
}

TEST_CASE("student checkpoints round-trip through rebuild") {
  RunConfig cfg = tiny_config();
  cfg.mode = RunMode::NoKdBaseline;
  PairedDataset ds = synth_paired_dataset(cfg.dataset);
  TrainResult r = train_ckd(cfg, ds, nullptr);

  TempDir tmp("ckd_student_ckpt");
  const std::string path = (tmp.path / "final.ckpt").string();
  save_checkpoint(path, r.net.parameters(), student_meta(r.net));
  SpikingNetwork back = student_from_checkpoint(load_checkpoint(path));
  CHECK(back.arch.timesteps == cfg.timesteps);
  CHECK(evaluate(back, ds.test) == doctest::Approx(evaluate(r.net, ds.test)));
}

TEST_CASE("sweep runs every cell and sorts the grid") {
  RunConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.teacher_epochs = 2;
  PairedDataset ds = synth_paired_dataset(cfg.dataset);

  auto cells = sweep_phase_params(cfg, ds, {1.5, 0.5}, {2.0, 0.5}, 1, 2);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].e_threshold == 0.5);
  CHECK(cells[0].k_switch == 0.5);
  CHECK(cells[1].k_switch == 2.0);
  CHECK(cells[2].e_threshold == 1.5);
  for (const auto& c : cells) {
    CHECK_FALSE(c.failed);
    CHECK(c.accuracies.size() == 1);
    CHECK(c.mean_accuracy >= 0.0);
  }

  SUBCASE("a 1x1 grid equals a direct run") {
    auto single = sweep_phase_params(cfg, ds, {0.5}, {2.0}, 1, 1);
    RunConfig direct = cfg;
    direct.e_threshold = 0.5;
    direct.k_switch = 2.0;
    TeacherNet teacher = train_run_teacher(direct, ds, direct.seed);
    TrainResult r = train_ckd(direct, ds, &teacher);
    CHECK(single[0].mean_accuracy == doctest::Approx(r.final_test_top1));
  }
  SUBCASE("failures are recorded without stopping the grid") {
    RunConfig bad = cfg;
    bad.batch_size = 1000;  // larger than the train split
    auto cells2 = sweep_phase_params(bad, ds, {0.5}, {1.0}, 1, 1);
    REQUIRE(cells2.size() == 1);
    CHECK(cells2[0].failed);
    CHECK_FALSE(cells2[0].error.empty());
  }
  SUBCASE("csv output marks status") {
    TempDir tmp("ckd_sweep_csv");
    write_sweep_csv((tmp.path / "sweep.csv").string(), cells);
    const std::string text = slurp(tmp.path / "sweep.csv");
    CHECK(text.rfind("e_threshold,k,log10_k,acc_seed0,mean_acc,status", 0) == 0);
    CHECK(text.find(",ok") != std::string::npos);
  }
}
