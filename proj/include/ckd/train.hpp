#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ckd/checkpoint.hpp"
#include "ckd/data.hpp"
#include "ckd/losses.hpp"
#include "ckd/schedule.hpp"
#include "ckd/spiking.hpp"
#include "ckd/teacher.hpp"

namespace ckd {

enum class RunMode { Ckd, NoKdBaseline, DvsOnlyBaseline };

std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& s);

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  std::size_t timesteps = 10;
  double lr = 1e-3;
  double alpha = 1.0;
  double beta = 1.0;
  double kd_temperature = 2.0;
  double k_switch = 1.0;
  double e_threshold = 19.5;
  LifConfig lif;
  std::vector<std::size_t> student_channels = {16, 32};
  std::vector<std::size_t> teacher_channels = {32, 64};
  std::size_t teacher_epochs = 20;
  SynthConfig dataset;
  RunMode mode = RunMode::Ckd;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);  // rejects unknown keys
  static RunConfig from_json_file(const std::string& path);
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double p_replace = 0.0;
  double gamma = 0.0;
  double loss_cls_s = 0.0;
  double loss_da = 0.0;
  double loss_kd = 0.0;
  double loss_cls_e = 0.0;
  double loss_all = 0.0;
  bool has_test = false;
  double test_top1 = 0.0;
};

std::string metrics_csv_header();
std::string format_metric(double v);  // fixed %.10g rendering
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct TrainResult {
  SpikingNetwork net;
  Tensor theta;
  std::vector<MetricsRow> metrics;
  double final_test_top1 = 0.0;
};

// Trains the teacher of this run on the train split's static V-channel
// images, seeded independently of the student.
TeacherNet train_run_teacher(const RunConfig& cfg, const PairedDataset& ds, std::uint64_t seed);

// The full distillation loop. teacher may be null except in Ckd mode, where
// it must be frozen.
TrainResult train_ckd(const RunConfig& cfg, const PairedDataset& ds, const TeacherNet* teacher);

// Top-1 accuracy from time-averaged logits on event-derived frames only.
double evaluate(const SpikingNetwork& net, const std::vector<PairedSample>& test_set);

struct SweepCell {
  double e_threshold = 0.0;
  double k_switch = 0.0;
  std::vector<double> accuracies;  // one per seed
  double mean_accuracy = 0.0;
  bool failed = false;
  std::string error;
};

// Runs train_ckd per (e_th, k) cell over `num_seeds` seeds derived from the
// base config's seed. Per-cell failures are recorded and do not stop the
// remaining cells. Rows come back sorted by (e_th, k).
std::vector<SweepCell> sweep_phase_params(const RunConfig& base, const PairedDataset& ds,
                                          std::vector<double> e_thresholds, std::vector<double> ks,
                                          std::size_t num_seeds, std::size_t jobs = 1);

void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells);

// Checkpoint glue: enough metadata to rebuild the net before loading values.
std::map<std::string, std::string> student_meta(const SpikingNetwork& net);
SpikingNetwork student_from_checkpoint(const Checkpoint& ckpt);
std::map<std::string, std::string> teacher_meta(const TeacherNet& net);
TeacherNet teacher_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ckd
