#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ckd/grad_check.hpp"
#include "ckd/train.hpp"

namespace fs = std::filesystem;
using namespace ckd;

namespace {

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw ConfigError("empty list: '" + s + "'");
  return out;
}

PairedDataset obtain_dataset(const RunConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty()) return load_dataset(data_dir);
  return synth_paired_dataset(cfg.dataset);
}

void write_config_snapshot(const std::string& dir, const RunConfig& cfg) {
  std::ofstream out(fs::path(dir) / "config.json", std::ios::trunc);
  if (!out) throw Error("cannot write config snapshot in " + dir);
  out << cfg.to_json().dump(2) << "\n";
}

struct CommonOpts {
  std::string config_path;
  std::string data_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::size_t> epochs;
  std::optional<double> e_threshold;
  std::optional<double> k_switch;

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_json_file(config_path);
    if (seed) cfg.seed = *seed;
    if (mode) cfg.mode = run_mode_from_string(*mode);
    if (epochs) cfg.epochs = *epochs;
    if (e_threshold) cfg.e_threshold = *e_threshold;
    if (k_switch) cfg.k_switch = *k_switch;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_data = true) {
  cmd->add_option("--config", opts.config_path, "run config JSON (defaults when omitted)");
  if (with_data) cmd->add_option("--data", opts.data_dir, "dataset directory (synthesized from config when omitted)");
  cmd->add_option("--seed", opts.seed, "override config seed");
  cmd->add_option("--mode", opts.mode, "override mode: ckd | no_kd_baseline | dvs_only_baseline");
  cmd->add_option("--epochs", opts.epochs, "override epoch count");
  cmd->add_option("--e-threshold", opts.e_threshold, "override the phase-switch midpoint epoch");
  cmd->add_option("--k-switch", opts.k_switch, "override the phase-switch slope");
}

int run_synth_data(const SynthConfig& scfg, const std::string& out_dir) {
  PairedDataset ds = synth_paired_dataset(scfg);
  save_dataset(out_dir, ds);
  std::printf("wrote %zu train + %zu test pairs (%u x %u, %zu classes) to %s\n", ds.train.size(),
              ds.test.size(), ds.width, ds.height, ds.num_classes, out_dir.c_str());
  return 0;
}

int run_train_teacher(const CommonOpts& opts, const std::string& out_dir) {
  RunConfig cfg = opts.resolve();
  PairedDataset ds = obtain_dataset(cfg, opts.data_dir);
  fs::create_directories(out_dir);
  TeacherNet teacher = train_run_teacher(cfg, ds, cfg.seed);

  // report train-split accuracy of the frozen teacher
  std::size_t correct = 0;
  for (const PairedSample& s : ds.train) {
    Tensor logits = teacher_logits(teacher, v_channel_batch({&s.static_image}));
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.shape()[1]; ++c)
      if (logits.values()[c] > logits.values()[best]) best = c;
    if (static_cast<int>(best) == s.label) ++correct;
  }
  write_config_snapshot(out_dir, cfg);
  const std::string ckpt_path = (fs::path(out_dir) / "teacher.ckpt").string();
  save_checkpoint(ckpt_path, teacher.parameters(), teacher_meta(teacher));
  std::printf("teacher train accuracy: %.4f\n", static_cast<double>(correct) / ds.train.size());
  std::printf("saved %s\n", ckpt_path.c_str());
  return 0;
}

int run_train(const CommonOpts& opts, const std::string& teacher_path, const std::string& out_dir) {
  RunConfig cfg = opts.resolve();
  PairedDataset ds = obtain_dataset(cfg, opts.data_dir);
  fs::create_directories(out_dir);
  write_config_snapshot(out_dir, cfg);

  std::optional<TeacherNet> teacher;
  if (cfg.mode == RunMode::Ckd) {
    if (!teacher_path.empty()) {
      teacher = teacher_from_checkpoint(load_checkpoint(teacher_path));
    } else {
      teacher = train_run_teacher(cfg, ds, cfg.seed);
      save_checkpoint((fs::path(out_dir) / "teacher.ckpt").string(), teacher->parameters(),
                      teacher_meta(*teacher));
    }
  }

  TrainResult result = train_ckd(cfg, ds, teacher ? &*teacher : nullptr);
  write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), result.metrics);
  std::vector<Parameter> to_save = result.net.parameters();
  if (result.theta.defined()) to_save.push_back({"theta", result.theta});
  save_checkpoint((fs::path(out_dir) / "final.ckpt").string(), to_save, student_meta(result.net));

  std::printf("mode=%s student_params=%zu\n", to_string(cfg.mode).c_str(),
              result.net.parameter_count());
  std::printf("final test top1=%.10g\n", result.final_test_top1);
  std::printf("run artifacts in %s\n", out_dir.c_str());
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split) {
  SpikingNetwork net = student_from_checkpoint(load_checkpoint(ckpt_path));
  PairedDataset ds = load_dataset(data_dir);
  const std::vector<PairedSample>& samples = split == "train" ? ds.train : ds.test;
  const double top1 = evaluate(net, samples);
  std::printf("top1=%.10g\n", top1);
  return 0;
}

int run_sweep(const CommonOpts& opts, const std::string& e_th_list, const std::string& k_list,
              std::size_t num_seeds, std::size_t jobs, const std::string& out_dir) {
  RunConfig cfg = opts.resolve();
  PairedDataset ds = obtain_dataset(cfg, opts.data_dir);
  fs::create_directories(out_dir);
  write_config_snapshot(out_dir, cfg);
  std::vector<SweepCell> cells =
      sweep_phase_params(cfg, ds, parse_double_list(e_th_list), parse_double_list(k_list), num_seeds, jobs);
  const std::string csv = (fs::path(out_dir) / "sweep.csv").string();
  write_sweep_csv(csv, cells);
  for (const SweepCell& c : cells) {
    if (c.failed)
      std::printf("e_th=%-8g k=%-8g FAILED: %s\n", c.e_threshold, c.k_switch, c.error.c_str());
    else
      std::printf("e_th=%-8g k=%-8g mean_acc=%.4f\n", c.e_threshold, c.k_switch, c.mean_accuracy);
  }
  std::printf("wrote %s\n", csv.c_str());
  return 0;
}

int run_grad_check() {
  const auto results = run_grad_check_suite(10);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_error <= 1e-4;
    ok = ok && pass;
    std::printf("%-22s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_rel_error, pass ? "ok" : "FAIL");
  }
  if (!ok) {
    std::fprintf(stderr, "gradient check failed\n");
    return 3;
  }
  std::printf("all %zu gradient checks passed (threshold 1e-4)\n", results.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"cross knowledge distillation between a conventional ANN teacher and a spiking student"};
  app.require_subcommand(1);

  // synth-data
  SynthConfig scfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-data", "generate a paired RGB/event dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", scfg.num_classes, "number of shape classes (max 10)");
  synth->add_option("--per-class", scfg.train_per_class, "train samples per class");
  synth->add_option("--test-per-class", scfg.test_per_class, "test samples per class");
  synth->add_option("--height", scfg.height, "image height");
  synth->add_option("--width", scfg.width, "image width");
  synth->add_option("--t-span", scfg.t_span_us, "event stream duration in microseconds");
  synth->add_option("--noise", scfg.noise_events, "background noise events per stream");
  synth->add_option("--trajectory-steps", scfg.trajectory_steps, "micro-steps of the shape sweep");
  synth->add_option("--seed", scfg.seed, "dataset seed");

  // train-teacher
  CommonOpts teacher_opts;
  std::string teacher_out;
  auto* tt = app.add_subcommand("train-teacher", "train and freeze the ANN teacher");
  add_common(tt, teacher_opts);
  tt->add_option("--out", teacher_out, "output directory")->required();

  // train
  CommonOpts train_opts;
  std::string train_teacher_path, train_out;
  auto* tr = app.add_subcommand("train", "run CKD training or a baseline");
  add_common(tr, train_opts);
  tr->add_option("--teacher", train_teacher_path, "teacher checkpoint (trained on the fly when omitted)");
  tr->add_option("--out", train_out, "run directory")->required();

  // eval
  std::string eval_ckpt, eval_data, eval_split = "test";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on DVS data");
  ev->add_option("--checkpoint", eval_ckpt, "student checkpoint")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--split", eval_split, "train | test (default test)");

  // sweep
  CommonOpts sweep_opts;
  std::string sweep_eth = "9.5,19.5,29.5", sweep_k = "0.1,1,10", sweep_out;
  std::size_t sweep_seeds = 3, sweep_jobs = 1;
  auto* sw = app.add_subcommand("sweep", "grid over the phase-switch parameters");
  add_common(sw, sweep_opts);
  sw->add_option("--e-th", sweep_eth, "comma-separated e_threshold values");
  sw->add_option("--k", sweep_k, "comma-separated k values");
  sw->add_option("--seeds", sweep_seeds, "seeds per cell");
  sw->add_option("--jobs", sweep_jobs, "parallel training runs");
  sw->add_option("--out", sweep_out, "output directory")->required();

  // grad-check
  app.add_subcommand("grad-check", "finite-difference check of every op and the LIF surrogate path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth_data(scfg, synth_out);
    if (tt->parsed()) return run_train_teacher(teacher_opts, teacher_out);
    if (tr->parsed()) return run_train(train_opts, train_teacher_path, train_out);
    if (ev->parsed()) return run_eval(eval_ckpt, eval_data, eval_split);
    if (sw->parsed()) return run_sweep(sweep_opts, sweep_eth, sweep_k, sweep_seeds, sweep_jobs, sweep_out);
    return run_grad_check();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
