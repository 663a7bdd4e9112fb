#include "ckd/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "ckd/optim.hpp"

namespace ckd {

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Ckd: return "ckd";
    case RunMode::NoKdBaseline: return "no_kd_baseline";
    case RunMode::DvsOnlyBaseline: return "dvs_only_baseline";
  }
  throw Error("bad RunMode");
}

RunMode run_mode_from_string(const std::string& s) {
  if (s == "ckd") return RunMode::Ckd;
  if (s == "no_kd_baseline") return RunMode::NoKdBaseline;
  if (s == "dvs_only_baseline") return RunMode::DvsOnlyBaseline;
  throw ConfigError("unknown mode '" + s + "' (expected ckd | no_kd_baseline | dvs_only_baseline)");
}

void RunConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (CKA centering needs 2 rows)");
  if (timesteps == 0) throw ConfigError("timesteps must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(kd_temperature > 0.0)) throw ConfigError("kd_temperature must be > 0");
  if (!(k_switch > 0.0)) throw ConfigError("k_switch must be > 0");
  if (student_channels.empty() || teacher_channels.empty())
    throw ConfigError("channel lists must be non-empty");
  lif.validate();
}

namespace {

template <typename T>
T get_scalar(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for config key '" + key + "'");
  }
}

}  // namespace

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["timesteps"] = timesteps;
  j["lr"] = lr;
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["kd_temperature"] = kd_temperature;
  j["k_switch"] = k_switch;
  j["e_threshold"] = e_threshold;
  j["lif"] = {{"tau_leak", lif.tau_leak},
              {"v_threshold", lif.v_threshold},
              {"surrogate_width", lif.surrogate_width}};
  j["student_channels"] = student_channels;
  j["teacher_channels"] = teacher_channels;
  j["teacher_epochs"] = teacher_epochs;
  j["dataset"] = {{"num_classes", dataset.num_classes},
                  {"train_per_class", dataset.train_per_class},
                  {"test_per_class", dataset.test_per_class},
                  {"height", dataset.height},
                  {"width", dataset.width},
                  {"t_span_us", dataset.t_span_us},
                  {"noise_events", dataset.noise_events},
                  {"trajectory_steps", dataset.trajectory_steps},
                  {"seed", dataset.seed}};
  j["mode"] = to_string(mode);
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") cfg.seed = get_scalar<std::uint64_t>(v, key);
    else if (key == "epochs") cfg.epochs = get_scalar<std::size_t>(v, key);
    else if (key == "batch_size") cfg.batch_size = get_scalar<std::size_t>(v, key);
    else if (key == "timesteps") cfg.timesteps = get_scalar<std::size_t>(v, key);
    else if (key == "lr") cfg.lr = get_scalar<double>(v, key);
    else if (key == "alpha") cfg.alpha = get_scalar<double>(v, key);
    else if (key == "beta") cfg.beta = get_scalar<double>(v, key);
    else if (key == "kd_temperature") cfg.kd_temperature = get_scalar<double>(v, key);
    else if (key == "k_switch") cfg.k_switch = get_scalar<double>(v, key);
    else if (key == "e_threshold") cfg.e_threshold = get_scalar<double>(v, key);
    else if (key == "lif") {
      if (!v.is_object()) throw ConfigError("'lif' must be an object");
      for (const auto& [lk, lv] : v.items()) {
        if (lk == "tau_leak") cfg.lif.tau_leak = get_scalar<double>(lv, lk);
        else if (lk == "v_threshold") cfg.lif.v_threshold = get_scalar<double>(lv, lk);
        else if (lk == "surrogate_width") cfg.lif.surrogate_width = get_scalar<double>(lv, lk);
        else throw ConfigError("unknown config key 'lif." + lk + "'");
      }
    } else if (key == "student_channels") cfg.student_channels = get_scalar<std::vector<std::size_t>>(v, key);
    else if (key == "teacher_channels") cfg.teacher_channels = get_scalar<std::vector<std::size_t>>(v, key);
    else if (key == "teacher_epochs") cfg.teacher_epochs = get_scalar<std::size_t>(v, key);
    else if (key == "dataset") {
      if (!v.is_object()) throw ConfigError("'dataset' must be an object");
      for (const auto& [dk, dv] : v.items()) {
        if (dk == "num_classes") cfg.dataset.num_classes = get_scalar<std::size_t>(dv, dk);
        else if (dk == "train_per_class") cfg.dataset.train_per_class = get_scalar<std::size_t>(dv, dk);
        else if (dk == "test_per_class") cfg.dataset.test_per_class = get_scalar<std::size_t>(dv, dk);
        else if (dk == "height") cfg.dataset.height = get_scalar<std::size_t>(dv, dk);
        else if (dk == "width") cfg.dataset.width = get_scalar<std::size_t>(dv, dk);
        else if (dk == "t_span_us") cfg.dataset.t_span_us = get_scalar<std::uint64_t>(dv, dk);
        else if (dk == "noise_events") cfg.dataset.noise_events = get_scalar<std::size_t>(dv, dk);
        else if (dk == "trajectory_steps") cfg.dataset.trajectory_steps = get_scalar<std::size_t>(dv, dk);
        else if (dk == "seed") cfg.dataset.seed = get_scalar<std::uint64_t>(dv, dk);
        else throw ConfigError("unknown config key 'dataset." + dk + "'");
      }
    } else if (key == "mode") cfg.mode = run_mode_from_string(get_scalar<std::string>(v, key));
    else throw ConfigError("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
  return from_json(j);
}

std::string metrics_csv_header() {
  return "epoch,batch,p_replace,gamma,loss_cls_s,loss_da,loss_kd,loss_cls_e,loss_all,test_top1";
}

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write metrics: " + path);
  out << metrics_csv_header() << "\n";
  for (const MetricsRow& r : rows) {
    out << r.epoch << "," << r.batch << "," << format_metric(r.p_replace) << ","
        << format_metric(r.gamma) << "," << format_metric(r.loss_cls_s) << ","
        << format_metric(r.loss_da) << "," << format_metric(r.loss_kd) << ","
        << format_metric(r.loss_cls_e) << "," << format_metric(r.loss_all) << ",";
    if (r.has_test) out << format_metric(r.test_top1);
    out << "\n";
  }
}

namespace {

StudentArch student_arch_for(const RunConfig& cfg, const PairedDataset& ds) {
  StudentArch arch;
  arch.in_channels = 2;
  arch.height = ds.height;
  arch.width = ds.width;
  arch.channels = cfg.student_channels;
  arch.timesteps = cfg.timesteps;
  arch.num_classes = ds.num_classes;
  arch.lif = cfg.lif;
  return arch;
}

std::vector<FrameTensor> dynamic_frames(const std::vector<PairedSample>& pairs, std::size_t timesteps) {
  std::vector<FrameTensor> out;
  out.reserve(pairs.size());
  for (const PairedSample& p : pairs)
    out.push_back(integrate_frames(p.event_stream, timesteps, p.event_stream.height, p.event_stream.width));
  return out;
}

Tensor time_mean_logits(const std::vector<Tensor>& logits) {
  Tensor acc;
  for (const Tensor& lt : logits) acc = acc.defined() ? add(acc, lt) : lt;
  return scale(acc, 1.0 / static_cast<double>(logits.size()));
}

}  // namespace

TeacherNet train_run_teacher(const RunConfig& cfg, const PairedDataset& ds, std::uint64_t seed) {
  TeacherArch arch;
  arch.in_channels = 1;
  arch.height = ds.height;
  arch.width = ds.width;
  arch.channels = cfg.teacher_channels;
  arch.num_classes = ds.num_classes;

  std::vector<Tensor> images;
  std::vector<int> labels;
  images.reserve(ds.train.size());
  for (const PairedSample& s : ds.train) {
    images.push_back(reshape(v_channel_batch({&s.static_image}), {1ul, ds.height, ds.width}));
    labels.push_back(s.label);
  }
  TeacherTrainConfig tcfg;
  tcfg.epochs = cfg.teacher_epochs;
  tcfg.batch_size = cfg.batch_size;
  tcfg.lr = cfg.lr;
  tcfg.seed = hash_seed(seed, 0x7e11);
  return train_teacher(images, labels, arch, tcfg);
}

TrainResult train_ckd(const RunConfig& cfg, const PairedDataset& ds, const TeacherNet* teacher) {
  cfg.validate();
  if (ds.train.empty()) throw Error("train_ckd: empty train split");
  if (cfg.mode == RunMode::Ckd) {
    if (!teacher) throw ConfigError("ckd mode needs a teacher");
    if (!teacher->frozen) throw Error("refusing to distill from an unfrozen teacher");
  }
  const std::size_t bpe = ds.train.size() / cfg.batch_size;
  if (bpe == 0)
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds train split of " +
                      std::to_string(ds.train.size()));
  const std::size_t total_batches = cfg.epochs * bpe;

  TrainResult result;
  result.net = build_student(student_arch_for(cfg, ds), cfg.seed);
  const bool two_stream = cfg.mode != RunMode::DvsOnlyBaseline;

  CkdLossConfig lcfg;
  lcfg.alpha = cfg.alpha;
  lcfg.beta = cfg.beta;
  lcfg.kd_temperature = cfg.kd_temperature;
  lcfg.k_switch = cfg.k_switch;
  lcfg.e_threshold = cfg.e_threshold;

  std::vector<Parameter> params = result.net.parameters();
  if (two_stream) {
    result.theta = Tensor::zeros({cfg.timesteps}, true);  // sigma(0) = 0.5
    lcfg.theta = result.theta;
    params.push_back({"theta", result.theta});
  }
  lcfg.validate(cfg.timesteps);
  Adam opt(params, {.lr = cfg.lr});

  const DatasetIndex static_index = build_class_index(ds.train, ds.num_classes);
  Rng rng(hash_seed(cfg.seed, 0x10af));
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    for (std::size_t b = 0; b < bpe; ++b) {
      ReplacementState state{b, epoch, bpe, total_batches};
      const double p = replace_probability(state);
      const double gamma =
          cfg.mode == RunMode::Ckd ? phase_switch(static_cast<double>(epoch), cfg.k_switch, cfg.e_threshold)
                                   : 0.0;

      std::vector<PairedSample> pairs;
      pairs.reserve(cfg.batch_size);
      for (std::size_t i = 0; i < cfg.batch_size; ++i)
        pairs.push_back(pair_by_category(ds.train, order[b * cfg.batch_size + i], static_index, rng));
      std::vector<int> labels;
      for (const PairedSample& pr : pairs) labels.push_back(pr.label);

      MetricsRow row;
      row.epoch = epoch;
      row.batch = b;
      row.p_replace = p;
      row.gamma = gamma;

      Tensor loss_all;
      if (!two_stream) {
        TemporalActivations acts_d = forward_temporal(result.net, to_step_tensors(dynamic_frames(pairs, cfg.timesteps)));
        Tensor cls_e = tet_loss(acts_d.logits, labels);
        loss_all = cls_e;
        row.loss_cls_e = cls_e.value();
      } else {
        HybridBatch hybrid = apply_replacement(pairs, cfg.timesteps, p, rng);
        const std::uint64_t version_before = result.net.parameter_version();
        TemporalActivations acts_h = forward_temporal(result.net, to_step_tensors(hybrid.inputs));
        TemporalActivations acts_d = forward_temporal(result.net, to_step_tensors(dynamic_frames(pairs, cfg.timesteps)));
        if (result.net.parameter_version() != version_before)
          throw Error("weight sharing violated: parameters changed between the two stream forwards");

        Tensor cls_s = tet_loss(acts_h.logits, labels);
        Tensor cls_e = tet_loss(acts_d.logits, labels);
        Tensor da = domain_alignment_loss(acts_h, acts_d, result.theta, cls_e);
        Tensor kd;
        if (cfg.mode == RunMode::Ckd) {
          // The teacher always sees the pair's original static image, even
          // for slots the curriculum replaced with event frames.
          std::vector<const Image*> statics;
          for (const PairedSample& pr : pairs) statics.push_back(&pr.static_image);
          Tensor t_logits = teacher_logits(*teacher, v_channel_batch(statics));
          kd = kd_loss(t_logits, time_mean_logits(acts_h.logits), cfg.kd_temperature);
          row.loss_kd = kd.value();
        }
        Tensor loss_s = static_stream_loss(cls_s, da, kd, gamma, lcfg);
        loss_all = total_loss(loss_s, cls_e);
        row.loss_cls_s = cls_s.value();
        row.loss_da = da.value();
        row.loss_cls_e = cls_e.value();
      }
      row.loss_all = loss_all.value();
      if (!std::isfinite(row.loss_all))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(b));

      backward(loss_all);
      opt.step();
      opt.zero_grad();
      result.metrics.push_back(row);
    }

    if (!ds.test.empty()) {
      const double top1 = evaluate(result.net, ds.test);
      result.metrics.back().has_test = true;
      result.metrics.back().test_top1 = top1;
      result.final_test_top1 = top1;
    }
  }
  return result;
}

double evaluate(const SpikingNetwork& net, const std::vector<PairedSample>& test_set) {
  if (test_set.empty()) throw Error("evaluate: empty test set");
  const std::size_t t_steps = net.arch.timesteps;
  constexpr std::size_t kChunk = 32;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test_set.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, test_set.size() - start);
    std::vector<FrameTensor> frames;
    frames.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const EventStream& ev = test_set[start + i].event_stream;
      frames.push_back(integrate_frames(ev, t_steps, ev.height, ev.width));
    }
    TemporalActivations acts = forward_temporal(net, to_step_tensors(frames));
    Tensor avg = time_mean_logits(acts.logits);
    const std::size_t classes = avg.shape()[1];
    for (std::size_t i = 0; i < n; ++i) {
      const double* rowp = avg.values().data() + i * classes;
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (rowp[c] > rowp[best]) best = c;
      if (static_cast<int>(best) == test_set[start + i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

std::vector<SweepCell> sweep_phase_params(const RunConfig& base, const PairedDataset& ds,
                                          std::vector<double> e_thresholds, std::vector<double> ks,
                                          std::size_t num_seeds, std::size_t jobs) {
  if (e_thresholds.empty() || ks.empty() || num_seeds == 0) throw ConfigError("sweep grid is empty");
  std::sort(e_thresholds.begin(), e_thresholds.end());
  std::sort(ks.begin(), ks.end());

  // Teachers depend on the seed but not on (e_th, k); train each once.
  std::vector<std::uint64_t> seeds(num_seeds);
  for (std::size_t s = 0; s < num_seeds; ++s) seeds[s] = base.seed + s;
  std::vector<TeacherNet> teachers(num_seeds);
  for (std::size_t s = 0; s < num_seeds; ++s) teachers[s] = train_run_teacher(base, ds, seeds[s]);

  std::vector<SweepCell> cells;
  for (double e_th : e_thresholds)
    for (double k : ks) {
      SweepCell cell;
      cell.e_threshold = e_th;
      cell.k_switch = k;
      cell.accuracies.assign(num_seeds, 0.0);
      cells.push_back(cell);
    }

  struct Task {
    std::size_t cell;
    std::size_t seed_index;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < num_seeds; ++s) tasks.push_back({c, s});

  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task t = tasks[i];
      RunConfig cfg = base;
      cfg.mode = RunMode::Ckd;
      cfg.e_threshold = cells[t.cell].e_threshold;
      cfg.k_switch = cells[t.cell].k_switch;
      cfg.seed = seeds[t.seed_index];
      try {
        TrainResult r = train_ckd(cfg, ds, &teachers[t.seed_index]);
        cells[t.cell].accuracies[t.seed_index] = r.final_test_top1;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (!errors[i].empty()) {
      cells[tasks[i].cell].failed = true;
      if (!cells[tasks[i].cell].error.empty()) cells[tasks[i].cell].error += "; ";
      cells[tasks[i].cell].error += errors[i];
    }
  for (SweepCell& c : cells)
    if (!c.failed)
      c.mean_accuracy = std::accumulate(c.accuracies.begin(), c.accuracies.end(), 0.0) /
                        static_cast<double>(c.accuracies.size());
  return cells;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write sweep csv: " + path);
  const std::size_t num_seeds = cells.empty() ? 0 : cells.front().accuracies.size();
  out << "e_threshold,k,log10_k";
  for (std::size_t s = 0; s < num_seeds; ++s) out << ",acc_seed" << s;
  out << ",mean_acc,status\n";
  for (const SweepCell& c : cells) {
    out << format_metric(c.e_threshold) << "," << format_metric(c.k_switch) << ","
        << format_metric(std::log10(c.k_switch));
    for (double a : c.accuracies) out << "," << (c.failed ? "" : format_metric(a));
    out << "," << (c.failed ? "" : format_metric(c.mean_accuracy)) << ","
        << (c.failed ? "failed" : "ok") << "\n";
  }
}

std::map<std::string, std::string> student_meta(const SpikingNetwork& net) {
  std::string channels;
  for (std::size_t i = 0; i < net.arch.channels.size(); ++i)
    channels += (i ? "," : "") + std::to_string(net.arch.channels[i]);
  return {{"kind", "student"},
          {"in_channels", std::to_string(net.arch.in_channels)},
          {"height", std::to_string(net.arch.height)},
          {"width", std::to_string(net.arch.width)},
          {"channels", channels},
          {"timesteps", std::to_string(net.arch.timesteps)},
          {"num_classes", std::to_string(net.arch.num_classes)},
          {"tau_leak", format_metric(net.arch.lif.tau_leak)},
          {"v_threshold", format_metric(net.arch.lif.v_threshold)},
          {"surrogate_width", format_metric(net.arch.lif.surrogate_width)}};
}

namespace {

std::vector<std::size_t> parse_channels(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(static_cast<std::size_t>(std::stoul(s.substr(pos, comma - pos))));
    pos = comma + 1;
  }
  return out;
}

std::string meta_at(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw Error("checkpoint is missing meta key '" + key + "'");
  return it->second;
}

}  // namespace

SpikingNetwork student_from_checkpoint(const Checkpoint& ckpt) {
  if (meta_at(ckpt, "kind") != "student") throw Error("checkpoint is not a student network");
  StudentArch arch;
  arch.in_channels = std::stoul(meta_at(ckpt, "in_channels"));
  arch.height = std::stoul(meta_at(ckpt, "height"));
  arch.width = std::stoul(meta_at(ckpt, "width"));
  arch.channels = parse_channels(meta_at(ckpt, "channels"));
  arch.timesteps = std::stoul(meta_at(ckpt, "timesteps"));
  arch.num_classes = std::stoul(meta_at(ckpt, "num_classes"));
  arch.lif.tau_leak = std::stod(meta_at(ckpt, "tau_leak"));
  arch.lif.v_threshold = std::stod(meta_at(ckpt, "v_threshold"));
  arch.lif.surrogate_width = std::stod(meta_at(ckpt, "surrogate_width"));
  SpikingNetwork net = build_student(arch, 0);
  load_into(ckpt, net.parameters());
  return net;
}

std::map<std::string, std::string> teacher_meta(const TeacherNet& net) {
  std::string channels;
  for (std::size_t i = 0; i < net.arch.channels.size(); ++i)
    channels += (i ? "," : "") + std::to_string(net.arch.channels[i]);
  return {{"kind", "teacher"},
          {"in_channels", std::to_string(net.arch.in_channels)},
          {"height", std::to_string(net.arch.height)},
          {"width", std::to_string(net.arch.width)},
          {"channels", channels},
          {"num_classes", std::to_string(net.arch.num_classes)}};
}

TeacherNet teacher_from_checkpoint(const Checkpoint& ckpt) {
  if (meta_at(ckpt, "kind") != "teacher") throw Error("checkpoint is not a teacher network");
  TeacherArch arch;
  arch.in_channels = std::stoul(meta_at(ckpt, "in_channels"));
  arch.height = std::stoul(meta_at(ckpt, "height"));
  arch.width = std::stoul(meta_at(ckpt, "width"));
  arch.channels = parse_channels(meta_at(ckpt, "channels"));
  arch.num_classes = std::stoul(meta_at(ckpt, "num_classes"));
  TeacherNet net = build_teacher(arch, 0);
  load_into(ckpt, net.parameters());
  net.freeze();
  return net;
}

}  // namespace ckd
