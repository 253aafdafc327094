#include "lsattn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lsattn/errors.hpp"
#include "lsattn/gumbel.hpp"

namespace lsattn {

namespace fs = std::filesystem;

namespace {

// rng stream ids per purpose; model init uses stream 0 inside Model
constexpr uint64_t kDataStream = 1;
constexpr uint64_t kNoiseStream = 2;

std::string fmt_double(double v) {
  char buf[48];
  snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor stack_batch(const std::vector<Tensor>& examples) {
  const int b = static_cast<int>(examples.size());
  const auto& d = examples[0].dims;
  Tensor out({b, d[0], d[1], d[2]});
  const int64_t slice = examples[0].numel();
  for (int i = 0; i < b; ++i) {
    std::copy(examples[static_cast<size_t>(i)].v.begin(),
              examples[static_cast<size_t>(i)].v.end(), out.v.begin() + i * slice);
  }
  return out;
}

// deterministic Fisher-Yates off the data stream
void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

std::vector<double> per_example_losses(const Tensor& pred,
                                       const std::vector<TaskLabel>& labels,
                                       const Config& cfg) {
  const int b = pred.dims[0];
  std::vector<double> out(static_cast<size_t>(b), 0.0);
  Tape t;
  Var p = t.constant(pred);
  if (cfg.task() == TaskKind::pose) {
    Tensor lab({b, 7});
    for (int bi = 0; bi < b; ++bi) {
      const PoseLabel& pl = labels[static_cast<size_t>(bi)].pose;
      for (int i = 0; i < 3; ++i) lab.v[bi * 7 + i] = pl.x[static_cast<size_t>(i)];
      for (int i = 0; i < 4; ++i) lab.v[bi * 7 + 3 + i] = pl.q[static_cast<size_t>(i)];
    }
    out = t.val(pose_loss(t, p, lab, cfg.model.beta)).v;
  } else {
    std::vector<int> cls(static_cast<size_t>(b));
    for (int bi = 0; bi < b; ++bi) cls[static_cast<size_t>(bi)] = labels[static_cast<size_t>(bi)].cls;
    out = t.val(cross_entropy(t, p, cls)).v;
  }
  return out;
}

}  // namespace

void write_metrics_csv(const fs::path& path, const std::vector<LogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("metrics: cannot write " + path.string());
  out << "step,loss,tau,clip_events\n";
  for (const LogRow& r : log) {
    out << r.step << "," << fmt_double(r.loss) << "," << fmt_double(r.tau) << ","
        << r.clip_events << "\n";
  }
}

void write_traces_csv(const fs::path& path, const std::vector<ExampleTrace>& traces,
                      int bank_size) {
  std::ofstream out(path);
  if (!out) throw IoError("traces: cannot write " + path.string());
  out << "example_id,step,selected_layer";
  for (int i = 0; i < bank_size; ++i) out << ",logit_" << i;
  out << "\n";
  for (size_t e = 0; e < traces.size(); ++e) {
    for (size_t s = 0; s < traces[e].steps.size(); ++s) {
      const StepTrace& st = traces[e].steps[s];
      out << e << "," << (s + 1) << "," << st.selected;
      for (int i = 0; i < bank_size; ++i) {
        out << ",";
        if (i < static_cast<int>(st.logits.size())) {
          out << fmt_double(st.logits[static_cast<size_t>(i)]);
        }
      }
      out << "\n";
    }
  }
}

std::vector<ExampleTrace> read_traces_csv(const fs::path& path, int bank_size) {
  std::ifstream in(path);
  if (!in) throw IoError("traces: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("traces: empty file " + path.string());
  std::vector<ExampleTrace> traces;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) {
      throw IoError("traces line " + std::to_string(line_no) + ": too few columns");
    }
    const size_t example = std::stoul(cells[0]);
    StepTrace st;
    st.selected = std::stoi(cells[2]);
    for (int i = 0; i < bank_size; ++i) {
      const size_t col = 3 + static_cast<size_t>(i);
      if (col < cells.size() && !cells[col].empty()) {
        st.logits.push_back(std::stod(cells[col]));
      }
    }
    if (example >= traces.size()) traces.resize(example + 1);
    traces[example].steps.push_back(std::move(st));
  }
  return traces;
}

TrainOutcome train(const Config& cfg, const DatasetManifest& data, uint64_t seed,
                   const fs::path& run_dir, bool resume) {
  cfg.validate();
  if (data.entries.empty()) throw ContractError("train: dataset manifest is empty");
  if (data.task != cfg.task()) {
    throw ConfigError("train: dataset task does not match model.task");
  }

  const fs::path ckpt_dir = run_dir / "checkpoints";
  const fs::path config_path = run_dir / "config.json";
  const fs::path metrics_path = run_dir / "metrics.csv";
  const bool existing_run = fs::exists(config_path);
  if (existing_run && !resume) {
    throw ConfigError("train: run directory " + run_dir.string() +
                      " already holds a run (pass resume to continue)");
  }
  if (resume && !existing_run) {
    throw ConfigError("train: nothing to resume in " + run_dir.string());
  }
  fs::create_directories(ckpt_dir);

  Model model(cfg, seed);
  AdamState adam(model.params());
  Rng data_rng(seed, kDataStream);
  Rng noise_rng(seed, kNoiseStream);
  int64_t start_step = 0;
  int64_t clip_events = 0;
  std::vector<LogRow> log;

  if (resume) {
    const Config old = Config::load(config_path.string());
    if (old.to_json() != cfg.to_json()) {
      throw ConfigError("train: resume config differs from the stored run config");
    }
    const fs::path last = ckpt_dir / "last.ckpt";
    if (!fs::exists(last)) throw ConfigError("train: no checkpoint to resume from");
    const CheckpointMeta meta = load_checkpoint(last, model, adam);
    start_step = meta.step;
    clip_events = meta.clip_events;
    data_rng.set_counter(meta.data_counter);
    noise_rng.set_counter(meta.noise_counter);
  } else {
    cfg.save(config_path.string());  // config lands before the first step
  }

  const TemperatureSchedule schedule{cfg.gumbel.tau0, cfg.gumbel.tau_min,
                                     cfg.gumbel.decay_rate};
  const AdamConfig adam_cfg{cfg.train.lr, cfg.train.adam_beta1, cfg.train.adam_beta2,
                            cfg.train.adam_eps};
  const int batch = cfg.train.batch;
  const bool flip = cfg.train.flip;

  // batch composition is a deterministic function of (manifest, data stream)
  std::vector<size_t> order(data.entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_indices(order, data_rng);
  size_t cursor = 0;

  auto save_ckpt = [&](int64_t step, const fs::path& path) {
    CheckpointMeta meta;
    meta.step = step;
    meta.clip_events = clip_events;
    meta.seed = seed;
    meta.data_counter = data_rng.counter();
    meta.noise_counter = noise_rng.counter();
    save_checkpoint(path, model, adam, meta);
  };

  for (int64_t step = start_step; step < cfg.train.steps; ++step) {
    const double tau = anneal(schedule, step);

    std::vector<Tensor> examples;
    std::vector<TaskLabel> labels;
    std::vector<size_t> batch_ids;
    examples.reserve(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      if (cursor >= order.size()) {
        shuffle_indices(order, data_rng);
        cursor = 0;
      }
      const size_t idx = order[cursor++];
      batch_ids.push_back(idx);
      examples.push_back(
          load_example(data, idx, cfg.train.crop, /*train=*/true, flip, &data_rng));
      labels.push_back(data.entries[idx].label);
    }
    const Tensor images = stack_batch(examples);

    Tape tape;
    Model::Forward fwd =
        model.forward(tape, images, BnMode::train, noise_rng, tau,
                      SelectionPath::hard_st, nullptr, /*want_attn_maps=*/false);
    Var loss = model.loss(tape, fwd.prediction, labels);
    const double loss_value = tape.val(loss).v[0];

    if (!std::isfinite(loss_value)) {
      const std::vector<double> per = per_example_losses(tape.val(fwd.prediction), labels, cfg);
      std::string ids;
      for (size_t i = 0; i < per.size(); ++i) {
        if (!std::isfinite(per[i])) {
          if (!ids.empty()) ids += ",";
          ids += std::to_string(batch_ids[i]);
        }
      }
      if (ids.empty()) ids = "unattributable (finite per-example losses)";
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         "; offending batch ids: " + ids);
    }

    // parameters outside the active graph (e.g. the selection head under a
    // spatial-only ablation) keep an exact zero gradient
    model.params().zero_grads();
    tape.backward(loss);
    if (clip_gradients_global_norm(model.params(), cfg.train.clip_norm)) {
      ++clip_events;
    }
    adam.step(model.params(), adam_cfg);

    log.push_back({step, loss_value, tau, clip_events});
    if ((step + 1) % cfg.train.checkpoint_every == 0 && step + 1 < cfg.train.steps) {
      char name[32];
      snprintf(name, sizeof name, "ckpt_%06lld.bin", static_cast<long long>(step + 1));
      save_ckpt(step + 1, ckpt_dir / name);
      save_ckpt(step + 1, ckpt_dir / "last.ckpt");
    }
  }

  save_ckpt(cfg.train.steps, ckpt_dir / "last.ckpt");
  write_metrics_csv(metrics_path, log);

  TrainOutcome out;
  out.final_checkpoint = ckpt_dir / "last.ckpt";
  out.log = std::move(log);
  return out;
}

Evaluation evaluate(Model& model, const DatasetManifest& data) {
  if (data.entries.empty()) throw ContractError("evaluate: dataset manifest is empty");
  const Config& cfg = model.config();
  if (data.task != cfg.task()) {
    throw ConfigError("evaluate: dataset task does not match the checkpoint task");
  }
  Evaluation ev;
  Rng noise_rng(model.config().gumbel.eval_noise ? 9001 : 0, 3);
  std::vector<TaskLabel> labels;
  for (size_t i = 0; i < data.entries.size(); ++i) {
    Tensor img = load_example(data, i, cfg.train.crop, /*train=*/false, false, nullptr);
    Tensor batch({1, cfg.train.crop, cfg.train.crop, 1}, std::move(img.v));
    Tape tape;
    Model::Forward fwd = model.forward(tape, batch, BnMode::eval, noise_rng,
                                       cfg.gumbel.tau_min, SelectionPath::argmax);
    ev.predictions.push_back(tape.val(fwd.prediction).v);
    ev.traces.push_back(std::move(fwd.traces[0]));
    labels.push_back(data.entries[i].label);
  }
  ev.metrics = median_metrics(ev.predictions, labels, cfg.task());
  return ev;
}

}  // namespace lsattn
