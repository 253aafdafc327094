// Command-line surface: dataset synthesis, training, evaluation,
// layer-selection-frequency reports, attention heatmap export, and the
// gradient-check suite.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error,
// 3 numerical abort.

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lsattn/checkpoint.hpp"
#include "lsattn/config.hpp"
#include "lsattn/data.hpp"
#include "lsattn/errors.hpp"
#include "lsattn/gradcheck.hpp"
#include "lsattn/gumbel.hpp"
#include "lsattn/model.hpp"
#include "lsattn/report.hpp"
#include "lsattn/threads.hpp"
#include "lsattn/train.hpp"

namespace fs = std::filesystem;
using namespace lsattn;

namespace {

fs::path resolve_manifest(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.txt";
  if (!fs::exists(p)) throw ConfigError("dataset manifest not found: " + p.string());
  return p;
}

fs::path pick_checkpoint(const fs::path& run, const std::string& name) {
  const fs::path dir = run / "checkpoints";
  const fs::path p = name.empty() ? dir / "last.ckpt" : dir / name;
  if (!fs::exists(p)) throw ConfigError("checkpoint not found: " + p.string());
  return p;
}

int cmd_synth(const std::string& task, const std::string& out, int n, uint64_t seed,
              const std::string& signal, int size, int classes) {
  SynthConfig cfg;
  cfg.image_size = size;
  cfg.count = n;
  cfg.seed = seed;
  cfg.n_classes = classes;
  if (task == "pose") {
    cfg.task = TaskKind::pose;
  } else if (task == "class") {
    cfg.task = TaskKind::classification;
  } else {
    throw ConfigError("--task must be pose|class");
  }
  if (signal == "texture") cfg.signal = ClassSignal::texture;
  else if (signal == "layout") cfg.signal = ClassSignal::layout;
  else if (signal == "mixed") cfg.signal = ClassSignal::mixed;
  else throw ConfigError("--signal must be texture|layout|mixed");

  const DatasetManifest m = cfg.task == TaskKind::pose ? synth_pose(cfg, out)
                                                       : synth_class(cfg, out);
  if (m.entries.empty()) {
    std::cerr << "warning: generated an empty dataset (--n 0)\n";
  }
  std::cout << m.entries.size() << " examples written to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out, uint64_t seed, bool resume) {
  const Config cfg = Config::load(config_path);
  const DatasetManifest m = load_manifest(resolve_manifest(data));
  const TrainOutcome outcome = train(cfg, m, seed, out, resume);
  std::cout << "trained " << outcome.log.size() << " steps; checkpoint at "
            << outcome.final_checkpoint.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& run, const std::string& data,
             const std::string& checkpoint) {
  const fs::path run_dir(run);
  const fs::path ckpt = pick_checkpoint(run_dir, checkpoint);
  const Config cfg = peek_checkpoint_config(ckpt);
  Model model(cfg, /*seed=*/0);
  AdamState adam(model.params());
  load_checkpoint(ckpt, model, adam);
  const DatasetManifest m = load_manifest(resolve_manifest(data));
  const Evaluation ev = evaluate(model, m);
  write_traces_csv(run_dir / "traces.csv", ev.traces, model.bank_size());
  char buf[64];
  if (cfg.task() == TaskKind::pose) {
    snprintf(buf, sizeof buf, "%.17g", ev.metrics.median_position);
    std::cout << "median_position=" << buf << "\n";
    snprintf(buf, sizeof buf, "%.17g", ev.metrics.median_orientation_deg);
    std::cout << "median_orientation_deg=" << buf << "\n";
  } else {
    snprintf(buf, sizeof buf, "%.17g", ev.metrics.mean_accuracy);
    std::cout << "mean_accuracy=" << buf << "\n";
  }
  return 0;
}

int cmd_report_lsf(const std::string& run) {
  const fs::path run_dir(run);
  const fs::path traces_path = run_dir / "traces.csv";
  if (!fs::exists(traces_path)) {
    throw ConfigError("no traces.csv in " + run + " (run eval first)");
  }
  const Config cfg = Config::load((run_dir / "config.json").string());
  const int k = cfg.bank_size();
  const std::vector<ExampleTrace> traces = read_traces_csv(traces_path, k);
  if (traces.empty()) throw ConfigError("traces.csv holds no rows");
  const std::vector<double> pct = lsf_histogram(traces, k);
  fs::create_directories(run_dir / "reports");
  std::ofstream out(run_dir / "reports" / "lsf.csv");
  out << lsf_csv(pct);
  std::cout << lsf_ascii_chart(pct);
  return 0;
}

int cmd_heatmaps(const std::string& run, const std::string& data, int example) {
  const fs::path run_dir(run);
  const fs::path ckpt = pick_checkpoint(run_dir, "");
  const Config cfg = peek_checkpoint_config(ckpt);
  Model model(cfg, 0);
  AdamState adam(model.params());
  load_checkpoint(ckpt, model, adam);
  const DatasetManifest m = load_manifest(resolve_manifest(data));
  if (example < 0 || example >= static_cast<int>(m.entries.size())) {
    throw ConfigError("--example " + std::to_string(example) + " out of range [0," +
                      std::to_string(m.entries.size()) + ")");
  }

  Tensor img = load_example(m, static_cast<size_t>(example), cfg.train.crop,
                            /*train=*/false, false, nullptr);
  Tensor batch({1, cfg.train.crop, cfg.train.crop, 1}, std::move(img.v));
  Rng noise_rng(0, 3);
  Tape tape;
  Model::Forward fwd = model.forward(tape, batch, BnMode::eval, noise_rng,
                                     cfg.gumbel.tau_min, SelectionPath::argmax);
  const Image raw = center_crop_gray(load_image_of(m, static_cast<size_t>(example)),
                                     cfg.train.crop);
  fs::create_directories(run_dir / "reports");
  const ExampleTrace& trace = fwd.traces[0];
  for (size_t s = 0; s < trace.steps.size(); ++s) {
    const StepTrace& st = trace.steps[s];
    if (st.attn_map.rank() == 0) {
      throw ConfigError("heatmaps: run was trained without spatial attention");
    }
    const Image heat = heatmap_image(st.attn_map, cfg.train.crop);
    char name[64];
    snprintf(name, sizeof name, "heatmap_step%zu_layer%d.pgm", s + 1, st.selected);
    write_image(run_dir / "reports" / name, heat);
    snprintf(name, sizeof name, "overlay_step%zu_layer%d.pgm", s + 1, st.selected);
    write_image(run_dir / "reports" / name, blend_overlay(raw, heat));
  }
  std::cout << trace.steps.size() << " heatmaps written to "
            << (run_dir / "reports").string() << "\n";
  return 0;
}

// ---- gradcheck command ------------------------------------------------------

Tensor rand_t(std::vector<int> dims, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (double& x : t.v) x = scale * (2.0 * rng.next_uniform() - 1.0);
  return t;
}

struct CheckRow {
  std::string op;
  double err;
  double threshold;
};

int cmd_gradcheck(uint64_t seed) {
  std::vector<CheckRow> rows;
  Rng rng(seed, 0);

  const auto run_check = [&](const std::string& op, const TensorProgram& fn,
                             std::vector<Tensor> inputs, double threshold) {
    rows.push_back({op, grad_check(fn, inputs), threshold});
  };

  run_check("conv2d",
            [](Tape& t, const std::vector<Var>& v) {
              return sum_all(t, conv2d(t, v[0], v[1], v[2], Padding::same));
            },
            {rand_t({6, 6, 3}, rng), rand_t({3, 3, 3, 4}, rng), rand_t({4}, rng)},
            1e-5);
  run_check("dense",
            [](Tape& t, const std::vector<Var>& v) {
              return sum_all(t, dense(t, v[0], v[1], v[2]));
            },
            {rand_t({8}, rng), rand_t({8, 5}, rng), rand_t({5}, rng)}, 1e-5);
  const char* act_names[] = {"relu", "leaky_relu", "sigmoid", "tanh"};
  for (Act kind : {Act::relu, Act::leaky_relu, Act::sigmoid, Act::tanh}) {
    run_check(std::string("activation.") + act_names[static_cast<int>(kind)],
              [kind](Tape& t, const std::vector<Var>& v) {
                return sum_all(t, mul(t, activation(t, v[0], kind), v[1]));
              },
              {rand_t({24}, rng), rand_t({24}, rng)}, 1e-5);
  }
  run_check("softmax_spatial",
            [](Tape& t, const std::vector<Var>& v) {
              return sum_all(t, mul(t, softmax_spatial(t, v[0]), v[1]));
            },
            {rand_t({5, 5, 1}, rng, 2.0), rand_t({5, 5, 1}, rng)}, 1e-5);
  run_check("avg_pool_global",
            [](Tape& t, const std::vector<Var>& v) {
              return sum_all(t, mul(t, avg_pool_global(t, v[0]), v[1]));
            },
            {rand_t({4, 4, 3}, rng), rand_t({3}, rng)}, 1e-5);
  {
    auto bn = std::make_shared<BatchNormParams>(3);
    run_check("batch_norm.train",
              [bn](Tape& t, const std::vector<Var>& v) {
                return sum_all(t, mul(t, batch_norm(t, v[0], *bn, BnMode::train), v[1]));
              },
              {rand_t({4, 2, 2, 3}, rng), rand_t({4, 2, 2, 3}, rng)}, 1e-5);
    run_check("batch_norm.eval",
              [bn](Tape& t, const std::vector<Var>& v) {
                return sum_all(t, mul(t, batch_norm(t, v[0], *bn, BnMode::eval), v[1]));
              },
              {rand_t({4, 2, 2, 3}, rng), rand_t({4, 2, 2, 3}, rng)}, 1e-5);
  }
  {
    auto mc = std::make_shared<MultiConvParams>(std::vector<int>{1, 3}, 2, 4,
                                                MultiConvParams::Combine::concat, rng);
    run_check("multi_conv",
              [mc](Tape& t, const std::vector<Var>& v) {
                Var out = multi_conv(t, v[0], *mc);
                return sum_all(t, mul(t, out, out));
              },
              {rand_t({4, 4, 2}, rng)}, 1e-5);
  }
  {
    auto lstm = std::make_shared<ConvLstmParams>(3, 2, 2, std::vector<int>{1, 3}, rng);
    run_check("convlstm_step",
              [lstm](Tape& t, const std::vector<Var>& v) {
                LstmState s{v[1], v[2]};
                LstmState nx = convlstm_step(t, v[0], s, *lstm);
                return sum_all(t, mul(t, nx.h, nx.h));
              },
              {rand_t({1, 3, 3, 2}, rng), rand_t({1, 3, 3, 2}, rng),
               rand_t({1, 3, 3, 2}, rng)},
              1e-5);
  }
  {
    auto attn = std::make_shared<SpatialAttentionParams>(4, 2, std::vector<int>{1, 3},
                                                         Act::relu, rng);
    run_check("spatial_attention",
              [attn](Tape& t, const std::vector<Var>& v) {
                AttentionOut out = spatial_attention(t, v[0], v[1], *attn, BnMode::train);
                return sum_all(t, mul(t, out.gated, out.gated));
              },
              {rand_t({2, 4, 4, 4}, rng), rand_t({2, 4, 4, 2}, rng)}, 1e-5);
  }
  run_check("aggregate_predict",
            [](Tape& t, const std::vector<Var>& v) {
              Var cat = concat_channels(t, std::vector<Var>{v[0], v[1]});
              Var pooled = avg_pool_global(t, cat);
              Var pred = dense(t, pooled, v[2], v[3]);
              return sum_all(t, mul(t, pred, pred));
            },
            {rand_t({2, 3, 3, 2}, rng), rand_t({2, 3, 3, 2}, rng),
             rand_t({4, 5}, rng), rand_t({5}, rng)},
            1e-5);
  {
    Tensor label({2, 7});
    label.v = {1.2, -0.7, 0.4, 1.0, 0.0, 0.0, 0.0,
               0.6, 0.9, -0.3, 0.0, 1.0, 0.0, 0.0};
    Tensor pred = rand_t({2, 7}, rng);
    pred.v[3] += 1.5;  // keep the quaternion norms away from zero
    pred.v[11] += 1.5;
    run_check("pose_loss",
              [label](Tape& t, const std::vector<Var>& v) {
                return mean_all(t, pose_loss(t, v[0], label, 3.0));
              },
              {pred}, 1e-5);
  }
  run_check("cross_entropy",
            [](Tape& t, const std::vector<Var>& v) {
              return mean_all(t, cross_entropy(t, v[0], {1, 3}));
            },
            {rand_t({2, 5}, rng, 2.0)}, 1e-5);

  // full model on the soft path with frozen noise, both tasks
  {
    Config cfg = Config::desk(TaskKind::pose);
    cfg.model.hidden_channels = 8;
    cfg.model.bank_channels = 6;
    cfg.model.backbone_channels = {4, 6, 8, 10};
    cfg.model.n_steps = 2;
    cfg.train.crop = 16;
    Model model(cfg, seed);
    Rng mrng(seed, 11);
    Tensor images = rand_t({2, 16, 16, 1}, mrng, 0.5);
    std::vector<TaskLabel> labels;
    for (int i = 0; i < 2; ++i) {
      const double th = 0.4 * (i + 1);
      labels.push_back(TaskLabel::make_pose(
          {1.0 + 0.5 * i, -0.75, 0.4},
          {std::cos(th / 2), 0.0, 0.0, std::sin(th / 2)}));
    }
    rows.push_back({"full_model.pose",
                    full_model_grad_check(model, images, labels, 0.8, 20, mrng), 1e-4});

    Config ccfg = cfg;
    ccfg.model.task = "class";
    ccfg.model.n_classes = 4;
    ccfg.train.flip = false;
    Model cmodel(ccfg, seed + 1);
    std::vector<TaskLabel> clabels = {TaskLabel::make_class(1), TaskLabel::make_class(3)};
    rows.push_back({"full_model.class",
                    full_model_grad_check(cmodel, images, clabels, 0.8, 20, mrng), 1e-4});
  }

  bool all_pass = true;
  std::printf("%-24s %-12s %s\n", "op", "max_rel_err", "pass");
  for (const CheckRow& r : rows) {
    const bool pass = r.err <= r.threshold;
    all_pass = all_pass && pass;
    std::printf("%-24s %-12.3g %s\n", r.op.c_str(), r.err, pass ? "yes" : "NO");
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("LSATTN_THREADS")) {
    set_thread_width(std::atoi(threads));
  }

  CLI::App app{"joint layer-spatial attention trainer"};
  app.require_subcommand(1);

  std::string task = "pose", out_dir, signal = "mixed";
  int n = 100, size = 32, classes = 4;
  uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--task", task, "pose|class");
  synth->add_option("--out", out_dir)->required();
  synth->add_option("--n", n)->required();
  synth->add_option("--seed", seed);
  synth->add_option("--signal", signal, "texture|layout|mixed (class task)");
  synth->add_option("--size", size, "image side length");
  synth->add_option("--classes", classes, "class count (class task)");

  std::string cfg_path, data_dir, run_dir;
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", cfg_path)->required();
  train_cmd->add_option("--data", data_dir)->required();
  train_cmd->add_option("--out", run_dir)->required();
  train_cmd->add_option("--seed", seed);
  train_cmd->add_flag("--resume", resume, "continue an existing run");

  std::string ckpt_name;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--run", run_dir)->required();
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--checkpoint", ckpt_name, "checkpoint file name");

  auto* lsf_cmd = app.add_subcommand("report-lsf", "layer selection frequencies");
  lsf_cmd->add_option("--run", run_dir)->required();

  int example = 0;
  auto* heat_cmd = app.add_subcommand("heatmaps", "export attention heatmaps");
  heat_cmd->add_option("--run", run_dir)->required();
  heat_cmd->add_option("--data", data_dir)->required();
  heat_cmd->add_option("--example", example)->required();

  uint64_t gc_seed = 1;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc_cmd->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(task, out_dir, n, seed, signal, size, classes);
    if (train_cmd->parsed()) return cmd_train(cfg_path, data_dir, run_dir, seed, resume);
    if (eval_cmd->parsed()) return cmd_eval(run_dir, data_dir, ckpt_name);
    if (lsf_cmd->parsed()) return cmd_report_lsf(run_dir);
    if (heat_cmd->parsed()) return cmd_heatmaps(run_dir, data_dir, example);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
