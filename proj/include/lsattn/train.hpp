#pragma once

#include <filesystem>
#include <vector>

#include "lsattn/checkpoint.hpp"
#include "lsattn/data.hpp"
#include "lsattn/model.hpp"

namespace lsattn {

struct LogRow {
  int64_t step = 0;
  double loss = 0.0;
  double tau = 0.0;
  int64_t clip_events = 0;  // cumulative
};

struct TrainOutcome {
  std::filesystem::path final_checkpoint;
  std::vector<LogRow> log;
};

// Full training loop. Populates run_dir with config.json (before the first
// step), metrics.csv, and checkpoints/. With resume = false the run
// directory must not already contain a run.
TrainOutcome train(const Config& cfg, const DatasetManifest& data, uint64_t seed,
                   const std::filesystem::path& run_dir, bool resume = false);

struct Evaluation {
  EvalMetrics metrics;
  std::vector<ExampleTrace> traces;             // one per example, in order
  std::vector<std::vector<double>> predictions; // raw head outputs
};

// Deterministic eval-mode pass over a dataset: center crops, running-stat
// batch norm, noise-free argmax selection (unless gumbel.eval_noise is set).
Evaluation evaluate(Model& model, const DatasetManifest& data);

// CSV helpers shared by the trainer, the CLI, and tests.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<LogRow>& log);
void write_traces_csv(const std::filesystem::path& path,
                      const std::vector<ExampleTrace>& traces, int bank_size);
std::vector<ExampleTrace> read_traces_csv(const std::filesystem::path& path, int bank_size);

}  // namespace lsattn
