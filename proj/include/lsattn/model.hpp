#pragma once

#include <array>
#include <string>
#include <vector>

#include "lsattn/attention.hpp"
#include "lsattn/config.hpp"

namespace lsattn {

struct PoseLabel {
  std::array<double, 3> x{0.0, 0.0, 0.0};
  std::array<double, 4> q{1.0, 0.0, 0.0, 0.0};
};

// Tagged union of the two supervision targets.
struct TaskLabel {
  TaskKind kind = TaskKind::pose;
  PoseLabel pose;
  int cls = 0;

  static TaskLabel make_pose(const std::array<double, 3>& x,
                             const std::array<double, 4>& q);
  static TaskLabel make_class(int c);
};

struct StepTrace {
  int selected = 0;
  std::vector<double> logits;  // empty when the ablation fixes the layer
  Tensor attn_map;             // (S,S,1); empty in the layer-only ablation
  double hidden_mean_abs = 0.0;
};

struct ExampleTrace {
  std::vector<StepTrace> steps;
};

struct ConvStage {
  Tensor kernel, bias;
};

// The full network: synthetic backbone, unified layer bank, the recurrent
// layer-then-spatial attention loop, and the prediction head.
class Model {
 public:
  Model(const Config& cfg, uint64_t seed);

  struct Forward {
    Var prediction;
    std::vector<Var> hidden_states;
    std::vector<ExampleTrace> traces;
  };

  // images: (b, crop, crop, 1), already preprocessed.
  // noise_override, when given, supplies one (b,k) Gumbel tensor per step.
  Forward forward(Tape& t, const Tensor& images, BnMode mode, Rng& noise_rng,
                  double tau, SelectionPath path,
                  const std::vector<Tensor>* noise_override = nullptr,
                  bool want_attn_maps = true);

  // Mean task loss over the batch (Eq.-style pose loss or cross-entropy).
  Var loss(Tape& t, Var prediction, const std::vector<TaskLabel>& labels) const;

  int output_dim() const;
  int bank_size() const { return cfg_.bank_size(); }
  const Config& config() const { return cfg_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  // Batch-norm running statistics, ordered; part of the checkpoint state.
  std::vector<std::vector<double>*> bn_state();

 private:
  Config cfg_;
  Rng init_rng_;  // declared before the parameter members that consume it
  std::vector<ConvStage> backbone_;
  std::vector<ConvStage> bank_embed_;
  ConvLstmParams lstm_;
  SpatialAttentionParams attn_;
  SelectionHeadParams select_;
  Tensor head_w_, head_b_;
  ParamRegistry params_;
};

// Unifies a feature map to grid x grid: average-pool when larger,
// nearest-neighbor upsample when smaller.
Var resample_to_grid(Tape& t, Var feature, int grid);

// Finite-difference check of the whole network against its recorded
// gradients, run on the soft selection path with frozen Gumbel noise (the
// straight-through estimator's backward is exactly the soft path's).
// Samples `coords` parameter coordinates; returns the max relative error.
double full_model_grad_check(Model& model, const Tensor& images,
                             const std::vector<TaskLabel>& labels, double tau,
                             int coords, Rng& rng, double fd_step = 1e-5);

// ---- metrics ----------------------------------------------------------------

// Geodesic orientation distance in degrees, double-cover safe.
double angular_error_deg(const std::array<double, 4>& q,
                         const std::array<double, 4>& q_hat);

// Middle element; mean of the two middles for even counts.
double median(std::vector<double> values);

struct EvalMetrics {
  TaskKind kind = TaskKind::pose;
  double median_position = 0.0;
  double median_orientation_deg = 0.0;
  double mean_accuracy = 0.0;
};

EvalMetrics median_metrics(const std::vector<std::vector<double>>& predictions,
                           const std::vector<TaskLabel>& labels, TaskKind kind);

// Per-layer usage percentages over all steps of all traces; sums to 100.
std::vector<double> lsf_histogram(const std::vector<ExampleTrace>& traces, int k);

}  // namespace lsattn
