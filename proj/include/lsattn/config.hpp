#pragma once

#include <string>
#include <vector>

#include "lsattn/autodiff.hpp"

namespace lsattn {

enum class TaskKind { pose, classification };
enum class Ablation { joint, spatial_only, layer_only };
enum class AggregateMode { channel, flatten };

struct TensorSection {
  bool conv_bias = true;  // bias terms inside attention-path convolutions
};

struct GumbelSection {
  double tau0 = 1.0;
  double tau_min = 0.5;
  double decay_rate = 0.0;
  bool eval_noise = false;
};

struct AttentionSection {
  std::string nonlinearity = "relu";  // relu | leaky_relu
  double leaky_slope = 0.01;
  std::string bn_position = "pre_softmax";
  std::vector<int> kernel_sizes = {1, 3, 5};
};

struct ModelSection {
  std::string task = "pose";  // pose | class
  int n_steps = 3;
  int hidden_channels = 96;
  int bank_channels = 96;
  int grid = 8;
  std::vector<int> backbone_channels = {8, 16, 32, 64};
  int n_classes = 4;
  double beta = 250.0;
  std::string ablation = "joint";  // joint | spatial_only | layer_only
  int fixed_layer = 0;
  std::vector<int> lstm_kernel_sizes = {1, 3, 5, 7};
  int embed_ratio = 4;  // gate embedding width = ceil(hidden / ratio)
  std::string aggregate_mode = "channel";  // channel | flatten
};

struct TrainSection {
  double lr = 1e-4;
  int batch = 40;
  int64_t steps = 2000;
  double clip_norm = 5.0;
  int64_t checkpoint_every = 500;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int crop = 224;  // network input size; images at least this large
  bool flip = false;
};

struct Config {
  TensorSection tensor;
  GumbelSection gumbel;
  AttentionSection attention;
  ModelSection model;
  TrainSection train;

  TaskKind task() const;
  Ablation ablation() const;
  AggregateMode aggregate_mode() const;
  Act attention_nonlinearity() const;
  int bank_size() const { return static_cast<int>(model.backbone_channels.size()); }
  int embed_dim() const;

  // Throws ConfigError naming the offending field path.
  void validate() const;

  std::string to_json() const;                  // pretty, stable key order
  static Config from_json(const std::string&);  // parse + validate
  static Config load(const std::string& path);
  void save(const std::string& path) const;

  // Desk-scale preset: minutes on a CPU. 32x32 inputs, hidden 16, batch 8.
  static Config desk(TaskKind task);
  // Paper-scale preset: 224 crops, hidden 96, batch 40. Constructible, slow.
  static Config paper_scale(TaskKind task);
};

}  // namespace lsattn
