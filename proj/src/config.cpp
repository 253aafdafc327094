#include "lsattn/config.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "lsattn/errors.hpp"

namespace lsattn {

using json = nlohmann::ordered_json;

TaskKind Config::task() const {
  if (model.task == "pose") return TaskKind::pose;
  if (model.task == "class") return TaskKind::classification;
  throw ConfigError("model.task: expected pose|class, got '" + model.task + "'");
}

Ablation Config::ablation() const {
  if (model.ablation == "joint") return Ablation::joint;
  if (model.ablation == "spatial_only") return Ablation::spatial_only;
  if (model.ablation == "layer_only") return Ablation::layer_only;
  throw ConfigError("model.ablation: expected joint|spatial_only|layer_only, got '" +
                    model.ablation + "'");
}

AggregateMode Config::aggregate_mode() const {
  if (model.aggregate_mode == "channel") return AggregateMode::channel;
  if (model.aggregate_mode == "flatten") return AggregateMode::flatten;
  throw ConfigError("model.aggregate_mode: expected channel|flatten, got '" +
                    model.aggregate_mode + "'");
}

Act Config::attention_nonlinearity() const {
  if (attention.nonlinearity == "relu") return Act::relu;
  if (attention.nonlinearity == "leaky_relu") return Act::leaky_relu;
  throw ConfigError("attention.nonlinearity: expected relu|leaky_relu, got '" +
                    attention.nonlinearity + "'");
}

int Config::embed_dim() const {
  return (model.hidden_channels + model.embed_ratio - 1) / model.embed_ratio;
}

namespace {

void fail(const std::string& path, const std::string& why) {
  throw ConfigError(path + ": " + why);
}

}  // namespace

void Config::validate() const {
  task();
  ablation();
  aggregate_mode();
  attention_nonlinearity();

  if (gumbel.tau0 <= 0.0) fail("gumbel.tau0", "must be > 0");
  if (gumbel.tau_min <= 0.0) fail("gumbel.tau_min", "must be > 0");
  if (gumbel.tau_min > gumbel.tau0) fail("gumbel.tau_min", "must be <= gumbel.tau0");
  if (gumbel.decay_rate < 0.0) fail("gumbel.decay_rate", "must be >= 0");

  if (attention.leaky_slope < 0.0 || attention.leaky_slope >= 1.0) {
    fail("attention.leaky_slope", "must be in [0,1)");
  }
  if (attention.bn_position != "pre_softmax") {
    fail("attention.bn_position", "only 'pre_softmax' is supported");
  }
  if (attention.kernel_sizes.empty()) fail("attention.kernel_sizes", "must be non-empty");
  for (int k : attention.kernel_sizes) {
    if (k < 1 || k % 2 == 0) fail("attention.kernel_sizes", "entries must be odd");
  }
  if (model.lstm_kernel_sizes.empty()) fail("model.lstm_kernel_sizes", "must be non-empty");
  for (int k : model.lstm_kernel_sizes) {
    if (k < 1 || k % 2 == 0) fail("model.lstm_kernel_sizes", "entries must be odd");
  }

  if (model.n_steps < 1) fail("model.n_steps", "must be >= 1");
  if (model.hidden_channels < 1) fail("model.hidden_channels", "must be >= 1");
  if (model.hidden_channels % static_cast<int>(model.lstm_kernel_sizes.size()) != 0) {
    fail("model.hidden_channels",
         "must be divisible by the lstm branch count " +
             std::to_string(model.lstm_kernel_sizes.size()));
  }
  if (model.bank_channels < 1) fail("model.bank_channels", "must be >= 1");
  if (model.bank_channels % static_cast<int>(attention.kernel_sizes.size()) != 0) {
    fail("model.bank_channels", "must be divisible by the attention branch count " +
                                    std::to_string(attention.kernel_sizes.size()));
  }
  if (model.backbone_channels.empty()) fail("model.backbone_channels", "must be non-empty");
  for (int c : model.backbone_channels) {
    if (c < 1) fail("model.backbone_channels", "entries must be >= 1");
  }
  if (model.embed_ratio < 1) fail("model.embed_ratio", "must be >= 1");
  if (task() == TaskKind::pose && model.beta <= 0.0) fail("model.beta", "must be > 0");
  if (task() == TaskKind::classification && model.n_classes < 2) {
    fail("model.n_classes", "must be >= 2");
  }
  if (ablation() == Ablation::spatial_only &&
      (model.fixed_layer < 0 || model.fixed_layer >= bank_size())) {
    fail("model.fixed_layer", "must index a backbone stage in [0," +
                                  std::to_string(bank_size()) + ")");
  }

  if (train.lr <= 0.0) fail("train.lr", "must be > 0");
  if (train.batch < 1) fail("train.batch", "must be >= 1");
  if (train.steps < 0) fail("train.steps", "must be >= 0");
  if (train.clip_norm <= 0.0) fail("train.clip_norm", "must be > 0");
  if (train.checkpoint_every < 1) fail("train.checkpoint_every", "must be >= 1");
  if (train.bn_momentum <= 0.0 || train.bn_momentum >= 1.0) {
    fail("train.bn_momentum", "must be in (0,1)");
  }
  if (train.bn_epsilon <= 0.0) fail("train.bn_epsilon", "must be > 0");
  if (train.adam_beta1 <= 0.0 || train.adam_beta1 >= 1.0) fail("train.adam_beta1", "must be in (0,1)");
  if (train.adam_beta2 <= 0.0 || train.adam_beta2 >= 1.0) fail("train.adam_beta2", "must be in (0,1)");
  if (train.adam_eps <= 0.0) fail("train.adam_eps", "must be > 0");
  if (train.flip && task() == TaskKind::pose) {
    fail("train.flip", "horizontal flips are classification-only");
  }

  // network input geometry: stage s sees crop / 2^s
  const int stages = static_cast<int>(model.backbone_channels.size());
  int res = train.crop;
  if (res < 1) fail("train.crop", "must be >= 1");
  for (int s = 0; s < stages; ++s) {
    if (s > 0) {
      if (res % 2 != 0) fail("train.crop", "must halve cleanly across backbone stages");
      res /= 2;
    }
    if (res % model.grid != 0 && model.grid % res != 0) {
      fail("model.grid", "stage resolution " + std::to_string(res) +
                             " is not an integer multiple/divisor of the grid");
    }
  }
}

namespace {

template <typename T>
T get_field(const json& j, const std::string& section, const std::string& key,
            const T& fallback) {
  if (!j.contains(section)) return fallback;
  const json& s = j.at(section);
  if (!s.is_object()) throw ConfigError(section + ": expected an object");
  if (!s.contains(key)) return fallback;
  try {
    return s.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key + ": wrong type");
  }
}

void check_known_keys(const json& j) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> schema = {
      {"tensor", {"conv_bias"}},
      {"gumbel", {"tau0", "tau_min", "decay_rate", "eval_noise"}},
      {"attention", {"nonlinearity", "leaky_slope", "bn_position", "kernel_sizes"}},
      {"model",
       {"task", "n_steps", "hidden_channels", "bank_channels", "grid",
        "backbone_channels", "n_classes", "beta", "ablation", "fixed_layer",
        "lstm_kernel_sizes", "embed_ratio", "aggregate_mode"}},
      {"train",
       {"lr", "batch", "steps", "clip_norm", "checkpoint_every", "bn_momentum",
        "bn_epsilon", "adam_beta1", "adam_beta2", "adam_eps", "crop", "flip"}},
  };
  for (auto& [section, value] : j.items()) {
    const auto it = std::find_if(schema.begin(), schema.end(),
                                 [&](const auto& p) { return p.first == section; });
    if (it == schema.end()) throw ConfigError(section + ": unknown section");
    if (!value.is_object()) throw ConfigError(section + ": expected an object");
    for (auto& [key, v] : value.items()) {
      (void)v;
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end()) {
        throw ConfigError(section + "." + key + ": unknown key");
      }
    }
  }
}

}  // namespace

Config Config::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  check_known_keys(j);

  Config base;
  Config c;
  c.tensor.conv_bias = get_field(j, "tensor", "conv_bias", base.tensor.conv_bias);
  c.gumbel.tau0 = get_field(j, "gumbel", "tau0", base.gumbel.tau0);
  c.gumbel.tau_min = get_field(j, "gumbel", "tau_min", base.gumbel.tau_min);
  c.gumbel.decay_rate = get_field(j, "gumbel", "decay_rate", base.gumbel.decay_rate);
  c.gumbel.eval_noise = get_field(j, "gumbel", "eval_noise", base.gumbel.eval_noise);
  c.attention.nonlinearity =
      get_field(j, "attention", "nonlinearity", base.attention.nonlinearity);
  c.attention.leaky_slope =
      get_field(j, "attention", "leaky_slope", base.attention.leaky_slope);
  c.attention.bn_position =
      get_field(j, "attention", "bn_position", base.attention.bn_position);
  c.attention.kernel_sizes =
      get_field(j, "attention", "kernel_sizes", base.attention.kernel_sizes);
  c.model.task = get_field(j, "model", "task", base.model.task);
  c.model.n_steps = get_field(j, "model", "n_steps", base.model.n_steps);
  c.model.hidden_channels =
      get_field(j, "model", "hidden_channels", base.model.hidden_channels);
  c.model.bank_channels =
      get_field(j, "model", "bank_channels", base.model.bank_channels);
  c.model.grid = get_field(j, "model", "grid", base.model.grid);
  c.model.backbone_channels =
      get_field(j, "model", "backbone_channels", base.model.backbone_channels);
  c.model.n_classes = get_field(j, "model", "n_classes", base.model.n_classes);
  c.model.beta = get_field(j, "model", "beta", base.model.beta);
  c.model.ablation = get_field(j, "model", "ablation", base.model.ablation);
  c.model.fixed_layer = get_field(j, "model", "fixed_layer", base.model.fixed_layer);
  c.model.lstm_kernel_sizes =
      get_field(j, "model", "lstm_kernel_sizes", base.model.lstm_kernel_sizes);
  c.model.embed_ratio = get_field(j, "model", "embed_ratio", base.model.embed_ratio);
  c.model.aggregate_mode =
      get_field(j, "model", "aggregate_mode", base.model.aggregate_mode);
  c.train.lr = get_field(j, "train", "lr", base.train.lr);
  c.train.batch = get_field(j, "train", "batch", base.train.batch);
  c.train.steps = get_field(j, "train", "steps", base.train.steps);
  c.train.clip_norm = get_field(j, "train", "clip_norm", base.train.clip_norm);
  c.train.checkpoint_every =
      get_field(j, "train", "checkpoint_every", base.train.checkpoint_every);
  c.train.bn_momentum = get_field(j, "train", "bn_momentum", base.train.bn_momentum);
  c.train.bn_epsilon = get_field(j, "train", "bn_epsilon", base.train.bn_epsilon);
  c.train.adam_beta1 = get_field(j, "train", "adam_beta1", base.train.adam_beta1);
  c.train.adam_beta2 = get_field(j, "train", "adam_beta2", base.train.adam_beta2);
  c.train.adam_eps = get_field(j, "train", "adam_eps", base.train.adam_eps);
  c.train.crop = get_field(j, "train", "crop", base.train.crop);
  c.train.flip = get_field(j, "train", "flip", base.train.flip);
  c.validate();
  return c;
}

std::string Config::to_json() const {
  json j;
  j["tensor"] = {{"conv_bias", tensor.conv_bias}};
  j["gumbel"] = {{"tau0", gumbel.tau0},
                 {"tau_min", gumbel.tau_min},
                 {"decay_rate", gumbel.decay_rate},
                 {"eval_noise", gumbel.eval_noise}};
  j["attention"] = {{"nonlinearity", attention.nonlinearity},
                    {"leaky_slope", attention.leaky_slope},
                    {"bn_position", attention.bn_position},
                    {"kernel_sizes", attention.kernel_sizes}};
  j["model"] = {{"task", model.task},
                {"n_steps", model.n_steps},
                {"hidden_channels", model.hidden_channels},
                {"bank_channels", model.bank_channels},
                {"grid", model.grid},
                {"backbone_channels", model.backbone_channels},
                {"n_classes", model.n_classes},
                {"beta", model.beta},
                {"ablation", model.ablation},
                {"fixed_layer", model.fixed_layer},
                {"lstm_kernel_sizes", model.lstm_kernel_sizes},
                {"embed_ratio", model.embed_ratio},
                {"aggregate_mode", model.aggregate_mode}};
  j["train"] = {{"lr", train.lr},
                {"batch", train.batch},
                {"steps", train.steps},
                {"clip_norm", train.clip_norm},
                {"checkpoint_every", train.checkpoint_every},
                {"bn_momentum", train.bn_momentum},
                {"bn_epsilon", train.bn_epsilon},
                {"adam_beta1", train.adam_beta1},
                {"adam_beta2", train.adam_beta2},
                {"adam_eps", train.adam_eps},
                {"crop", train.crop},
                {"flip", train.flip}};
  return j.dump(2) + "\n";
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void Config::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write " + path);
  out << to_json();
}

Config Config::desk(TaskKind task) {
  Config c;
  c.model.task = task == TaskKind::pose ? "pose" : "class";
  c.model.n_steps = task == TaskKind::pose ? 3 : 2;
  c.model.hidden_channels = 16;
  c.model.bank_channels = 12;
  c.model.grid = 8;
  c.model.backbone_channels = {8, 16, 32, 64};
  c.model.n_classes = 4;
  c.model.beta = 250.0;
  c.train.lr = 1e-3;
  c.train.batch = 8;
  c.train.steps = 2000;
  c.train.checkpoint_every = 500;
  c.train.crop = 32;
  c.train.flip = task == TaskKind::classification;
  c.gumbel.tau0 = 1.0;
  c.gumbel.tau_min = 0.5;
  c.gumbel.decay_rate = std::log(2.0) / static_cast<double>(c.train.steps);
  c.validate();
  return c;
}

Config Config::paper_scale(TaskKind task) {
  Config c;
  c.model.task = task == TaskKind::pose ? "pose" : "class";
  c.model.n_steps = task == TaskKind::pose ? 3 : 2;
  c.model.hidden_channels = 96;
  c.model.bank_channels = 96;
  c.model.grid = 56;
  c.model.backbone_channels = {8, 16, 32, 64};
  c.model.n_classes = 67;
  c.model.beta = 500.0;
  c.train.lr = 1e-4;
  c.train.batch = 40;
  c.train.steps = 30000;
  c.train.checkpoint_every = 1000;
  c.train.crop = 224;
  c.train.flip = task == TaskKind::classification;
  c.gumbel.tau0 = 1.0;
  c.gumbel.tau_min = 0.5;
  c.gumbel.decay_rate = std::log(2.0) / static_cast<double>(c.train.steps);
  c.validate();
  return c;
}

}  // namespace lsattn
