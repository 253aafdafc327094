#include "lsattn/checkpoint.hpp"

#include <fstream>
#include <json.hpp>

#include "lsattn/errors.hpp"

namespace lsattn {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "lsattn.ckpt.v1";

std::vector<std::pair<std::string, std::vector<double>*>> bn_entries(Model& model) {
  auto state = model.bn_state();
  // order matches Model::bn_state(): attn mean/var, select mean/var
  return {{"bn.attn.running_mean", state[0]},
          {"bn.attn.running_var", state[1]},
          {"bn.select.running_mean", state[2]},
          {"bn.select.running_var", state[3]}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model,
                     AdamState& adam, const CheckpointMeta& meta) {
  json manifest;
  manifest["format"] = kFormat;
  manifest["step"] = meta.step;
  manifest["clip_events"] = meta.clip_events;
  manifest["seed"] = meta.seed;
  manifest["rng"] = {{"data", meta.data_counter}, {"noise", meta.noise_counter}};
  manifest["adam_t"] = adam.step_count();
  manifest["config"] = json::parse(model.config().to_json());
  json names = json::array();
  for (const auto& it : model.params().items()) names.push_back(it.name);
  manifest["params"] = names;
  json bn = json::array();
  for (const auto& [name, vec] : bn_entries(model)) {
    (void)vec;
    bn.push_back(name);
  }
  manifest["bn"] = bn;

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& it : model.params().items()) write_tensor(out, *it.tensor);
  for (const auto& [name, vec] : bn_entries(model)) {
    (void)name;
    write_tensor(out, Tensor({static_cast<int>(vec->size())}, *vec));
  }
  for (Tensor& t : adam.first_moments()) write_tensor(out, t);
  for (Tensor& t : adam.second_moments()) write_tensor(out, t);
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

namespace {

json read_manifest(std::ifstream& in, const std::filesystem::path& path) {
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || len == 0 || len > (1ull << 30)) {
    throw IoError("checkpoint: bad manifest header in " + path.string());
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint: truncated manifest in " + path.string());
  json m = json::parse(text, nullptr, false);
  if (m.is_discarded() || m.value("format", "") != kFormat) {
    throw IoError("checkpoint: unrecognized format in " + path.string());
  }
  return m;
}

}  // namespace

Config peek_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  const json m = read_manifest(in, path);
  return Config::from_json(m.at("config").dump());
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, Model& model,
                               AdamState& adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  const json m = read_manifest(in, path);

  const auto& items = model.params().items();
  const json& names = m.at("params");
  if (names.size() != items.size()) {
    throw IoError("checkpoint: parameter count mismatch in " + path.string());
  }
  for (size_t i = 0; i < items.size(); ++i) {
    if (names[i].get<std::string>() != items[i].name) {
      throw IoError("checkpoint: parameter order mismatch at " +
                    names[i].get<std::string>());
    }
  }
  for (const auto& it : items) {
    Tensor t = read_tensor(in);
    if (t.dims != it.tensor->dims) {
      throw IoError("checkpoint: shape mismatch for " + it.name);
    }
    it.tensor->v = std::move(t.v);
  }
  for (const auto& [name, vec] : bn_entries(model)) {
    Tensor t = read_tensor(in);
    if (t.v.size() != vec->size()) {
      throw IoError("checkpoint: shape mismatch for " + name);
    }
    *vec = std::move(t.v);
  }
  for (Tensor& t : adam.first_moments()) {
    Tensor r = read_tensor(in);
    if (r.dims != t.dims) throw IoError("checkpoint: adam moment shape mismatch");
    t.v = std::move(r.v);
  }
  for (Tensor& t : adam.second_moments()) {
    Tensor r = read_tensor(in);
    if (r.dims != t.dims) throw IoError("checkpoint: adam moment shape mismatch");
    t.v = std::move(r.v);
  }
  adam.set_step_count(m.at("adam_t").get<int64_t>());

  CheckpointMeta meta;
  meta.step = m.at("step").get<int64_t>();
  meta.clip_events = m.at("clip_events").get<int64_t>();
  meta.seed = m.at("seed").get<uint64_t>();
  meta.data_counter = m.at("rng").at("data").get<uint64_t>();
  meta.noise_counter = m.at("rng").at("noise").get<uint64_t>();
  return meta;
}

}  // namespace lsattn
