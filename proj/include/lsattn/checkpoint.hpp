#pragma once

#include <filesystem>

#include "lsattn/adam.hpp"
#include "lsattn/config.hpp"
#include "lsattn/model.hpp"

namespace lsattn {

// Single-file checkpoint: a length-prefixed JSON manifest (config echo, step
// count, named parameter list, optimizer/rng bookkeeping) followed by the
// named tensors as concatenated dumps, in manifest order.
struct CheckpointMeta {
  int64_t step = 0;
  int64_t clip_events = 0;
  uint64_t seed = 0;
  uint64_t data_counter = 0;
  uint64_t noise_counter = 0;
};

void save_checkpoint(const std::filesystem::path& path, Model& model,
                     AdamState& adam, const CheckpointMeta& meta);

// Reads the embedded config without touching tensors.
Config peek_checkpoint_config(const std::filesystem::path& path);

// Restores tensors into an already-constructed model (shapes and names must
// match its registry) and returns the bookkeeping.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, Model& model,
                               AdamState& adam);

}  // namespace lsattn
