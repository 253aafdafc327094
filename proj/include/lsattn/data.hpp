#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lsattn/model.hpp"
#include "lsattn/rng.hpp"

namespace lsattn {

// 8-bit image, grayscale (1 channel, PGM P5) or RGB (3 channels, PPM P6).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;  // row-major, channels interleaved

  uint8_t at(int y, int x, int c = 0) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);

// Text manifest: `# task:` and `# mean:` header lines, then one entry per
// line (pose: `path tx ty tz qw qx qy qz`, class: `path label`). Paths are
// relative to the manifest's directory.
struct DatasetManifest {
  std::filesystem::path root;
  TaskKind task = TaskKind::pose;
  std::array<double, 3> mean{0.0, 0.0, 0.0};  // per channel, in [0,1] units
  struct Entry {
    std::string path;
    TaskLabel label;
  };
  std::vector<Entry> entries;
};

void write_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

// ---- synthetic datasets -----------------------------------------------------

enum class ClassSignal { texture, layout, mixed };

struct SynthConfig {
  TaskKind task = TaskKind::pose;
  int image_size = 32;
  int count = 100;
  uint64_t seed = 0;
  double translation_range = 4.0;   // pixels, pose task
  double rotation_range_deg = 45.0; // about the view axis, pose task
  int n_classes = 4;
  ClassSignal signal = ClassSignal::mixed;
};

// Procedural desk scene (checkerboard ground + three corner glyphs) rendered
// under an in-plane camera pose. Deterministic per seed.
DatasetManifest synth_pose(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// texture: classes differ only in fine-scale pattern; layout: classes differ
// only in the coarse placement of a blob; mixed: half of each.
DatasetManifest synth_class(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// Scene intensity in [0,1] at scene coordinates (u,v); exposed for tests.
double pose_scene_intensity(double u, double v);

// One rendered view of the fixed scene under the given in-plane pose;
// synth_pose calls this per example.
Image render_pose_view(int size, double tx, double ty, double theta_rad);

// ---- preprocessing ----------------------------------------------------------

// Decodes an entry, converts to [0,1] grayscale, subtracts the manifest mean,
// and crops to crop x crop (random offset + optional horizontal flip with
// `rng` in train mode, center crop otherwise). Returns (crop, crop, 1).
Tensor load_example(const DatasetManifest& m, size_t index, int crop, bool train_mode,
                    bool flip_enabled, Rng* rng);

// Raw (uncropped, unnormalized) image for overlays.
Image load_image_of(const DatasetManifest& m, size_t index);

}  // namespace lsattn
