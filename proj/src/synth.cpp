#include <cmath>
#include <numbers>

#include "lsattn/data.hpp"
#include "lsattn/errors.hpp"

// Synthetic dataset generators. Every pixel is a pure function of
// (seed, example index), so regeneration is byte-identical.

namespace lsattn {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

uint8_t quantize(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

struct Glyph {
  double cx, cy;
};

// scene landmarks sit inside the ±16 unit window but away from its edge
constexpr Glyph kDisk{-9.0, -9.0};
constexpr Glyph kCross{9.0, -9.0};
constexpr Glyph kRing{-9.0, 9.0};

double checkerboard(double u, double v, double period, double lo, double hi) {
  const auto iu = static_cast<long long>(std::floor(u / period));
  const auto iv = static_cast<long long>(std::floor(v / period));
  return ((iu + iv) & 1) ? lo : hi;
}

std::array<double, 3> dataset_mean_gray(const fs::path& dir,
                                        const std::vector<std::string>& files) {
  double acc = 0.0;
  int64_t count = 0;
  for (const auto& f : files) {
    const Image img = read_image(dir / f);
    for (uint8_t p : img.pixels) acc += p / 255.0;
    count += static_cast<int64_t>(img.pixels.size());
  }
  const double mean = count > 0 ? acc / static_cast<double>(count) : 0.0;
  return {mean, mean, mean};
}

}  // namespace

double pose_scene_intensity(double u, double v) {
  {
    const double dx = u - kDisk.cx, dy = v - kDisk.cy;
    if (dx * dx + dy * dy < 4.0 * 4.0) return 0.95;
  }
  {
    const double dx = std::abs(u - kCross.cx), dy = std::abs(v - kCross.cy);
    if ((dx < 1.2 && dy < 4.0) || (dy < 1.2 && dx < 4.0)) return 0.05;
  }
  {
    const double dx = u - kRing.cx, dy = v - kRing.cy;
    const double r2 = dx * dx + dy * dy;
    if (r2 > 2.5 * 2.5 && r2 < 4.0 * 4.0) return 0.95;
  }
  return checkerboard(u, v, 8.0, 0.3, 0.7);
}

Image render_pose_view(int size, double tx, double ty, double theta_rad) {
  Image img;
  img.width = img.height = size;
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(size) * size);
  const double center = (size - 1) / 2.0;
  const double ct = std::cos(theta_rad), st = std::sin(theta_rad);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - center, dy = y - center;
      const double u = ct * dx - st * dy + tx;
      const double v = st * dx + ct * dy + ty;
      img.pixels[static_cast<size_t>(y * size + x)] =
          quantize(pose_scene_intensity(u, v));
    }
  }
  return img;
}

DatasetManifest synth_pose(const SynthConfig& cfg, const fs::path& out_dir) {
  if (cfg.task != TaskKind::pose) throw ContractError("synth_pose: task must be pose");
  fs::create_directories(out_dir / "img");

  DatasetManifest m;
  m.root = out_dir;
  m.task = TaskKind::pose;

  std::vector<std::string> files;
  for (int idx = 0; idx < cfg.count; ++idx) {
    Rng rng(cfg.seed, static_cast<uint64_t>(idx));
    const double tx = cfg.translation_range * (2.0 * rng.next_uniform() - 1.0);
    const double ty = cfg.translation_range * (2.0 * rng.next_uniform() - 1.0);
    const double theta =
        cfg.rotation_range_deg * kPi / 180.0 * (2.0 * rng.next_uniform() - 1.0);

    const Image img = render_pose_view(cfg.image_size, tx, ty, theta);
    char name[32];
    snprintf(name, sizeof name, "img/%06d.pgm", idx);
    write_image(out_dir / name, img);
    files.emplace_back(name);

    DatasetManifest::Entry e;
    e.path = name;
    e.label = TaskLabel::make_pose(
        {tx, ty, 0.0}, {std::cos(theta / 2.0), 0.0, 0.0, std::sin(theta / 2.0)});
    m.entries.push_back(std::move(e));
  }

  m.mean = dataset_mean_gray(out_dir, files);
  write_manifest(m);
  return m;
}

namespace {

// Texture-class images: mid-gray + a coarse random confound + fine oriented
// grain. The confound is class-independent and dominates raw pixel
// distances, so nearest-neighbor matching on pixels stays at chance; the
// grain orientation is immediate for small oriented filters.
struct CoarseConfound {
  static constexpr int kKnots = 4;
  std::array<double, kKnots * kKnots> knots{};
  explicit CoarseConfound(Rng& rng) {
    for (double& v : knots) v = 0.4 * (2.0 * rng.next_uniform() - 1.0);
  }
  double at(int x, int y, int n) const {
    const double fx = (x + 0.5) / n * (kKnots - 1);
    const double fy = (y + 0.5) / n * (kKnots - 1);
    const int x0 = std::min(static_cast<int>(fx), kKnots - 2);
    const int y0 = std::min(static_cast<int>(fy), kKnots - 2);
    const double wx = fx - x0, wy = fy - y0;
    const auto k = [&](int yy, int xx) { return knots[static_cast<size_t>(yy * kKnots + xx)]; };
    return (1 - wy) * ((1 - wx) * k(y0, x0) + wx * k(y0, x0 + 1)) +
           wy * ((1 - wx) * k(y0 + 1, x0) + wx * k(y0 + 1, x0 + 1));
  }
};

struct OrientedGrain {
  std::vector<uint8_t> bits;
  int n, orientation, stride;
  OrientedGrain(int n_, int orientation_, Rng& rng)
      : bits(static_cast<size_t>((2 * n_ + 1) * (n_ / 2 + 2))),
        n(n_),
        orientation(orientation_),
        stride(n_ / 2 + 2) {
    for (auto& b : bits) b = static_cast<uint8_t>(rng.next_below(2));
  }
  // 1-pixel-wide streaks, two pixels long, running along the orientation
  double at(int x, int y) const {
    int across, along;
    switch (orientation & 3) {
      case 0: across = x; along = y; break;           // vertical streaks
      case 1: across = y; along = x; break;           // horizontal
      case 2: across = x + y; along = x - y + n; break;  // diagonal
      default: across = x - y + n; along = x + y; break;
    }
    const size_t q = static_cast<size_t>(across) * stride +
                     static_cast<size_t>(along / 2);
    return bits[q] ? 0.15 : -0.15;
  }
};

}  // namespace

DatasetManifest synth_class(const SynthConfig& cfg, const fs::path& out_dir) {
  if (cfg.task != TaskKind::classification) {
    throw ContractError("synth_class: task must be class");
  }
  if (cfg.n_classes < 2) throw ContractError("synth_class: need at least 2 classes");
  fs::create_directories(out_dir / "img");

  DatasetManifest m;
  m.root = out_dir;
  m.task = TaskKind::classification;

  const int n = cfg.image_size;
  // class family split: texture classes first, then layout classes
  int n_texture = 0;
  switch (cfg.signal) {
    case ClassSignal::texture: n_texture = cfg.n_classes; break;
    case ClassSignal::layout: n_texture = 0; break;
    case ClassSignal::mixed: n_texture = (cfg.n_classes + 1) / 2; break;
  }

  std::vector<std::string> files;
  for (int idx = 0; idx < cfg.count; ++idx) {
    const int cls = idx % cfg.n_classes;
    Rng rng(cfg.seed, static_cast<uint64_t>(idx));
    const double phase = 2.0 * kPi * rng.next_uniform();

    Image img;
    img.width = img.height = n;
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(n) * n);

    if (cls < n_texture) {
      const CoarseConfound coarse(rng);
      const OrientedGrain grain(n, cls, rng);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          img.pixels[static_cast<size_t>(y * n + x)] =
              quantize(0.5 + coarse.at(x, y, n) + grain.at(x, y));
        }
      }
    } else {
      const int layout_cls = cls - n_texture;
      // blob quadrant: spread over the four corners in class order
      const double qx = (layout_cls % 2 == 0) ? 0.25 : 0.75;
      const double qy = (layout_cls / 2 % 2 == 0) ? 0.25 : 0.75;
      const double jitter_x = 2.0 * (2.0 * rng.next_uniform() - 1.0);
      const double jitter_y = 2.0 * (2.0 * rng.next_uniform() - 1.0);
      const double bx = qx * n + jitter_x, by = qy * n + jitter_y;
      const double radius = 0.16 * n;
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          const double dx = x - bx, dy = y - by;
          double v;
          if (dx * dx + dy * dy < radius * radius) {
            v = 0.95;
          } else {
            // orientation-free fine background, phase-shifted per example
            v = checkerboard(x + phase, y + phase, 2.0, 0.35, 0.65);
          }
          img.pixels[static_cast<size_t>(y * n + x)] = quantize(v);
        }
      }
    }

    char name[32];
    snprintf(name, sizeof name, "img/%06d.pgm", idx);
    write_image(out_dir / name, img);
    files.emplace_back(name);

    DatasetManifest::Entry e;
    e.path = name;
    e.label = TaskLabel::make_class(cls);
    m.entries.push_back(std::move(e));
  }

  m.mean = dataset_mean_gray(out_dir, files);
  write_manifest(m);
  return m;
}

}  // namespace lsattn
