#include "lsattn/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lsattn/errors.hpp"

namespace lsattn {

namespace fs = std::filesystem;

void write_image(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ContractError("write_image: channels must be 1 or 3");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_image: cannot open " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write_image: write failed for " + path.string());
}

namespace {

int read_pnm_int(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments per the PNM spec
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw IoError("read_image: malformed header in " + path);
  return value;
}

}  // namespace

Image read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_image: missing image " + path.string());
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6')) {
    throw IoError("read_image: " + path.string() + " is not binary PGM/PPM");
  }
  Image img;
  img.channels = kind == '5' ? 1 : 3;
  img.width = read_pnm_int(in, path.string());
  img.height = read_pnm_int(in, path.string());
  const int maxval = read_pnm_int(in, path.string());
  if (maxval != 255) throw IoError("read_image: only 8-bit images supported: " + path.string());
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw IoError("read_image: truncated payload in " + path.string());
  return img;
}

void write_manifest(const DatasetManifest& m) {
  const fs::path path = m.root / "manifest.txt";
  std::ofstream out(path);
  if (!out) throw IoError("write_manifest: cannot open " + path.string());
  out << "# task: " << (m.task == TaskKind::pose ? "pose" : "class") << "\n";
  out << "# mean:";
  char buf[64];
  for (double v : m.mean) {
    snprintf(buf, sizeof buf, " %.17g", v);
    out << buf;
  }
  out << "\n";
  for (const auto& e : m.entries) {
    out << e.path;
    if (m.task == TaskKind::pose) {
      const PoseLabel& p = e.label.pose;
      for (double v : p.x) {
        snprintf(buf, sizeof buf, " %.17g", v);
        out << buf;
      }
      for (double v : p.q) {
        snprintf(buf, sizeof buf, " %.17g", v);
        out << buf;
      }
    } else {
      out << " " << e.label.cls;
    }
    out << "\n";
  }
  if (!out) throw IoError("write_manifest: write failed for " + path.string());
}

DatasetManifest load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("load_manifest: cannot open " + manifest_path.string());
  DatasetManifest m;
  m.root = manifest_path.parent_path();
  std::string line;
  int line_no = 0;
  bool task_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string hash, key;
      ss >> hash >> key;
      if (key == "task:") {
        std::string task;
        ss >> task;
        if (task == "pose") {
          m.task = TaskKind::pose;
        } else if (task == "class") {
          m.task = TaskKind::classification;
        } else {
          throw IoError("manifest line " + std::to_string(line_no) +
                        ": unknown task '" + task + "'");
        }
        task_seen = true;
      } else if (key == "mean:") {
        if (!(ss >> m.mean[0] >> m.mean[1] >> m.mean[2])) {
          throw IoError("manifest line " + std::to_string(line_no) + ": bad mean header");
        }
      }
      continue;
    }
    if (!task_seen) {
      throw IoError("manifest line " + std::to_string(line_no) +
                    ": entry before '# task:' header");
    }
    DatasetManifest::Entry e;
    ss >> e.path;
    if (e.path.empty()) {
      throw IoError("manifest line " + std::to_string(line_no) + ": missing path");
    }
    if (m.task == TaskKind::pose) {
      std::array<double, 3> x{};
      std::array<double, 4> q{};
      if (!(ss >> x[0] >> x[1] >> x[2] >> q[0] >> q[1] >> q[2] >> q[3])) {
        throw IoError("manifest line " + std::to_string(line_no) +
                      ": expected 7 pose values");
      }
      e.label = TaskLabel::make_pose(x, q);
    } else {
      int cls = -1;
      if (!(ss >> cls) || cls < 0) {
        throw IoError("manifest line " + std::to_string(line_no) + ": bad class label");
      }
      e.label = TaskLabel::make_class(cls);
    }
    if (!fs::exists(m.root / e.path)) {
      throw IoError("manifest line " + std::to_string(line_no) + ": missing image " +
                    (m.root / e.path).string());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Image load_image_of(const DatasetManifest& m, size_t index) {
  if (index >= m.entries.size()) throw ContractError("dataset index out of range");
  return read_image(m.root / m.entries[index].path);
}

Tensor load_example(const DatasetManifest& m, size_t index, int crop, bool train_mode,
                    bool flip_enabled, Rng* rng) {
  const Image img = load_image_of(m, index);
  if (img.width < crop || img.height < crop) {
    throw ContractError("image " + m.entries[index].path + " smaller than crop");
  }
  int off_x = (img.width - crop) / 2;
  int off_y = (img.height - crop) / 2;
  bool flip = false;
  if (train_mode) {
    if (rng == nullptr) throw ContractError("train-mode loading needs an Rng");
    if (img.width > crop) off_x = static_cast<int>(rng->next_below(
        static_cast<uint64_t>(img.width - crop + 1)));
    if (img.height > crop) off_y = static_cast<int>(rng->next_below(
        static_cast<uint64_t>(img.height - crop + 1)));
    if (flip_enabled) flip = rng->next_below(2) == 1;
  }
  Tensor t({crop, crop, 1});
  for (int y = 0; y < crop; ++y) {
    for (int x = 0; x < crop; ++x) {
      const int sx = flip ? (crop - 1 - x) : x;
      double v = 0.0;
      if (img.channels == 1) {
        v = img.at(y + off_y, sx + off_x) / 255.0 - m.mean[0];
      } else {
        // grayscale conversion by channel average, mean per channel first
        double acc = 0.0;
        for (int c = 0; c < 3; ++c) {
          acc += img.at(y + off_y, sx + off_x, c) / 255.0 -
                 m.mean[static_cast<size_t>(c)];
        }
        v = acc / 3.0;
      }
      t.v[static_cast<size_t>(y * crop + x)] = v;
    }
  }
  return t;
}

}  // namespace lsattn
