#include "lsattn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "lsattn/errors.hpp"

namespace lsattn {

std::string lsf_csv(const std::vector<double>& percentages) {
  std::ostringstream os;
  os << "layer,percent\n";
  char buf[48];
  for (size_t i = 0; i < percentages.size(); ++i) {
    snprintf(buf, sizeof buf, "%zu,%.17g\n", i, percentages[i]);
    os << buf;
  }
  return os.str();
}

std::string lsf_ascii_chart(const std::vector<double>& percentages) {
  std::ostringstream os;
  constexpr int width = 50;  // chars at 100%
  for (size_t i = 0; i < percentages.size(); ++i) {
    const int bars = static_cast<int>(std::lround(percentages[i] / 100.0 * width));
    char head[48];
    snprintf(head, sizeof head, "layer %zu %6.2f%% |", i, percentages[i]);
    os << head;
    for (int b = 0; b < bars; ++b) os << '#';
    os << "\n";
  }
  return os.str();
}

Image heatmap_image(const Tensor& attn_map, int target) {
  if (attn_map.rank() != 3 || attn_map.dims[2] != 1) {
    throw ShapeError("heatmap: expected (S,S,1) map, got " + shape_str(attn_map.dims));
  }
  const int s = attn_map.dims[0];
  if (attn_map.dims[1] != s || target < s) {
    throw ContractError("heatmap: map must be square and no larger than the target");
  }
  const double f = static_cast<double>(target) / s;
  std::vector<double> up(static_cast<size_t>(target) * target);
  for (int y = 0; y < target; ++y) {
    for (int x = 0; x < target; ++x) {
      // sample centers aligned: output pixel center maps to source coords
      const double sy = (y + 0.5) / f - 0.5;
      const double sx = (x + 0.5) / f - 0.5;
      const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, s - 1);
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, s - 1);
      const int y1 = std::min(y0 + 1, s - 1);
      const int x1 = std::min(x0 + 1, s - 1);
      const double wy = std::clamp(sy - y0, 0.0, 1.0);
      const double wx = std::clamp(sx - x0, 0.0, 1.0);
      const auto at = [&](int yy, int xx) {
        return attn_map.v[static_cast<size_t>(yy * s + xx)];
      };
      up[static_cast<size_t>(y * target + x)] =
          (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x1)) +
          wy * ((1.0 - wx) * at(y1, x0) + wx * at(y1, x1));
    }
  }
  double lo = up[0], hi = up[0];
  for (double v : up) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Image img;
  img.width = img.height = target;
  img.channels = 1;
  img.pixels.resize(up.size());
  if (hi <= lo) {
    // flat map: declared degenerate rule renders all zeros
    std::fill(img.pixels.begin(), img.pixels.end(), 0);
    return img;
  }
  for (size_t i = 0; i < up.size(); ++i) {
    img.pixels[i] = static_cast<uint8_t>(std::lround((up[i] - lo) / (hi - lo) * 255.0));
  }
  return img;
}

Image blend_overlay(const Image& base, const Image& heat) {
  if (base.width != heat.width || base.height != heat.height ||
      base.channels != 1 || heat.channels != 1) {
    throw ContractError("overlay: base and heat must be same-size grayscale");
  }
  Image out = base;
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<uint8_t>(
        std::lround(0.5 * base.pixels[i] + 0.5 * heat.pixels[i]));
  }
  return out;
}

Image center_crop_gray(const Image& img, int crop) {
  if (img.width < crop || img.height < crop) {
    throw ContractError("center_crop: image smaller than crop");
  }
  const int off_x = (img.width - crop) / 2;
  const int off_y = (img.height - crop) / 2;
  Image out;
  out.width = out.height = crop;
  out.channels = 1;
  out.pixels.resize(static_cast<size_t>(crop) * crop);
  for (int y = 0; y < crop; ++y) {
    for (int x = 0; x < crop; ++x) {
      int v = 0;
      for (int c = 0; c < img.channels; ++c) {
        v += img.at(y + off_y, x + off_x, c);
      }
      out.pixels[static_cast<size_t>(y * crop + x)] =
          static_cast<uint8_t>(v / img.channels);
    }
  }
  return out;
}

}  // namespace lsattn
