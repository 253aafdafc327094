#pragma once

#include <string>
#include <vector>

#include "lsattn/data.hpp"
#include "lsattn/model.hpp"

namespace lsattn {

// `layer,percent` rows, one per bank layer.
std::string lsf_csv(const std::vector<double>& percentages);

// Fixed-width ASCII bars, one line per layer.
std::string lsf_ascii_chart(const std::vector<double>& percentages);

// Bilinear upsample of an attention map (S,S,1) to target x target, then
// min-max scaled to [0,255]. A flat map (min == max) renders as all zeros.
Image heatmap_image(const Tensor& attn_map, int target);

// 0.5 * base + 0.5 * heat, both target-sized grayscale.
Image blend_overlay(const Image& base, const Image& heat);

// Center crop of a raw image to crop x crop grayscale (for overlays).
Image center_crop_gray(const Image& img, int crop);

}  // namespace lsattn
