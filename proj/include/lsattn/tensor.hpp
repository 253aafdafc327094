#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lsattn {

// Dense row-major f64 tensor with an optional gradient slot.
//
// Rank conventions used throughout:
//   (h, w, c)        single feature map, channels innermost
//   (b, h, w, c)     batched feature maps
//   (n) / (b, n)     vectors / batched vectors
//   (kh, kw, ci, co) convolution kernels, output channels innermost
struct Tensor {
  std::vector<int> dims;
  std::vector<double> v;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> d, double fill = 0.0);
  Tensor(std::vector<int> d, std::vector<double> values);

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  bool is_scalar() const { return v.size() == 1; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  void zero_grad();
  bool all_finite() const;
};

int64_t numel_of(std::span<const int> dims);
std::string shape_str(std::span<const int> dims);
bool same_dims(const Tensor& a, const Tensor& b);

// Throws ShapeError naming both shapes when they differ.
void require_dims(const Tensor& t, std::span<const int> want, const char* what);

// Binary dump format shared by checkpoints and tests:
// magic "LSAT", u8 dtype (0 = f64 little-endian), u8 ndim,
// ndim x u32 little-endian extents, row-major f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace lsattn
