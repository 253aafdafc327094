#include "lsattn/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "lsattn/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor dump i/o assumes a little-endian host");

namespace lsattn {

int64_t numel_of(std::span<const int> dims) {
  int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int> d, double fill)
    : dims(std::move(d)), v(static_cast<size_t>(numel_of(dims)), fill) {
  for (int e : dims) {
    if (e <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(dims));
  }
}

Tensor::Tensor(std::vector<int> d, std::vector<double> values)
    : dims(std::move(d)), v(std::move(values)) {
  if (numel_of(dims) != static_cast<int64_t>(v.size())) {
    std::ostringstream os;
    os << "tensor value count " << v.size() << " does not match shape " << shape_str(dims);
    throw ShapeError(os.str());
  }
}

void Tensor::zero_grad() {
  if (!grad || grad->size() != v.size()) {
    grad.emplace(v.size(), 0.0);
  } else {
    std::fill(grad->begin(), grad->end(), 0.0);
  }
}

bool Tensor::all_finite() const {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string shape_str(std::span<const int> dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  s += "]";
  return s;
}

bool same_dims(const Tensor& a, const Tensor& b) { return a.dims == b.dims; }

void require_dims(const Tensor& t, std::span<const int> want, const char* what) {
  if (std::span<const int>(t.dims).size() == want.size() &&
      std::equal(t.dims.begin(), t.dims.end(), want.begin())) {
    return;
  }
  std::ostringstream os;
  os << what << ": expected shape " << shape_str(want) << ", got " << shape_str(t.dims);
  throw ShapeError(os.str());
}

namespace {
constexpr char kMagic[4] = {'L', 'S', 'A', 'T'};
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  const uint8_t dtype = 0;
  const uint8_t ndim = static_cast<uint8_t>(t.dims.size());
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  os.write(reinterpret_cast<const char*>(&ndim), 1);
  for (int d : t.dims) {
    const uint32_t e = static_cast<uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&e), 4);
  }
  os.write(reinterpret_cast<const char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(double)));
  if (!os) throw IoError("tensor dump write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("tensor dump: bad magic");
  }
  uint8_t dtype = 0xff, ndim = 0;
  is.read(reinterpret_cast<char*>(&dtype), 1);
  is.read(reinterpret_cast<char*>(&ndim), 1);
  if (!is || dtype != 0) throw IoError("tensor dump: unsupported dtype tag");
  std::vector<int> dims(ndim);
  for (int i = 0; i < ndim; ++i) {
    uint32_t e = 0;
    is.read(reinterpret_cast<char*>(&e), 4);
    dims[i] = static_cast<int>(e);
  }
  if (!is) throw IoError("tensor dump: truncated header");
  Tensor t(dims);
  is.read(reinterpret_cast<char*>(t.v.data()),
          static_cast<std::streamsize>(t.v.size() * sizeof(double)));
  if (!is) throw IoError("tensor dump: truncated payload");
  return t;
}

}  // namespace lsattn
