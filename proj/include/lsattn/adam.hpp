#pragma once

#include <cstdint>
#include <vector>

#include "lsattn/params.hpp"

namespace lsattn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected ADAM over a parameter registry, applied in registration
// order. Moments are stored per parameter with matching shapes.
class AdamState {
 public:
  explicit AdamState(const ParamRegistry& params);

  // Consumes the gradients on each parameter tensor; throws ContractError
  // naming the parameter if one is missing.
  void step(const ParamRegistry& params, const AdamConfig& cfg);

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }

 private:
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

// Global L2 norm over all parameter gradients; scales them to `max_norm`
// when exceeded. Returns true when clipping happened.
bool clip_gradients_global_norm(const ParamRegistry& params, double max_norm);

}  // namespace lsattn
