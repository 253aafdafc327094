#include "lsattn/adam.hpp"

#include <cmath>

#include "lsattn/errors.hpp"
#include "lsattn/simd.hpp"

namespace lsattn {

AdamState::AdamState(const ParamRegistry& params) {
  for (const auto& it : params.items()) {
    m_.emplace_back(it.tensor->dims, 0.0);
    v_.emplace_back(it.tensor->dims, 0.0);
  }
}

void AdamState::step(const ParamRegistry& params, const AdamConfig& cfg) {
  const auto& items = params.items();
  if (items.size() != m_.size()) {
    throw ContractError("adam: registry size changed since state creation");
  }
  ++t_;
  const double inv_bc1 = 1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(t_)));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(t_)));
  const auto& ops = simd::active();
  for (size_t i = 0; i < items.size(); ++i) {
    Tensor& p = *items[i].tensor;
    if (!p.grad || p.grad->size() != p.v.size()) {
      throw ContractError("adam: missing gradient for parameter " + items[i].name);
    }
    ops.adam(p.v.data(), p.grad->data(), m_[i].v.data(), v_[i].v.data(), p.v.size(),
             cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, inv_bc1, inv_bc2);
  }
}

bool clip_gradients_global_norm(const ParamRegistry& params, double max_norm) {
  double sq = 0.0;
  for (const auto& it : params.items()) {
    if (!it.tensor->grad) {
      throw ContractError("clip: missing gradient for parameter " + it.name);
    }
    const auto& g = *it.tensor->grad;
    sq += simd::active().dot(g.data(), g.data(), g.size());
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return false;
  const double scale = max_norm / norm;
  for (const auto& it : params.items()) {
    auto& g = *it.tensor->grad;
    simd::active().scale(scale, g.data(), g.data(), g.size());
  }
  return true;
}

}  // namespace lsattn
