#pragma once

#include <string>
#include <vector>

#include "lsattn/tensor.hpp"

namespace lsattn {

// Ordered registry of named trainable tensors. Registration order is the
// canonical order for optimizer state and checkpoints.
class ParamRegistry {
 public:
  struct Item {
    std::string name;
    Tensor* tensor;
  };

  void add(std::string name, Tensor& t);
  const std::vector<Item>& items() const { return items_; }
  Tensor* find(const std::string& name) const;
  int64_t total_coords() const;
  void zero_grads();

 private:
  std::vector<Item> items_;
};

// Fan-in scaled uniform init, limit sqrt(3 / fan_in).
void init_fan_in_uniform(Tensor& t, int fan_in, class Rng& rng);

}  // namespace lsattn
