#pragma once

#include <utility>

#include "lsattn/autodiff.hpp"
#include "lsattn/errors.hpp"

// Internal access used by the op implementations.

namespace lsattn::detail {

struct TapeAccess {
  static const Tensor& value(const Tape& t, int id) { return t.nodes_[id].value; }

  static bool wants(const Tape& t, int id) { return t.nodes_[id].requires_grad; }

  static std::vector<double>& adj(Tape& t, int id) { return t.nodes_[id].adj; }

  static int push(Tape& t, Tensor value, bool requires_grad,
                  std::function<void(Tape&, int)> back) {
    Tape::Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    t.nodes_.push_back(std::move(n));
    return static_cast<int>(t.nodes_.size()) - 1;
  }
};

inline void check_valid(Var v, const char* what) {
  if (!v.valid()) throw ContractError(std::string(what) + ": invalid Var");
}

}  // namespace lsattn::detail
