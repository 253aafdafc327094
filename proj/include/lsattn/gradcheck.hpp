#pragma once

#include <functional>
#include <vector>

#include "lsattn/autodiff.hpp"
#include "lsattn/rng.hpp"

namespace lsattn {

// A scalar-valued tensor program: rebuilt from scratch on a fresh tape for
// every evaluation, so it may close over parameter structs (their state is
// read-only apart from batch-norm running stats, which do not affect
// train-mode outputs).
using TensorProgram = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // When > 0, check only this many coordinates, sampled uniformly over all
  // inputs with `sampler` (required in that case).
  int sample_coords = 0;
  Rng* sampler = nullptr;
};

// Max over checked coordinates of
//   |analytic − central_difference| / max(1e-8, |analytic| + |numeric|).
// Throws ContractError if fn does not return a scalar or step <= 0.
double grad_check(const TensorProgram& fn, const std::vector<Tensor>& inputs,
                  const GradCheckOptions& opts = {});

}  // namespace lsattn
