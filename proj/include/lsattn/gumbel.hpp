#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lsattn/autodiff.hpp"
#include "lsattn/rng.hpp"

namespace lsattn {

// Exponential temperature decay clamped below at tau_min.
struct TemperatureSchedule {
  double tau0 = 1.0;
  double tau_min = 0.5;
  double decay_rate = 0.0;
};

double anneal(const TemperatureSchedule& s, int64_t step);

double gumbel_sample(Rng& rng);

// Ties break toward the lowest index.
int argmax_index(std::span<const double> v);
std::vector<double> one_hot(int k, int index);

// z = one_hot(argmax(logits + g)), g ~ Gumbel(0,1) i.i.d.
std::vector<double> gumbel_max_select(std::span<const double> logits, Rng& rng);

// y_i = softmax((logits + noise) / tau); plain math, no tape.
std::vector<double> gumbel_softmax(std::span<const double> logits,
                                   std::span<const double> noise, double tau);

// Tape version of the relaxation; logits (k) or (b,k), noise same shape.
Var gumbel_softmax_var(Tape& t, Var logits, const Tensor& noise, double tau);

// Forward value is the hard one-hot of (logits + noise); the backward pass
// carries the gradient of the matching soft relaxation. Rows are handled
// independently for (b,k) logits.
Var straight_through_select_with_noise(Tape& t, Var logits, const Tensor& noise,
                                       double tau);
// Same, with noise freshly sampled from rng (row-major order).
Var straight_through_select(Tape& t, Var logits, Rng& rng, double tau);

// Fresh Gumbel noise with the same shape as `dims`.
Tensor sample_gumbel_noise(std::span<const int> dims, Rng& rng);

}  // namespace lsattn
