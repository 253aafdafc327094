#include "lsattn/gumbel.hpp"

#include <cmath>

#include "lsattn/errors.hpp"

namespace lsattn {

double anneal(const TemperatureSchedule& s, int64_t step) {
  if (s.tau0 <= 0.0 || s.tau_min <= 0.0 || s.tau_min > s.tau0 || s.decay_rate < 0.0) {
    throw ContractError("anneal: invalid temperature schedule");
  }
  const double tau = s.tau0 * std::exp(-s.decay_rate * static_cast<double>(step));
  return tau < s.tau_min ? s.tau_min : tau;
}

double gumbel_sample(Rng& rng) { return rng.next_gumbel(); }

int argmax_index(std::span<const double> v) {
  if (v.empty()) throw ContractError("argmax_index: empty input");
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<double> one_hot(int k, int index) {
  if (index < 0 || index >= k) throw ContractError("one_hot: index out of range");
  std::vector<double> z(static_cast<size_t>(k), 0.0);
  z[static_cast<size_t>(index)] = 1.0;
  return z;
}

std::vector<double> gumbel_max_select(std::span<const double> logits, Rng& rng) {
  const int k = static_cast<int>(logits.size());
  if (k < 1) throw ContractError("gumbel_max_select: k must be >= 1");
  std::vector<double> keys(logits.begin(), logits.end());
  for (double& x : keys) x += gumbel_sample(rng);
  return one_hot(k, argmax_index(keys));
}

std::vector<double> gumbel_softmax(std::span<const double> logits,
                                   std::span<const double> noise, double tau) {
  if (tau <= 0.0) throw ContractError("gumbel_softmax: tau must be > 0");
  if (logits.size() != noise.size()) {
    throw ContractError("gumbel_softmax: logits/noise length mismatch");
  }
  std::vector<double> z(logits.size());
  for (size_t i = 0; i < z.size(); ++i) z[i] = (logits[i] + noise[i]) / tau;
  double m = z[0];
  for (double x : z) m = x > m ? x : m;
  double s = 0.0;
  for (double& x : z) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : z) x /= s;
  return z;
}

Tensor sample_gumbel_noise(std::span<const int> dims, Rng& rng) {
  Tensor t(std::vector<int>(dims.begin(), dims.end()));
  for (double& x : t.v) x = gumbel_sample(rng);
  return t;
}

Var gumbel_softmax_var(Tape& t, Var logits, const Tensor& noise, double tau) {
  if (tau <= 0.0) throw ContractError("gumbel_softmax: tau must be > 0");
  const Tensor& lv = t.val(logits);
  if (!same_dims(lv, noise)) {
    throw ShapeError("gumbel_softmax: noise " + shape_str(noise.dims) +
                     " does not match logits " + shape_str(lv.dims));
  }
  Tensor n = noise;
  n.requires_grad = false;
  const Var keyed = add(t, logits, t.constant(std::move(n)));
  return softmax_rows(t, scale(t, keyed, 1.0 / tau));
}

Var straight_through_select_with_noise(Tape& t, Var logits, const Tensor& noise,
                                       double tau) {
  const Tensor& lv = t.val(logits);
  const Var soft = gumbel_softmax_var(t, logits, noise, tau);
  const int rows = lv.rank() == 2 ? lv.dims[0] : 1;
  const int k = lv.rank() == 2 ? lv.dims[1] : lv.dims[0];
  Tensor hard(lv.dims);
  for (int r = 0; r < rows; ++r) {
    std::vector<double> keys(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      keys[static_cast<size_t>(i)] =
          lv.v[static_cast<int64_t>(r) * k + i] + noise.v[static_cast<int64_t>(r) * k + i];
    }
    hard.v[static_cast<int64_t>(r) * k + argmax_index(keys)] = 1.0;
  }
  return straight_through(t, soft, std::move(hard));
}

Var straight_through_select(Tape& t, Var logits, Rng& rng, double tau) {
  const Tensor noise = sample_gumbel_noise(t.val(logits).dims, rng);
  return straight_through_select_with_noise(t, logits, noise, tau);
}

}  // namespace lsattn
