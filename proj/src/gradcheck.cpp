#include "lsattn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lsattn/errors.hpp"

namespace lsattn {

namespace {

double eval_scalar(const TensorProgram& fn, std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (Tensor& t : inputs) vars.push_back(tape.leaf(t));
  const Var out = fn(tape, vars);
  const Tensor& v = tape.val(out);
  if (!v.is_scalar()) {
    throw ContractError("grad_check: program output must be scalar, got " +
                        shape_str(v.dims));
  }
  return v.v[0];
}

}  // namespace

double grad_check(const TensorProgram& fn, const std::vector<Tensor>& inputs,
                  const GradCheckOptions& opts) {
  if (opts.step <= 0.0) throw ContractError("grad_check: step must be > 0");
  if (opts.sample_coords > 0 && opts.sampler == nullptr) {
    throw ContractError("grad_check: coordinate sampling requires an Rng");
  }

  // Analytic pass.
  std::vector<Tensor> work = inputs;
  for (Tensor& t : work) t.requires_grad = true;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(work.size());
    for (Tensor& t : work) vars.push_back(tape.leaf(t));
    const Var out = fn(tape, vars);
    const Tensor& v = tape.val(out);
    if (!v.is_scalar()) {
      throw ContractError("grad_check: program output must be scalar, got " +
                          shape_str(v.dims));
    }
    tape.backward(out);
  }

  // Coordinates to probe.
  std::vector<std::pair<int, int64_t>> coords;
  if (opts.sample_coords > 0) {
    int64_t total = 0;
    for (const Tensor& t : work) total += t.numel();
    for (int i = 0; i < opts.sample_coords; ++i) {
      int64_t flat = static_cast<int64_t>(
          opts.sampler->next_below(static_cast<uint64_t>(total)));
      for (size_t j = 0; j < work.size(); ++j) {
        if (flat < work[j].numel()) {
          coords.emplace_back(static_cast<int>(j), flat);
          break;
        }
        flat -= work[j].numel();
      }
    }
  } else {
    for (size_t j = 0; j < work.size(); ++j) {
      for (int64_t k = 0; k < work[j].numel(); ++k) {
        coords.emplace_back(static_cast<int>(j), k);
      }
    }
  }

  // FD probes run without gradient recording.
  std::vector<Tensor> probe = inputs;
  for (Tensor& t : probe) t.requires_grad = false;

  const double h = opts.step;
  double max_rel = 0.0;
  for (auto [j, k] : coords) {
    const double saved = probe[j].v[k];
    probe[j].v[k] = saved + h;
    const double fp = eval_scalar(fn, probe);
    probe[j].v[k] = saved - h;
    const double fm = eval_scalar(fn, probe);
    probe[j].v[k] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = work[j].grad ? (*work[j].grad)[k] : 0.0;
    const double rel = std::abs(analytic - numeric) /
                       std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace lsattn
