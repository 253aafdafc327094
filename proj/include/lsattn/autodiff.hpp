#pragma once

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "lsattn/tensor.hpp"

namespace lsattn {

enum class Padding { same, valid };
enum class Act { relu, leaky_relu, sigmoid, tanh };
enum class BnMode { train, eval };

// Per-channel batch-norm state. gamma/beta are trainable; running stats are
// updated as a side effect of train-mode forwards and consumed in eval mode.
struct BatchNormParams {
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;

  explicit BatchNormParams(int channels, double momentum_ = 0.99,
                           double epsilon_ = 1e-3);
  int channels() const { return gamma.dims[0]; }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {
struct TapeAccess;
}

// Append-only record of primitive applications. Append order is the
// topological order; backward() replays it once in reverse, accumulating
// adjoints additively across fan-out, then writes leaf gradients back into
// the external tensors they were created from.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers an external tensor. Repeated calls with the same address
  // return the same node, so a parameter used twice accumulates one grad.
  Var leaf(Tensor& t);
  Var constant(Tensor t);
  Var constant(std::vector<int> dims, std::vector<double> values);

  // Stable for the lifetime of the tape (nodes live in a deque).
  const Tensor& val(Var v) const;
  // Adjoint of a node; valid after backward() for requires-grad nodes.
  std::span<const double> grad(Var v) const;

  void backward(Var loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  friend struct detail::TapeAccess;

  struct Node {
    Tensor value;
    std::vector<double> adj;
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;
    Tensor* external = nullptr;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, int> leaf_ids_;
  bool swept_ = false;
};

// ---- primitive operations -------------------------------------------------
// Feature maps are (h,w,c) or batched (b,h,w,c); vectors are (n) or (b,n).

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise
Var scale(Tape& t, Var a, double c);

Var conv2d(Tape& t, Var input, Var kernel, Var bias, Padding pad);
Var dense(Tape& t, Var input, Var weight, Var bias);
Var activation(Tape& t, Var a, Act kind, double leaky_slope = 0.01);

Var softmax_spatial(Tape& t, Var a);        // (…,h,w,1), normalized over h*w
Var softmax_rows(Tape& t, Var a);           // (b,n), normalized per row
Var avg_pool_global(Tape& t, Var a);        // (…,h,w,c) -> (…,c)
Var avg_pool(Tape& t, Var a, int factor);   // block mean, h,w divisible
Var upsample_nearest(Tape& t, Var a, int factor);
Var batch_norm(Tape& t, Var a, BatchNormParams& params, BnMode mode);

Var concat_channels(Tape& t, std::span<const Var> parts);
// out(…,y,x,c) = map(…,y,x,0) * feat(…,y,x,c)
Var broadcast_mul_map(Tape& t, Var map, Var feat);
// out_b = sum_j weights(b,j) * entries[j]_b   with weights (b,k)
Var mix_bank(Tape& t, std::span<const Var> entries, Var weights);
// forward value is `hard`; gradient passes through to `soft` unchanged
Var straight_through(Tape& t, Var soft, Tensor hard);

Var sum_all(Tape& t, Var a);   // -> scalar [1]
Var mean_all(Tape& t, Var a);  // -> scalar [1]

// (h,w,c) -> (b,h,w,c) by replication; adjoint sums over the batch.
Var tile_batch(Tape& t, Var a, int b);
// (b,h,w,c) -> (b, h*w*c)
Var flatten(Tape& t, Var a);

// ‖x−x̂‖₂ + β‖q−q̂/‖q̂‖₂‖₂ per row; pred/label (b,7) or (7), rows [x(3),q(4)].
Var pose_loss(Tape& t, Var pred, const Tensor& label, double beta);
// softmax cross-entropy per row with the probability clamped below at 1e-12.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& labels);

// Count of ‖q̂‖ < 1e-12 degeneracies seen by pose_loss since process start.
uint64_t pose_loss_degeneracy_count();

}  // namespace lsattn
