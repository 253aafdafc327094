#pragma once

#include <optional>
#include <vector>

#include "lsattn/autodiff.hpp"
#include "lsattn/params.hpp"
#include "lsattn/rng.hpp"

namespace lsattn {

// Inception-style bank of same-padded convolutions with distinct odd kernel
// sizes. `concat` stacks the branch outputs channel-wise (c_out split evenly
// across branches); `sum` gives every branch c_out channels and adds them,
// which is how the single-channel attention mask stays a multi-conv.
struct MultiConvParams {
  enum class Combine { concat, sum };

  std::vector<int> kernel_sizes;
  Combine combine = Combine::concat;
  int c_in = 0;
  int c_out = 0;
  std::vector<Tensor> kernels;  // one per branch, (k,k,c_in,branch_out)
  std::vector<Tensor> biases;   // one per branch, (branch_out)

  MultiConvParams(std::vector<int> sizes, int c_in, int c_out, Combine combine,
                  Rng& rng, bool bias_trainable = true);
  int branch_channels() const;
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

Var multi_conv(Tape& t, Var input, MultiConvParams& params);

// Conv-LSTM cell over multi-convolutional gates (no peepholes). The four
// gates each see the channel concatenation [x; h]. Initial states are full
// trainable tensors.
struct ConvLstmParams {
  MultiConvParams gate_i, gate_f, gate_o, gate_g;
  Tensor h0, c0;  // (grid, grid, state_channels)
  int grid = 0;
  int input_channels = 0;
  int state_channels = 0;

  ConvLstmParams(int grid, int input_channels, int state_channels,
                 std::vector<int> kernel_sizes, Rng& rng, bool bias_trainable = true);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

struct LstmState {
  Var h, c;
};

LstmState convlstm_step(Tape& t, Var x, LstmState state, ConvLstmParams& params);

// Soft spatial attention: embed the hidden state to the feature width, add,
// apply the nonlinearity, reduce to a single-channel map (batch-normed before
// the softmax), normalize over positions, and gate the features.
struct SpatialAttentionParams {
  MultiConvParams embed_hidden;  // E_h: d_h -> d
  MultiConvParams mask;          // C_A: d -> 1 (sum combine)
  BatchNormParams bn;            // over the 1-channel mask
  Act nonlinearity = Act::relu;
  double leaky_slope = 0.01;

  SpatialAttentionParams(int feature_channels, int hidden_channels,
                         std::vector<int> kernel_sizes, Act nonlinearity, Rng& rng,
                         bool bias_trainable = true, double bn_momentum = 0.99,
                         double bn_epsilon = 1e-3);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

struct AttentionOut {
  Var gated;     // A ⊙ f, same shape as f
  Var attn_map;  // (…,h,w,1), positive, sums to 1 per example
};

AttentionOut spatial_attention(Tape& t, Var features, Var hidden,
                               SpatialAttentionParams& params, BnMode mode);

// Layer-selection head: global average pool, gate embedding, batch norm,
// then a zero-initialized logit layer so an untrained head selects uniformly.
struct SelectionHeadParams {
  Tensor embed_w, embed_b;    // d_h -> E
  BatchNormParams bn;         // over E
  Tensor logits_w, logits_b;  // E -> k
  int hidden_channels = 0;
  int embed_dim = 0;
  int bank_size = 0;

  SelectionHeadParams(int hidden_channels, int bank_size, int embed_dim, Rng& rng,
                      double bn_momentum = 0.99, double bn_epsilon = 1e-3);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// Which value flows forward out of the selection.
enum class SelectionPath {
  hard_st,  // hard one-hot forward, soft gradient (training)
  soft,     // the relaxation itself flows (gradient checking)
  argmax    // noise-free hard selection, nothing differentiable (eval)
};

struct SelectionOut {
  Var weights;                // (b,k) mixing weights fed to the bank
  Var logits;                 // (b,k)
  std::vector<int> selected;  // per example; argmax of the forward weights
  Tensor noise;               // (b,k); empty when no noise was used
};

SelectionOut layer_select_head(Tape& t, Var hidden, SelectionHeadParams& params,
                               Rng& rng, double tau, BnMode bn_mode,
                               SelectionPath path, bool eval_noise = false,
                               const Tensor* noise_override = nullptr);

}  // namespace lsattn
