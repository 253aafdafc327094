#include "lsattn/attention.hpp"

#include <cmath>

#include "lsattn/errors.hpp"
#include "lsattn/gumbel.hpp"

namespace lsattn {

void ParamRegistry::add(std::string name, Tensor& t) {
  if (find(name)) throw ContractError("duplicate parameter name: " + name);
  t.requires_grad = true;
  items_.push_back({std::move(name), &t});
}

Tensor* ParamRegistry::find(const std::string& name) const {
  for (const Item& it : items_) {
    if (it.name == name) return it.tensor;
  }
  return nullptr;
}

int64_t ParamRegistry::total_coords() const {
  int64_t n = 0;
  for (const Item& it : items_) n += it.tensor->numel();
  return n;
}

void ParamRegistry::zero_grads() {
  for (const Item& it : items_) it.tensor->zero_grad();
}

void init_fan_in_uniform(Tensor& t, int fan_in, Rng& rng) {
  const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (double& x : t.v) x = limit * (2.0 * rng.next_uniform() - 1.0);
}

// ---- multi-conv -------------------------------------------------------------

MultiConvParams::MultiConvParams(std::vector<int> sizes, int c_in_, int c_out_,
                                 Combine combine_, Rng& rng, bool bias_trainable)
    : kernel_sizes(std::move(sizes)), combine(combine_), c_in(c_in_), c_out(c_out_) {
  if (kernel_sizes.empty()) throw ContractError("multi_conv: no kernel sizes");
  for (int k : kernel_sizes) {
    if (k < 1 || k % 2 == 0) {
      throw ContractError("multi_conv: kernel sizes must be odd, got " +
                          std::to_string(k));
    }
  }
  if (combine == Combine::concat &&
      c_out % static_cast<int>(kernel_sizes.size()) != 0) {
    throw ContractError("multi_conv: c_out " + std::to_string(c_out) +
                        " not divisible by branch count " +
                        std::to_string(kernel_sizes.size()));
  }
  const int bc = branch_channels();
  for (int k : kernel_sizes) {
    Tensor kernel({k, k, c_in, bc});
    init_fan_in_uniform(kernel, k * k * c_in, rng);
    kernel.requires_grad = true;
    kernels.push_back(std::move(kernel));
    Tensor bias({bc}, 0.0);
    bias.requires_grad = bias_trainable;
    biases.push_back(std::move(bias));
  }
}

int MultiConvParams::branch_channels() const {
  return combine == Combine::concat ? c_out / static_cast<int>(kernel_sizes.size())
                                    : c_out;
}

void MultiConvParams::register_params(ParamRegistry& reg, const std::string& prefix) {
  for (size_t i = 0; i < kernels.size(); ++i) {
    const std::string base = prefix + ".k" + std::to_string(kernel_sizes[i]);
    reg.add(base, kernels[i]);
    if (biases[i].requires_grad) reg.add(base + ".bias", biases[i]);
  }
}

Var multi_conv(Tape& t, Var input, MultiConvParams& params) {
  std::vector<Var> branches;
  branches.reserve(params.kernels.size());
  for (size_t i = 0; i < params.kernels.size(); ++i) {
    branches.push_back(conv2d(t, input, t.leaf(params.kernels[i]),
                              t.leaf(params.biases[i]), Padding::same));
  }
  if (params.combine == MultiConvParams::Combine::concat) {
    if (branches.size() == 1) return branches[0];
    return concat_channels(t, branches);
  }
  Var acc = branches[0];
  for (size_t i = 1; i < branches.size(); ++i) acc = add(t, acc, branches[i]);
  return acc;
}

// ---- conv-lstm --------------------------------------------------------------

ConvLstmParams::ConvLstmParams(int grid_, int input_channels_, int state_channels_,
                               std::vector<int> kernel_sizes, Rng& rng,
                               bool bias_trainable)
    : gate_i(kernel_sizes, input_channels_ + state_channels_, state_channels_,
             MultiConvParams::Combine::concat, rng, bias_trainable),
      gate_f(kernel_sizes, input_channels_ + state_channels_, state_channels_,
             MultiConvParams::Combine::concat, rng, bias_trainable),
      gate_o(kernel_sizes, input_channels_ + state_channels_, state_channels_,
             MultiConvParams::Combine::concat, rng, bias_trainable),
      gate_g(kernel_sizes, input_channels_ + state_channels_, state_channels_,
             MultiConvParams::Combine::concat, rng, bias_trainable),
      h0({grid_, grid_, state_channels_}, 0.0),
      c0({grid_, grid_, state_channels_}, 0.0),
      grid(grid_),
      input_channels(input_channels_),
      state_channels(state_channels_) {
  // forget-gate bias starts at +1 so early steps retain cell state
  for (Tensor& b : gate_f.biases) {
    for (double& x : b.v) x = 1.0;
  }
  h0.requires_grad = true;
  c0.requires_grad = true;
}

void ConvLstmParams::register_params(ParamRegistry& reg, const std::string& prefix) {
  gate_i.register_params(reg, prefix + ".gate_i");
  gate_f.register_params(reg, prefix + ".gate_f");
  gate_o.register_params(reg, prefix + ".gate_o");
  gate_g.register_params(reg, prefix + ".gate_g");
  reg.add(prefix + ".h0", h0);
  reg.add(prefix + ".c0", c0);
}

LstmState convlstm_step(Tape& t, Var x, LstmState state, ConvLstmParams& params) {
  const Tensor& xv = t.val(x);
  const Tensor& hv = t.val(state.h);
  const int xr = xv.rank(), hr = hv.rank();
  if (xv.dims[xr - 3] != hv.dims[hr - 3] || xv.dims[xr - 2] != hv.dims[hr - 2]) {
    throw ShapeError("convlstm_step: input " + shape_str(xv.dims) + " and state " +
                     shape_str(hv.dims) + " grids differ");
  }
  const std::vector<Var> xh = {x, state.h};
  Var cat = concat_channels(t, xh);
  Var gi = activation(t, multi_conv(t, cat, params.gate_i), Act::sigmoid);
  Var gf = activation(t, multi_conv(t, cat, params.gate_f), Act::sigmoid);
  Var go = activation(t, multi_conv(t, cat, params.gate_o), Act::sigmoid);
  Var gg = activation(t, multi_conv(t, cat, params.gate_g), Act::tanh);
  Var c_next = add(t, mul(t, gf, state.c), mul(t, gi, gg));
  Var h_next = mul(t, go, activation(t, c_next, Act::tanh));
  return {h_next, c_next};
}

// ---- spatial attention ------------------------------------------------------

SpatialAttentionParams::SpatialAttentionParams(int feature_channels,
                                               int hidden_channels,
                                               std::vector<int> kernel_sizes,
                                               Act nonlinearity_, Rng& rng,
                                               bool bias_trainable,
                                               double bn_momentum, double bn_epsilon)
    : embed_hidden(kernel_sizes, hidden_channels, feature_channels,
                   MultiConvParams::Combine::concat, rng, bias_trainable),
      mask(kernel_sizes, feature_channels, 1, MultiConvParams::Combine::sum, rng,
           bias_trainable),
      bn(1, bn_momentum, bn_epsilon),
      nonlinearity(nonlinearity_) {}

void SpatialAttentionParams::register_params(ParamRegistry& reg,
                                             const std::string& prefix) {
  embed_hidden.register_params(reg, prefix + ".E_h");
  mask.register_params(reg, prefix + ".C_A");
  reg.add(prefix + ".bn.gamma", bn.gamma);
  reg.add(prefix + ".bn.beta", bn.beta);
}

AttentionOut spatial_attention(Tape& t, Var features, Var hidden,
                               SpatialAttentionParams& params, BnMode mode) {
  Var h_att = multi_conv(t, hidden, params.embed_hidden);
  const Tensor& hv = t.val(h_att);
  const Tensor& fv = t.val(features);
  if (!same_dims(hv, fv)) {
    throw ShapeError("spatial_attention: embedded hidden " + shape_str(hv.dims) +
                     " does not match features " + shape_str(fv.dims));
  }
  Var f_att = activation(t, add(t, h_att, features), params.nonlinearity,
                         params.leaky_slope);
  Var raw_mask = multi_conv(t, f_att, params.mask);
  Var normed = batch_norm(t, raw_mask, params.bn, mode);
  Var attn = softmax_spatial(t, normed);
  Var gated = broadcast_mul_map(t, attn, features);
  return {gated, attn};
}

// ---- selection head ---------------------------------------------------------

SelectionHeadParams::SelectionHeadParams(int hidden_channels_, int bank_size_,
                                         int embed_dim_, Rng& rng,
                                         double bn_momentum, double bn_epsilon)
    : embed_w({hidden_channels_, embed_dim_}),
      embed_b({embed_dim_}, 0.0),
      bn(embed_dim_, bn_momentum, bn_epsilon),
      logits_w({embed_dim_, bank_size_}, 0.0),
      logits_b({bank_size_}, 0.0),
      hidden_channels(hidden_channels_),
      embed_dim(embed_dim_),
      bank_size(bank_size_) {
  if (bank_size_ < 1) throw ContractError("selection head: bank size must be >= 1");
  init_fan_in_uniform(embed_w, hidden_channels_, rng);
  embed_w.requires_grad = true;
  embed_b.requires_grad = true;
  logits_w.requires_grad = true;  // zero-initialized: untrained head is uniform
  logits_b.requires_grad = true;
}

void SelectionHeadParams::register_params(ParamRegistry& reg,
                                          const std::string& prefix) {
  reg.add(prefix + ".embed", embed_w);
  reg.add(prefix + ".embed.bias", embed_b);
  reg.add(prefix + ".bn.gamma", bn.gamma);
  reg.add(prefix + ".bn.beta", bn.beta);
  reg.add(prefix + ".logits", logits_w);
  reg.add(prefix + ".logits.bias", logits_b);
}

SelectionOut layer_select_head(Tape& t, Var hidden, SelectionHeadParams& params,
                               Rng& rng, double tau, BnMode bn_mode,
                               SelectionPath path, bool eval_noise,
                               const Tensor* noise_override) {
  Var pooled = avg_pool_global(t, hidden);
  Var embedded = dense(t, pooled, t.leaf(params.embed_w), t.leaf(params.embed_b));
  Var normed = batch_norm(t, embedded, params.bn, bn_mode);
  Var logits = dense(t, normed, t.leaf(params.logits_w), t.leaf(params.logits_b));

  const Tensor& lv = t.val(logits);
  const int b = lv.rank() == 2 ? lv.dims[0] : 1;
  const int k = params.bank_size;

  SelectionOut out;
  out.logits = logits;

  if (k == 1) {  // nothing to select; bypass the estimator entirely
    out.weights = t.constant(Tensor(lv.dims, 1.0));
    out.selected.assign(static_cast<size_t>(b), 0);
    return out;
  }

  const bool use_noise = path == SelectionPath::argmax ? eval_noise : true;
  Tensor noise;
  if (use_noise) {
    noise = noise_override ? *noise_override : sample_gumbel_noise(lv.dims, rng);
    if (!same_dims(noise, lv)) {
      throw ShapeError("layer_select_head: noise " + shape_str(noise.dims) +
                       " does not match logits " + shape_str(lv.dims));
    }
  }

  switch (path) {
    case SelectionPath::hard_st:
      out.weights = straight_through_select_with_noise(t, logits, noise, tau);
      break;
    case SelectionPath::soft:
      out.weights = gumbel_softmax_var(t, logits, noise, tau);
      break;
    case SelectionPath::argmax: {
      Tensor hard(lv.dims, 0.0);
      for (int bi = 0; bi < b; ++bi) {
        std::vector<double> keys(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
          keys[static_cast<size_t>(i)] =
              lv.v[static_cast<int64_t>(bi) * k + i] +
              (use_noise ? noise.v[static_cast<int64_t>(bi) * k + i] : 0.0);
        }
        hard.v[static_cast<int64_t>(bi) * k + argmax_index(keys)] = 1.0;
      }
      out.weights = t.constant(std::move(hard));
      break;
    }
  }

  const Tensor& wv = t.val(out.weights);
  out.selected.resize(static_cast<size_t>(b));
  for (int bi = 0; bi < b; ++bi) {
    std::span<const double> row(wv.data() + static_cast<int64_t>(bi) * k,
                                static_cast<size_t>(k));
    out.selected[static_cast<size_t>(bi)] = argmax_index(row);
  }
  if (use_noise) out.noise = std::move(noise);
  return out;
}

}  // namespace lsattn
