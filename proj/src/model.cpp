#include "lsattn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lsattn/errors.hpp"
#include "lsattn/gumbel.hpp"

namespace lsattn {

TaskLabel TaskLabel::make_pose(const std::array<double, 3>& x,
                               const std::array<double, 4>& q) {
  double n2 = 0.0;
  for (double v : q) n2 += v * v;
  if (std::abs(std::sqrt(n2) - 1.0) > 1e-9) {
    throw ContractError("pose label quaternion must be unit length");
  }
  TaskLabel l;
  l.kind = TaskKind::pose;
  l.pose = {x, q};
  return l;
}

TaskLabel TaskLabel::make_class(int c) {
  TaskLabel l;
  l.kind = TaskKind::classification;
  l.cls = c;
  return l;
}

namespace {

const Config& validated(const Config& cfg) {
  cfg.validate();
  return cfg;
}

int output_dim_of(const Config& cfg) {
  return cfg.task() == TaskKind::pose ? 7 : cfg.model.n_classes;
}

}  // namespace

Model::Model(const Config& cfg, uint64_t seed)
    : cfg_(validated(cfg)),
      init_rng_(seed, 0),
      lstm_(cfg.model.grid, cfg.model.bank_channels, cfg.model.hidden_channels,
            cfg.model.lstm_kernel_sizes, init_rng_, /*bias_trainable=*/true),
      attn_(cfg.model.bank_channels, cfg.model.hidden_channels,
            cfg.attention.kernel_sizes, cfg.attention_nonlinearity(), init_rng_,
            cfg.tensor.conv_bias, cfg.train.bn_momentum, cfg.train.bn_epsilon),
      select_(cfg.model.hidden_channels, cfg.bank_size(), cfg.embed_dim(), init_rng_,
              cfg.train.bn_momentum, cfg.train.bn_epsilon),
      head_w_({cfg.aggregate_mode() == AggregateMode::channel
                   ? cfg.model.n_steps * cfg.model.hidden_channels
                   : cfg.model.n_steps * cfg.model.hidden_channels *
                         cfg.model.grid * cfg.model.grid,
               output_dim_of(cfg)}),
      head_b_({output_dim_of(cfg)}, 0.0) {
  attn_.leaky_slope = cfg.attention.leaky_slope;

  const auto& chans = cfg_.model.backbone_channels;
  int c_in = 1;
  for (size_t i = 0; i < chans.size(); ++i) {
    ConvStage s{Tensor({3, 3, c_in, chans[i]}), Tensor({chans[i]}, 0.0)};
    init_fan_in_uniform(s.kernel, 3 * 3 * c_in, init_rng_);
    backbone_.push_back(std::move(s));
    c_in = chans[i];
  }
  for (int ch : chans) {
    ConvStage e{Tensor({1, 1, ch, cfg_.model.bank_channels}),
                Tensor({cfg_.model.bank_channels}, 0.0)};
    init_fan_in_uniform(e.kernel, ch, init_rng_);
    bank_embed_.push_back(std::move(e));
  }
  init_fan_in_uniform(head_w_, head_w_.dims[0], init_rng_);

  for (size_t i = 0; i < backbone_.size(); ++i) {
    params_.add("backbone.stage" + std::to_string(i), backbone_[i].kernel);
    params_.add("backbone.stage" + std::to_string(i) + ".bias", backbone_[i].bias);
  }
  for (size_t i = 0; i < bank_embed_.size(); ++i) {
    params_.add("bank.embed" + std::to_string(i), bank_embed_[i].kernel);
    params_.add("bank.embed" + std::to_string(i) + ".bias", bank_embed_[i].bias);
  }
  lstm_.register_params(params_, "lstm");
  attn_.register_params(params_, "attn");
  select_.register_params(params_, "select");
  params_.add("head.weight", head_w_);
  params_.add("head.bias", head_b_);
}

int Model::output_dim() const { return output_dim_of(cfg_); }

std::vector<std::vector<double>*> Model::bn_state() {
  return {&attn_.bn.running_mean, &attn_.bn.running_var, &select_.bn.running_mean,
          &select_.bn.running_var};
}

Model::Forward Model::forward(Tape& t, const Tensor& images, BnMode mode,
                              Rng& noise_rng, double tau, SelectionPath path,
                              const std::vector<Tensor>* noise_override,
                              bool want_attn_maps) {
  const int crop = cfg_.train.crop;
  if (images.rank() != 4 || images.dims[1] != crop || images.dims[2] != crop ||
      images.dims[3] != 1) {
    throw ShapeError("model input: expected (b," + std::to_string(crop) + "," +
                     std::to_string(crop) + ",1), got " + shape_str(images.dims));
  }
  const int b = images.dims[0];
  const int grid = cfg_.model.grid;
  const int k = bank_size();
  const Ablation ablation = cfg_.ablation();

  // backbone features at decreasing resolution
  Var x = t.constant(images);
  std::vector<Var> features;
  for (size_t s = 0; s < backbone_.size(); ++s) {
    if (s > 0) x = avg_pool(t, x, 2);
    Var c = conv2d(t, x, t.leaf(backbone_[s].kernel), t.leaf(backbone_[s].bias),
                   Padding::same);
    Var f = activation(t, c, Act::relu);
    features.push_back(f);
    x = f;
  }

  // unify to the common grid and channel width
  std::vector<Var> bank;
  for (size_t i = 0; i < features.size(); ++i) {
    Var e = conv2d(t, features[i], t.leaf(bank_embed_[i].kernel),
                   t.leaf(bank_embed_[i].bias), Padding::same);
    bank.push_back(resample_to_grid(t, e, grid));
  }

  LstmState state{tile_batch(t, t.leaf(lstm_.h0), b),
                  tile_batch(t, t.leaf(lstm_.c0), b)};

  Forward out;
  out.traces.assign(static_cast<size_t>(b), ExampleTrace{});

  for (int step = 0; step < cfg_.model.n_steps; ++step) {
    SelectionOut sel;
    if (ablation == Ablation::spatial_only) {
      Tensor fixed({b, k}, 0.0);
      for (int bi = 0; bi < b; ++bi) {
        fixed.v[static_cast<int64_t>(bi) * k + cfg_.model.fixed_layer] = 1.0;
      }
      sel.weights = t.constant(std::move(fixed));
      sel.selected.assign(static_cast<size_t>(b), cfg_.model.fixed_layer);
    } else {
      const Tensor* override_t =
          noise_override ? &(*noise_override)[static_cast<size_t>(step)] : nullptr;
      sel = layer_select_head(t, state.h, select_, noise_rng, tau, mode, path,
                              cfg_.gumbel.eval_noise, override_t);
    }

    Var f_t = mix_bank(t, bank, sel.weights);

    Var x_t;
    Var attn_map;
    if (ablation == Ablation::layer_only) {
      x_t = f_t;
    } else {
      AttentionOut att = spatial_attention(t, f_t, state.h, attn_, mode);
      x_t = att.gated;
      attn_map = att.attn_map;
    }

    state = convlstm_step(t, x_t, state, lstm_);
    out.hidden_states.push_back(state.h);

    // per-example trace rows
    const Tensor& hv = t.val(state.h);
    const int64_t hslice = hv.numel() / b;
    for (int bi = 0; bi < b; ++bi) {
      StepTrace st;
      st.selected = sel.selected.empty() ? cfg_.model.fixed_layer
                                         : sel.selected[static_cast<size_t>(bi)];
      if (sel.logits.valid()) {
        const Tensor& lv = t.val(sel.logits);
        st.logits.assign(lv.data() + static_cast<int64_t>(bi) * k,
                         lv.data() + static_cast<int64_t>(bi) * k + k);
      }
      if (want_attn_maps && attn_map.valid()) {
        const Tensor& av = t.val(attn_map);
        const int64_t aslice = av.numel() / b;
        Tensor m({grid, grid, 1});
        std::copy(av.data() + bi * aslice, av.data() + (bi + 1) * aslice,
                  m.data());
        st.attn_map = std::move(m);
      }
      double acc = 0.0;
      for (int64_t i = 0; i < hslice; ++i) {
        acc += std::abs(hv.v[bi * hslice + i]);
      }
      st.hidden_mean_abs = acc / static_cast<double>(hslice);
      out.traces[static_cast<size_t>(bi)].steps.push_back(std::move(st));
    }
  }

  Var cat = concat_channels(t, out.hidden_states);
  Var pooled = cfg_.aggregate_mode() == AggregateMode::channel
                   ? avg_pool_global(t, cat)
                   : flatten(t, cat);
  out.prediction = dense(t, pooled, t.leaf(head_w_), t.leaf(head_b_));
  return out;
}

Var Model::loss(Tape& t, Var prediction, const std::vector<TaskLabel>& labels) const {
  const Tensor& pv = t.val(prediction);
  const int b = pv.dims[0];
  if (static_cast<int>(labels.size()) != b) {
    throw ContractError("loss: label count does not match batch size");
  }
  if (cfg_.task() == TaskKind::pose) {
    Tensor lab({b, 7});
    for (int bi = 0; bi < b; ++bi) {
      if (labels[static_cast<size_t>(bi)].kind != TaskKind::pose) {
        throw ContractError("loss: expected pose labels");
      }
      const PoseLabel& p = labels[static_cast<size_t>(bi)].pose;
      for (int i = 0; i < 3; ++i) lab.v[static_cast<int64_t>(bi) * 7 + i] = p.x[static_cast<size_t>(i)];
      for (int i = 0; i < 4; ++i) lab.v[static_cast<int64_t>(bi) * 7 + 3 + i] = p.q[static_cast<size_t>(i)];
    }
    return mean_all(t, pose_loss(t, prediction, lab, cfg_.model.beta));
  }
  std::vector<int> cls(static_cast<size_t>(b));
  for (int bi = 0; bi < b; ++bi) {
    if (labels[static_cast<size_t>(bi)].kind != TaskKind::classification) {
      throw ContractError("loss: expected class labels");
    }
    cls[static_cast<size_t>(bi)] = labels[static_cast<size_t>(bi)].cls;
  }
  return mean_all(t, cross_entropy(t, prediction, cls));
}

Var resample_to_grid(Tape& t, Var feature, int grid) {
  const Tensor& fv = t.val(feature);
  const int res = fv.dims[fv.rank() - 3];
  if (res > grid) return avg_pool(t, feature, res / grid);
  if (res < grid) return upsample_nearest(t, feature, grid / res);
  return feature;
}

double full_model_grad_check(Model& model, const Tensor& images,
                             const std::vector<TaskLabel>& labels, double tau,
                             int coords, Rng& rng, double fd_step) {
  const Config& cfg = model.config();
  const int b = images.dims[0];
  const int k = model.bank_size();

  // Condition the evaluation point: an untrained pose head predicts
  // q_hat ~ 0, and the normalization in the loss is nearly singular there,
  // which ruins finite differences (the analytic gradient is fine). Raising
  // the q_w bias puts the quaternion at unit scale for the duration.
  Tensor* head_bias = model.params().find("head.bias");
  const bool condition = cfg.task() == TaskKind::pose && head_bias != nullptr;
  if (condition) head_bias->v[3] += 1.0;

  // one frozen noise tensor per recurrent step, shared by every evaluation
  std::vector<Tensor> noise;
  for (int s = 0; s < cfg.model.n_steps; ++s) {
    noise.push_back(sample_gumbel_noise(std::vector<int>{b, k}, rng));
  }
  Rng unused(0, 77);

  const auto eval_loss = [&](bool record) -> double {
    Tape tape;
    Model::Forward fwd =
        model.forward(tape, images, BnMode::train, unused, tau,
                      SelectionPath::soft, &noise, /*want_attn_maps=*/false);
    Var loss = model.loss(tape, fwd.prediction, labels);
    const double value = tape.val(loss).v[0];
    if (record) tape.backward(loss);
    return value;
  };

  model.params().zero_grads();
  eval_loss(true);

  // snapshot analytic grads before probing
  std::vector<std::vector<double>> analytic;
  for (const auto& it : model.params().items()) {
    analytic.push_back(it.tensor->grad ? *it.tensor->grad
                                       : std::vector<double>(it.tensor->v.size(), 0.0));
  }

  const int64_t total = model.params().total_coords();
  double max_rel = 0.0;
  for (int c = 0; c < coords; ++c) {
    int64_t flat = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total)));
    size_t pi = 0;
    while (flat >= model.params().items()[pi].tensor->numel()) {
      flat -= model.params().items()[pi].tensor->numel();
      ++pi;
    }
    Tensor& p = *model.params().items()[pi].tensor;
    const double saved = p.v[static_cast<size_t>(flat)];
    p.v[static_cast<size_t>(flat)] = saved + fd_step;
    const double fp = eval_loss(false);
    p.v[static_cast<size_t>(flat)] = saved - fd_step;
    const double fm = eval_loss(false);
    p.v[static_cast<size_t>(flat)] = saved;
    const double numeric = (fp - fm) / (2.0 * fd_step);
    const double a = analytic[pi][static_cast<size_t>(flat)];
    double rel;
    if (a == 0.0) {
      // Structurally invariant directions exist (bias into a softmax, the
      // pre-softmax batch-norm shift): the analytic zero is exact, and the
      // only question is whether the probe sees anything above the
      // cancellation noise of the central difference.
      rel = std::abs(numeric) > 1e-6 ? 1.0 : 0.0;
    } else if (std::abs(a) < 1e-5 && std::abs(numeric) < 1e-5) {
      // Both sides agree the direction is flat to within the cancellation
      // noise of (f(x+h)-f(x-h))/2h at this loss magnitude; the relative
      // formula cannot resolve such coordinates. A wrong gradient still
      // trips one of the other branches because the sides then disagree
      // about the magnitude.
      rel = 0.0;
    } else {
      rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    }
    max_rel = std::max(max_rel, rel);
  }
  if (condition) head_bias->v[3] -= 1.0;
  return max_rel;
}

// ---- metrics ----------------------------------------------------------------

double angular_error_deg(const std::array<double, 4>& q,
                         const std::array<double, 4>& q_hat) {
  double nq = 0.0, nh = 0.0;
  for (int i = 0; i < 4; ++i) {
    nq += q[static_cast<size_t>(i)] * q[static_cast<size_t>(i)];
    nh += q_hat[static_cast<size_t>(i)] * q_hat[static_cast<size_t>(i)];
  }
  nq = std::sqrt(nq);
  nh = std::sqrt(nh);
  if (nq == 0.0 || nh == 0.0) {
    throw ContractError("angular_error: zero quaternion");
  }
  double dot = 0.0;
  for (int i = 0; i < 4; ++i) {
    dot += (q[static_cast<size_t>(i)] / nq) * (q_hat[static_cast<size_t>(i)] / nh);
  }
  dot = std::min(1.0, std::abs(dot));
  return 2.0 * std::acos(dot) * 180.0 / std::numbers::pi;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median: empty input");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EvalMetrics median_metrics(const std::vector<std::vector<double>>& predictions,
                           const std::vector<TaskLabel>& labels, TaskKind kind) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw ContractError("median_metrics: empty or mismatched evaluation set");
  }
  EvalMetrics m;
  m.kind = kind;
  if (kind == TaskKind::pose) {
    std::vector<double> pos, ang;
    for (size_t i = 0; i < predictions.size(); ++i) {
      const auto& p = predictions[i];
      const PoseLabel& l = labels[i].pose;
      double d2 = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double d = p[static_cast<size_t>(j)] - l.x[static_cast<size_t>(j)];
        d2 += d * d;
      }
      pos.push_back(std::sqrt(d2));
      ang.push_back(angular_error_deg(l.q, {p[3], p[4], p[5], p[6]}));
    }
    m.median_position = median(pos);
    m.median_orientation_deg = median(ang);
  } else {
    int64_t correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
      const auto& p = predictions[i];
      int best = 0;
      for (size_t j = 1; j < p.size(); ++j) {
        if (p[j] > p[static_cast<size_t>(best)]) best = static_cast<int>(j);
      }
      if (best == labels[i].cls) ++correct;
    }
    m.mean_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  }
  return m;
}

std::vector<double> lsf_histogram(const std::vector<ExampleTrace>& traces, int k) {
  if (traces.empty()) throw ContractError("lsf_histogram: no traces");
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  int64_t total = 0;
  for (const ExampleTrace& tr : traces) {
    for (const StepTrace& st : tr.steps) {
      if (st.selected < 0 || st.selected >= k) {
        throw ContractError("lsf_histogram: selection index out of range");
      }
      counts[static_cast<size_t>(st.selected)]++;
      ++total;
    }
  }
  if (total == 0) throw ContractError("lsf_histogram: traces contain no steps");
  std::vector<double> pct(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    pct[static_cast<size_t>(i)] =
        100.0 * static_cast<double>(counts[static_cast<size_t>(i)]) /
        static_cast<double>(total);
  }
  return pct;
}

}  // namespace lsattn
