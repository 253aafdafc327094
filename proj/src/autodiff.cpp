#include "lsattn/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "lsattn/errors.hpp"
#include "lsattn/simd.hpp"
#include "tape_detail.hpp"

namespace lsattn {

using detail::TapeAccess;

BatchNormParams::BatchNormParams(int channels, double momentum_, double epsilon_)
    : gamma({channels}, 1.0),
      beta({channels}, 0.0),
      running_mean(channels, 0.0),
      running_var(channels, 1.0),
      momentum(momentum_),
      epsilon(epsilon_) {
  if (epsilon <= 0.0) throw ContractError("batch_norm epsilon must be > 0");
  if (momentum <= 0.0 || momentum >= 1.0) {
    throw ContractError("batch_norm momentum must be in (0,1)");
  }
  gamma.requires_grad = true;
  beta.requires_grad = true;
}

Var Tape::leaf(Tensor& t) {
  if (auto it = leaf_ids_.find(&t); it != leaf_ids_.end()) return Var{it->second};
  Node n;
  n.value = t;  // copy; tape values are immutable snapshots
  n.requires_grad = t.requires_grad;
  n.external = &t;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  leaf_ids_.emplace(&t, id);
  return Var{id};
}

Var Tape::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.value.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(std::vector<int> dims, std::vector<double> values) {
  return constant(Tensor(std::move(dims), std::move(values)));
}

const Tensor& Tape::val(Var v) const {
  detail::check_valid(v, "Tape::val");
  return nodes_[static_cast<size_t>(v.id)].value;
}

std::span<const double> Tape::grad(Var v) const {
  detail::check_valid(v, "Tape::grad");
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  if (!swept_) throw ContractError("Tape::grad: backward() has not run");
  return n.adj;
}

void Tape::backward(Var loss) {
  detail::check_valid(loss, "Tape::backward");
  Node& top = nodes_[static_cast<size_t>(loss.id)];
  if (!top.value.is_scalar()) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(top.value.dims));
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) n.adj.assign(n.value.v.size(), 0.0);
  }
  if (top.requires_grad) top.adj[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.requires_grad && n.back) n.back(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.external && n.requires_grad) n.external->grad = n.adj;
  }
  swept_ = true;
}

// ---- elementwise ------------------------------------------------------------

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!same_dims(a, b)) {
    std::ostringstream os;
    os << what << ": shape mismatch " << shape_str(a.dims) << " vs " << shape_str(b.dims);
    throw ShapeError(os.str());
  }
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  require_same(av, bv, "add");
  Tensor out(av.dims);
  simd::active().add(av.data(), bv.data(), out.data(), out.v.size());
  const bool rg = TapeAccess::wants(t, a.id) || TapeAccess::wants(t, b.id);
  const int ia = a.id, ib = b.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia, ib](Tape& tp, int self) {
    const auto& g = TapeAccess::adj(tp, self);
    if (TapeAccess::wants(tp, ia)) {
      simd::active().axpy(1.0, g.data(), TapeAccess::adj(tp, ia).data(), g.size());
    }
    if (TapeAccess::wants(tp, ib)) {
      simd::active().axpy(1.0, g.data(), TapeAccess::adj(tp, ib).data(), g.size());
    }
  })};
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  require_same(av, bv, "sub");
  Tensor out(av.dims);
  simd::active().sub(av.data(), bv.data(), out.data(), out.v.size());
  const bool rg = TapeAccess::wants(t, a.id) || TapeAccess::wants(t, b.id);
  const int ia = a.id, ib = b.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia, ib](Tape& tp, int self) {
    const auto& g = TapeAccess::adj(tp, self);
    if (TapeAccess::wants(tp, ia)) {
      simd::active().axpy(1.0, g.data(), TapeAccess::adj(tp, ia).data(), g.size());
    }
    if (TapeAccess::wants(tp, ib)) {
      simd::active().axpy(-1.0, g.data(), TapeAccess::adj(tp, ib).data(), g.size());
    }
  })};
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  require_same(av, bv, "mul");
  Tensor out(av.dims);
  simd::active().mul(av.data(), bv.data(), out.data(), out.v.size());
  const bool rg = TapeAccess::wants(t, a.id) || TapeAccess::wants(t, b.id);
  const int ia = a.id, ib = b.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia, ib](Tape& tp, int self) {
    const auto& g = TapeAccess::adj(tp, self);
    if (TapeAccess::wants(tp, ia)) {
      simd::active().madd(g.data(), TapeAccess::value(tp, ib).data(),
                          TapeAccess::adj(tp, ia).data(), g.size());
    }
    if (TapeAccess::wants(tp, ib)) {
      simd::active().madd(g.data(), TapeAccess::value(tp, ia).data(),
                          TapeAccess::adj(tp, ib).data(), g.size());
    }
  })};
}

Var scale(Tape& t, Var a, double c) {
  const Tensor& av = t.val(a);
  Tensor out(av.dims);
  simd::active().scale(c, av.data(), out.data(), out.v.size());
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia, c](Tape& tp, int self) {
    const auto& g = TapeAccess::adj(tp, self);
    simd::active().axpy(c, g.data(), TapeAccess::adj(tp, ia).data(), g.size());
  })};
}

Var activation(Tape& t, Var a, Act kind, double leaky_slope) {
  const Tensor& av = t.val(a);
  if (kind == Act::leaky_relu && (leaky_slope < 0.0 || leaky_slope >= 1.0)) {
    throw ContractError("leaky_relu slope must be in [0,1)");
  }
  Tensor out(av.dims);
  const size_t n = out.v.size();
  switch (kind) {
    case Act::relu:
      simd::active().relu(av.data(), out.data(), n);
      break;
    case Act::leaky_relu:
      simd::active().leaky_relu(leaky_slope, av.data(), out.data(), n);
      break;
    case Act::sigmoid:
      for (size_t i = 0; i < n; ++i) out.v[i] = 1.0 / (1.0 + std::exp(-av.v[i]));
      break;
    case Act::tanh:
      for (size_t i = 0; i < n; ++i) out.v[i] = std::tanh(av.v[i]);
      break;
  }
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(
      t, std::move(out), rg, [ia, kind, leaky_slope](Tape& tp, int self) {
        const auto& g = TapeAccess::adj(tp, self);
        auto& ga = TapeAccess::adj(tp, ia);
        const Tensor& x = TapeAccess::value(tp, ia);
        const Tensor& y = TapeAccess::value(tp, self);
        const size_t n = g.size();
        switch (kind) {
          case Act::relu:
            simd::active().relu_grad(x.data(), g.data(), ga.data(), n);
            break;
          case Act::leaky_relu:
            simd::active().leaky_relu_grad(leaky_slope, x.data(), g.data(),
                                           ga.data(), n);
            break;
          case Act::sigmoid:
            for (size_t i = 0; i < n; ++i) {
              ga[i] += g[i] * (y.v[i] * (1.0 - y.v[i]));
            }
            break;
          case Act::tanh:
            for (size_t i = 0; i < n; ++i) {
              ga[i] += g[i] * (1.0 - y.v[i] * y.v[i]);
            }
            break;
        }
      })};
}

Var straight_through(Tape& t, Var soft, Tensor hard) {
  const Tensor& sv = t.val(soft);
  require_same(sv, hard, "straight_through");
  const bool rg = TapeAccess::wants(t, soft.id);
  const int is = soft.id;
  hard.requires_grad = false;
  return Var{TapeAccess::push(t, std::move(hard), rg, [is](Tape& tp, int self) {
    const auto& g = TapeAccess::adj(tp, self);
    simd::active().axpy(1.0, g.data(), TapeAccess::adj(tp, is).data(), g.size());
  })};
}

Var sum_all(Tape& t, Var a) {
  const Tensor& av = t.val(a);
  double s = 0.0;
  for (double x : av.v) s += x;
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(t, Tensor({1}, {s}), rg, [ia](Tape& tp, int self) {
    const double g = TapeAccess::adj(tp, self)[0];
    auto& ga = TapeAccess::adj(tp, ia);
    for (double& x : ga) x += g;
  })};
}

Var mean_all(Tape& t, Var a) {
  const Tensor& av = t.val(a);
  const double inv = 1.0 / static_cast<double>(av.v.size());
  return scale(t, sum_all(t, a), inv);
}

}  // namespace lsattn
