#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "lsattn/autodiff.hpp"
#include "lsattn/errors.hpp"
#include "lsattn/simd.hpp"
#include "tape_detail.hpp"

namespace lsattn {

using detail::TapeAccess;

namespace {

// Max-subtracted softmax over `rows` contiguous groups of length n.
void softmax_forward(const double* x, double* y, int64_t rows, int64_t n) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n;
    double* yr = y + r * n;
    double m = xr[0];
    for (int64_t i = 1; i < n; ++i) m = xr[i] > m ? xr[i] : m;
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - m);
      s += yr[i];
    }
    const double inv = 1.0 / s;
    for (int64_t i = 0; i < n; ++i) yr[i] *= inv;
  }
}

void softmax_backward(const double* y, const double* g, double* gx, int64_t rows,
                      int64_t n) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* yr = y + r * n;
    const double* gr = g + r * n;
    double* gxr = gx + r * n;
    double dot = 0.0;
    for (int64_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
    for (int64_t i = 0; i < n; ++i) gxr[i] += yr[i] * (gr[i] - dot);
  }
}

Var softmax_grouped(Tape& t, Var a, int64_t rows, int64_t n) {
  const Tensor& av = t.val(a);
  Tensor out(av.dims);
  softmax_forward(av.data(), out.data(), rows, n);
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia, rows, n](Tape& tp, int self) {
    softmax_backward(TapeAccess::value(tp, self).data(),
                     TapeAccess::adj(tp, self).data(),
                     TapeAccess::adj(tp, ia).data(), rows, n);
  })};
}

std::atomic<uint64_t> g_pose_degeneracies{0};

}  // namespace

Var softmax_spatial(Tape& t, Var a) {
  const Tensor& av = t.val(a);
  int64_t rows, n;
  if (av.rank() == 3 && av.dims[2] == 1) {
    rows = 1;
    n = static_cast<int64_t>(av.dims[0]) * av.dims[1];
  } else if (av.rank() == 4 && av.dims[3] == 1) {
    rows = av.dims[0];
    n = static_cast<int64_t>(av.dims[1]) * av.dims[2];
  } else {
    throw ShapeError("softmax_spatial: expected single-channel map, got " +
                     shape_str(av.dims));
  }
  return softmax_grouped(t, a, rows, n);
}

Var softmax_rows(Tape& t, Var a) {
  const Tensor& av = t.val(a);
  if (av.rank() == 1) return softmax_grouped(t, a, 1, av.dims[0]);
  if (av.rank() == 2) return softmax_grouped(t, a, av.dims[0], av.dims[1]);
  throw ShapeError("softmax_rows: expected rank 1 or 2, got " + shape_str(av.dims));
}

Var batch_norm(Tape& t, Var a, BatchNormParams& params, BnMode mode) {
  const Tensor& in = t.val(a);
  int b, h, w, c;
  if (in.rank() == 2) {
    b = in.dims[0]; h = 1; w = 1; c = in.dims[1];
  } else if (in.rank() == 4) {
    b = in.dims[0]; h = in.dims[1]; w = in.dims[2]; c = in.dims[3];
  } else {
    throw ShapeError("batch_norm: expected (b,c) or (b,h,w,c), got " +
                     shape_str(in.dims));
  }
  if (c != params.channels()) {
    std::ostringstream os;
    os << "batch_norm: input " << shape_str(in.dims) << " vs params with "
       << params.channels() << " channels";
    throw ShapeError(os.str());
  }
  const int64_t count = static_cast<int64_t>(b) * h * w;
  const double invn = 1.0 / static_cast<double>(count);
  const double eps = params.epsilon;

  Var vg = t.leaf(params.gamma);
  Var vb = t.leaf(params.beta);

  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (mode == BnMode::train) {
    std::vector<double> var(c, 0.0);
    for (int64_t p = 0; p < count; ++p) {
      const double* row = in.data() + p * c;
      for (int ch = 0; ch < c; ++ch) mean[ch] += row[ch];
    }
    for (int ch = 0; ch < c; ++ch) mean[ch] *= invn;
    for (int64_t p = 0; p < count; ++p) {
      const double* row = in.data() + p * c;
      for (int ch = 0; ch < c; ++ch) {
        const double d = row[ch] - mean[ch];
        var[ch] += d * d;
      }
    }
    for (int ch = 0; ch < c; ++ch) var[ch] *= invn;
    for (int ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    const double mom = params.momentum;
    for (int ch = 0; ch < c; ++ch) {
      params.running_mean[ch] = mom * params.running_mean[ch] + (1.0 - mom) * mean[ch];
      params.running_var[ch] = mom * params.running_var[ch] + (1.0 - mom) * var[ch];
    }
  } else {
    mean = params.running_mean;
    for (int ch = 0; ch < c; ++ch) {
      inv_std[ch] = 1.0 / std::sqrt(params.running_var[ch] + eps);
    }
  }

  Tensor out(in.dims);
  std::vector<double> xhat(in.v.size());
  const Tensor& gamma = t.val(vg);
  const Tensor& beta = t.val(vb);
  for (int64_t p = 0; p < count; ++p) {
    const double* row = in.data() + p * c;
    double* xr = xhat.data() + p * c;
    double* orow = out.data() + p * c;
    for (int ch = 0; ch < c; ++ch) {
      xr[ch] = (row[ch] - mean[ch]) * inv_std[ch];
      orow[ch] = gamma.v[ch] * xr[ch] + beta.v[ch];
    }
  }

  const bool rg = TapeAccess::wants(t, a.id) || TapeAccess::wants(t, vg.id) ||
                  TapeAccess::wants(t, vb.id);
  const int ia = a.id, ig = vg.id, ib = vb.id;
  const bool train = mode == BnMode::train;
  return Var{TapeAccess::push(
      t, std::move(out), rg,
      [ia, ig, ib, c, count, invn, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& tp, int self) {
        const auto& g = TapeAccess::adj(tp, self);
        const Tensor& gamma = TapeAccess::value(tp, ig);
        std::vector<double> sg(c, 0.0), sgx(c, 0.0);
        for (int64_t p = 0; p < count; ++p) {
          const double* gr = g.data() + p * c;
          const double* xr = xhat.data() + p * c;
          for (int ch = 0; ch < c; ++ch) {
            sg[ch] += gr[ch];
            sgx[ch] += gr[ch] * xr[ch];
          }
        }
        if (TapeAccess::wants(tp, ig)) {
          auto& gg = TapeAccess::adj(tp, ig);
          for (int ch = 0; ch < c; ++ch) gg[ch] += sgx[ch];
        }
        if (TapeAccess::wants(tp, ib)) {
          auto& gb = TapeAccess::adj(tp, ib);
          for (int ch = 0; ch < c; ++ch) gb[ch] += sg[ch];
        }
        if (TapeAccess::wants(tp, ia)) {
          auto& gi = TapeAccess::adj(tp, ia);
          if (train) {
            for (int64_t p = 0; p < count; ++p) {
              const double* gr = g.data() + p * c;
              const double* xr = xhat.data() + p * c;
              double* gir = gi.data() + p * c;
              for (int ch = 0; ch < c; ++ch) {
                gir[ch] += gamma.v[ch] * inv_std[ch] *
                           (gr[ch] - sg[ch] * invn - xr[ch] * (sgx[ch] * invn));
              }
            }
          } else {
            for (int64_t p = 0; p < count; ++p) {
              const double* gr = g.data() + p * c;
              double* gir = gi.data() + p * c;
              for (int ch = 0; ch < c; ++ch) {
                gir[ch] += gamma.v[ch] * inv_std[ch] * gr[ch];
              }
            }
          }
        }
      })};
}

uint64_t pose_loss_degeneracy_count() {
  return g_pose_degeneracies.load(std::memory_order_relaxed);
}

Var pose_loss(Tape& t, Var pred, const Tensor& label, double beta) {
  const Tensor& pv = t.val(pred);
  const bool batched = pv.rank() == 2;
  if (!(pv.rank() == 1 || batched) || pv.dims[batched ? 1 : 0] != 7) {
    throw ShapeError("pose_loss: prediction must be (7) or (b,7), got " +
                     shape_str(pv.dims));
  }
  if (!same_dims(pv, label)) {
    throw ShapeError("pose_loss: labels " + shape_str(label.dims) +
                     " do not match prediction " + shape_str(pv.dims));
  }
  if (beta <= 0.0) throw ContractError("pose_loss: beta must be > 0");
  const int b = batched ? pv.dims[0] : 1;

  auto row_loss = [beta](const double* p, const double* l) {
    double pl = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d = p[i] - l[i];
      pl += d * d;
    }
    pl = std::sqrt(pl);
    double r2 = 0.0;
    for (int i = 3; i < 7; ++i) r2 += p[i] * p[i];
    double r = std::sqrt(r2);
    if (r < 1e-12) {
      r += 1e-12;
      g_pose_degeneracies.fetch_add(1, std::memory_order_relaxed);
    }
    double ql = 0.0;
    for (int i = 3; i < 7; ++i) {
      const double d = p[i] / r - l[i];
      ql += d * d;
    }
    ql = std::sqrt(ql);
    return pl + beta * ql;
  };

  Tensor out(std::vector<int>{b});
  for (int bi = 0; bi < b; ++bi) {
    out.v[bi] = row_loss(pv.data() + bi * 7, label.data() + bi * 7);
  }

  const bool rg = TapeAccess::wants(t, pred.id);
  const int ip = pred.id;
  Tensor lab = label;
  return Var{TapeAccess::push(
      t, std::move(out), rg, [ip, b, beta, lab = std::move(lab)](Tape& tp, int self) {
        const auto& g = TapeAccess::adj(tp, self);
        const Tensor& pv = TapeAccess::value(tp, ip);
        auto& gp = TapeAccess::adj(tp, ip);
        for (int bi = 0; bi < b; ++bi) {
          const double gl = g[bi];
          const double* p = pv.data() + bi * 7;
          const double* l = lab.data() + bi * 7;
          double* gr = gp.data() + bi * 7;
          double dx[3], pl = 0.0;
          for (int i = 0; i < 3; ++i) {
            dx[i] = p[i] - l[i];
            pl += dx[i] * dx[i];
          }
          pl = std::sqrt(pl);
          if (pl > 0.0) {
            for (int i = 0; i < 3; ++i) gr[i] += gl * dx[i] / pl;
          }
          double r2 = 0.0;
          for (int i = 3; i < 7; ++i) r2 += p[i] * p[i];
          double r = std::sqrt(r2);
          if (r < 1e-12) r += 1e-12;
          double u[4], dq[4], ql = 0.0;
          for (int i = 0; i < 4; ++i) {
            u[i] = p[3 + i] / r;
            dq[i] = u[i] - l[3 + i];
            ql += dq[i] * dq[i];
          }
          ql = std::sqrt(ql);
          if (ql > 0.0) {
            double wdotu = 0.0;
            for (int i = 0; i < 4; ++i) wdotu += (dq[i] / ql) * u[i];
            for (int i = 0; i < 4; ++i) {
              gr[3 + i] += gl * beta / r * (dq[i] / ql - wdotu * u[i]);
            }
          }
        }
      })};
}

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
  const Tensor& lv = t.val(logits);
  const bool batched = lv.rank() == 2;
  if (!(lv.rank() == 1 || batched)) {
    throw ShapeError("cross_entropy: logits must be (n) or (b,n), got " +
                     shape_str(lv.dims));
  }
  const int b = batched ? lv.dims[0] : 1;
  const int n = batched ? lv.dims[1] : lv.dims[0];
  if (n < 2) throw ContractError("cross_entropy: need at least 2 classes");
  if (static_cast<int>(labels.size()) != b) {
    throw ContractError("cross_entropy: label count does not match batch");
  }
  for (int lab : labels) {
    if (lab < 0 || lab >= n) {
      throw ContractError("cross_entropy: label " + std::to_string(lab) +
                          " out of range [0," + std::to_string(n) + ")");
    }
  }
  constexpr double kProbFloor = 1e-12;
  Tensor out(std::vector<int>{b});
  for (int bi = 0; bi < b; ++bi) {
    const double* row = lv.data() + static_cast<int64_t>(bi) * n;
    double m = row[0];
    for (int i = 1; i < n; ++i) m = row[i] > m ? row[i] : m;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(row[i] - m);
    const double lse = m + std::log(s);
    const double pc = std::exp(row[labels[bi]] - lse);
    out.v[bi] = -std::log(pc > kProbFloor ? pc : kProbFloor);
  }
  const bool rg = TapeAccess::wants(t, logits.id);
  const int il = logits.id;
  return Var{TapeAccess::push(
      t, std::move(out), rg, [il, b, n, labels](Tape& tp, int self) {
        const auto& g = TapeAccess::adj(tp, self);
        const Tensor& lv = TapeAccess::value(tp, il);
        auto& gl = TapeAccess::adj(tp, il);
        for (int bi = 0; bi < b; ++bi) {
          const double* row = lv.data() + static_cast<int64_t>(bi) * n;
          double* gr = gl.data() + static_cast<int64_t>(bi) * n;
          double m = row[0];
          for (int i = 1; i < n; ++i) m = row[i] > m ? row[i] : m;
          double s = 0.0;
          for (int i = 0; i < n; ++i) s += std::exp(row[i] - m);
          const double lse = m + std::log(s);
          const double pc = std::exp(row[labels[bi]] - lse);
          if (pc <= kProbFloor) continue;  // clamped region is flat
          for (int i = 0; i < n; ++i) {
            const double pi = std::exp(row[i] - lse);
            gr[i] += g[bi] * (pi - (i == labels[bi] ? 1.0 : 0.0));
          }
        }
      })};
}

}  // namespace lsattn
