#include <cstring>
#include <sstream>

#include "lsattn/autodiff.hpp"
#include "lsattn/errors.hpp"
#include "lsattn/simd.hpp"
#include "lsattn/threads.hpp"
#include "tape_detail.hpp"

namespace lsattn {

using detail::TapeAccess;

namespace {

// View of a (h,w,c) or (b,h,w,c) tensor as batch-of-maps.
struct MapView {
  int b, h, w, c;
  bool batched;
};

MapView map_view(const Tensor& t, const char* what) {
  if (t.rank() == 3) return {1, t.dims[0], t.dims[1], t.dims[2], false};
  if (t.rank() == 4) return {t.dims[0], t.dims[1], t.dims[2], t.dims[3], true};
  throw ShapeError(std::string(what) + ": expected rank 3 or 4 feature map, got " +
                   shape_str(t.dims));
}

int64_t map_stride(const MapView& v) {
  return static_cast<int64_t>(v.h) * v.w * v.c;
}

}  // namespace

Var conv2d(Tape& t, Var input, Var kernel, Var bias, Padding pad) {
  const Tensor& in = t.val(input);
  const Tensor& k = t.val(kernel);
  const Tensor& bv = t.val(bias);
  const MapView iv = map_view(in, "conv2d");
  if (k.rank() != 4) {
    throw ShapeError("conv2d: kernel must be rank 4 (kh,kw,ci,co), got " +
                     shape_str(k.dims));
  }
  const int kh = k.dims[0], kw = k.dims[1], ci = k.dims[2], co = k.dims[3];
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ContractError("conv2d: kernel spatial extents must be odd, got " +
                        shape_str(k.dims));
  }
  if (ci != iv.c) {
    std::ostringstream os;
    os << "conv2d: input channels " << shape_str(in.dims)
       << " do not match kernel " << shape_str(k.dims);
    throw ShapeError(os.str());
  }
  if (bv.rank() != 1 || bv.dims[0] != co) {
    throw ShapeError("conv2d: bias " + shape_str(bv.dims) + " does not match kernel " +
                     shape_str(k.dims));
  }
  const int pad_y = pad == Padding::same ? (kh - 1) / 2 : 0;
  const int pad_x = pad == Padding::same ? (kw - 1) / 2 : 0;
  const int oh = pad == Padding::same ? iv.h : iv.h - kh + 1;
  const int ow = pad == Padding::same ? iv.w : iv.w - kw + 1;
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("conv2d: kernel " + shape_str(k.dims) + " larger than input " +
                     shape_str(in.dims));
  }

  Tensor out(iv.batched ? std::vector<int>{iv.b, oh, ow, co}
                        : std::vector<int>{oh, ow, co});
  const auto& ops = simd::active();
  const int64_t in_stride = map_stride(iv);
  const int64_t out_stride = static_cast<int64_t>(oh) * ow * co;

  parallel_for(iv.b, [&](int bi) {
    const double* ip = in.data() + bi * in_stride;
    double* op = out.data() + bi * out_stride;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* orow = op + (static_cast<int64_t>(oy) * ow + ox) * co;
        std::memcpy(orow, bv.data(), sizeof(double) * co);
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy + ky - pad_y;
          if (iy < 0 || iy >= iv.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox + kx - pad_x;
            if (ix < 0 || ix >= iv.w) continue;
            const double* irow = ip + (static_cast<int64_t>(iy) * iv.w + ix) * ci;
            const double* krow =
                k.data() + (static_cast<int64_t>(ky) * kw + kx) * ci * co;
            ops.madd_mat(irow, krow, orow, ci, co);
          }
        }
      }
    }
  });

  const bool rg = TapeAccess::wants(t, input.id) || TapeAccess::wants(t, kernel.id) ||
                  TapeAccess::wants(t, bias.id);
  const int ii = input.id, ik = kernel.id, ib = bias.id;
  return Var{TapeAccess::push(
      t, std::move(out), rg,
      [ii, ik, ib, iv, kh, kw, ci, co, pad_y, pad_x, oh, ow](Tape& tp, int self) {
        const auto& ops = simd::active();
        const auto& g = TapeAccess::adj(tp, self);
        const Tensor& in = TapeAccess::value(tp, ii);
        const Tensor& k = TapeAccess::value(tp, ik);
        const int64_t in_stride = map_stride(iv);
        const int64_t out_stride = static_cast<int64_t>(oh) * ow * co;

        if (TapeAccess::wants(tp, ii)) {
          auto& gin = TapeAccess::adj(tp, ii);
          parallel_for(iv.b, [&](int bi) {
            double* gip = gin.data() + bi * in_stride;
            const double* gop = g.data() + bi * out_stride;
            for (int iy = 0; iy < iv.h; ++iy) {
              for (int ix = 0; ix < iv.w; ++ix) {
                double* girow = gip + (static_cast<int64_t>(iy) * iv.w + ix) * ci;
                for (int ky = 0; ky < kh; ++ky) {
                  const int oy = iy - ky + pad_y;
                  if (oy < 0 || oy >= oh) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ox = ix - kx + pad_x;
                    if (ox < 0 || ox >= ow) continue;
                    const double* grow =
                        gop + (static_cast<int64_t>(oy) * ow + ox) * co;
                    const double* krow =
                        k.data() + (static_cast<int64_t>(ky) * kw + kx) * ci * co;
                    ops.madd_matvec(krow, grow, girow, ci, co);
                  }
                }
              }
            }
          });
        }

        // kernel/bias grads accumulate across the batch in index order
        const bool want_k = TapeAccess::wants(tp, ik);
        const bool want_b = TapeAccess::wants(tp, ib);
        if (!want_k && !want_b) return;
        auto* gk = want_k ? &TapeAccess::adj(tp, ik) : nullptr;
        auto* gb = want_b ? &TapeAccess::adj(tp, ib) : nullptr;
        for (int bi = 0; bi < iv.b; ++bi) {
          const double* ip = in.data() + bi * in_stride;
          const double* gop = g.data() + bi * out_stride;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double* grow = gop + (static_cast<int64_t>(oy) * ow + ox) * co;
              if (gb) ops.axpy(1.0, grow, gb->data(), co);
              if (!gk) continue;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy + ky - pad_y;
                if (iy < 0 || iy >= iv.h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox + kx - pad_x;
                  if (ix < 0 || ix >= iv.w) continue;
                  const double* irow =
                      ip + (static_cast<int64_t>(iy) * iv.w + ix) * ci;
                  double* gkrow =
                      gk->data() + (static_cast<int64_t>(ky) * kw + kx) * ci * co;
                  ops.madd_outer(irow, grow, gkrow, ci, co);
                }
              }
            }
          }
        }
      })};
}

Var dense(Tape& t, Var input, Var weight, Var bias) {
  const Tensor& in = t.val(input);
  const Tensor& w = t.val(weight);
  const Tensor& bv = t.val(bias);
  if (w.rank() != 2) {
    throw ShapeError("dense: weight must be rank 2 (n,m), got " + shape_str(w.dims));
  }
  const int n = w.dims[0], m = w.dims[1];
  const bool batched = in.rank() == 2;
  if (!(in.rank() == 1 || batched)) {
    throw ShapeError("dense: input must be rank 1 or 2, got " + shape_str(in.dims));
  }
  const int b = batched ? in.dims[0] : 1;
  const int in_n = batched ? in.dims[1] : in.dims[0];
  if (in_n != n) {
    std::ostringstream os;
    os << "dense: input " << shape_str(in.dims) << " does not match weight "
       << shape_str(w.dims);
    throw ShapeError(os.str());
  }
  if (bv.rank() != 1 || bv.dims[0] != m) {
    throw ShapeError("dense: bias " + shape_str(bv.dims) + " does not match weight " +
                     shape_str(w.dims));
  }

  Tensor out(batched ? std::vector<int>{b, m} : std::vector<int>{m});
  const auto& ops = simd::active();
  for (int bi = 0; bi < b; ++bi) {
    const double* irow = in.data() + static_cast<int64_t>(bi) * n;
    double* orow = out.data() + static_cast<int64_t>(bi) * m;
    std::memcpy(orow, bv.data(), sizeof(double) * m);
    ops.madd_mat(irow, w.data(), orow, n, m);
  }

  const bool rg = TapeAccess::wants(t, input.id) || TapeAccess::wants(t, weight.id) ||
                  TapeAccess::wants(t, bias.id);
  const int ii = input.id, iw = weight.id, ib = bias.id;
  return Var{TapeAccess::push(t, std::move(out), rg,
                              [ii, iw, ib, b, n, m](Tape& tp, int self) {
    const auto& ops = simd::active();
    const auto& g = TapeAccess::adj(tp, self);
    const Tensor& in = TapeAccess::value(tp, ii);
    const Tensor& w = TapeAccess::value(tp, iw);
    const bool want_i = TapeAccess::wants(tp, ii);
    const bool want_w = TapeAccess::wants(tp, iw);
    const bool want_b = TapeAccess::wants(tp, ib);
    for (int bi = 0; bi < b; ++bi) {
      const double* grow = g.data() + static_cast<int64_t>(bi) * m;
      const double* irow = in.data() + static_cast<int64_t>(bi) * n;
      if (want_b) ops.axpy(1.0, grow, TapeAccess::adj(tp, ib).data(), m);
      if (want_w) {
        ops.madd_outer(irow, grow, TapeAccess::adj(tp, iw).data(), n, m);
      }
      if (want_i) {
        ops.madd_matvec(w.data(), grow,
                        TapeAccess::adj(tp, ii).data() + static_cast<int64_t>(bi) * n,
                        n, m);
      }
    }
  })};
}

Var avg_pool_global(Tape& t, Var a) {
  const Tensor& in = t.val(a);
  const MapView iv = map_view(in, "avg_pool_global");
  const double inv = 1.0 / (static_cast<double>(iv.h) * iv.w);
  Tensor out(iv.batched ? std::vector<int>{iv.b, iv.c} : std::vector<int>{iv.c});
  const auto& ops = simd::active();
  const int64_t in_stride = map_stride(iv);
  for (int bi = 0; bi < iv.b; ++bi) {
    const double* ip = in.data() + bi * in_stride;
    double* orow = out.data() + static_cast<int64_t>(bi) * iv.c;
    for (int p = 0; p < iv.h * iv.w; ++p) {
      ops.axpy(1.0, ip + static_cast<int64_t>(p) * iv.c, orow, iv.c);
    }
    ops.scale(inv, orow, orow, iv.c);
  }
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia, iv, inv](Tape& tp, int self) {
    const auto& ops = simd::active();
    const auto& g = TapeAccess::adj(tp, self);
    auto& gi = TapeAccess::adj(tp, ia);
    const int64_t in_stride = map_stride(iv);
    for (int bi = 0; bi < iv.b; ++bi) {
      const double* grow = g.data() + static_cast<int64_t>(bi) * iv.c;
      double* gip = gi.data() + bi * in_stride;
      for (int p = 0; p < iv.h * iv.w; ++p) {
        ops.axpy(inv, grow, gip + static_cast<int64_t>(p) * iv.c, iv.c);
      }
    }
  })};
}

Var avg_pool(Tape& t, Var a, int factor) {
  const Tensor& in = t.val(a);
  const MapView iv = map_view(in, "avg_pool");
  if (factor < 1 || iv.h % factor != 0 || iv.w % factor != 0) {
    std::ostringstream os;
    os << "avg_pool: factor " << factor << " does not divide " << shape_str(in.dims);
    throw ShapeError(os.str());
  }
  const int oh = iv.h / factor, ow = iv.w / factor;
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  Tensor out(iv.batched ? std::vector<int>{iv.b, oh, ow, iv.c}
                        : std::vector<int>{oh, ow, iv.c});
  const auto& ops = simd::active();
  const int64_t in_stride = map_stride(iv);
  const int64_t out_stride = static_cast<int64_t>(oh) * ow * iv.c;
  for (int bi = 0; bi < iv.b; ++bi) {
    const double* ip = in.data() + bi * in_stride;
    double* op = out.data() + bi * out_stride;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* orow = op + (static_cast<int64_t>(oy) * ow + ox) * iv.c;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            const int64_t p = static_cast<int64_t>(oy * factor + dy) * iv.w +
                              (ox * factor + dx);
            ops.axpy(1.0, ip + p * iv.c, orow, iv.c);
          }
        }
        ops.scale(inv, orow, orow, iv.c);
      }
    }
  }
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(
      t, std::move(out), rg, [ia, iv, factor, oh, ow, inv](Tape& tp, int self) {
        const auto& ops = simd::active();
        const auto& g = TapeAccess::adj(tp, self);
        auto& gi = TapeAccess::adj(tp, ia);
        const int64_t in_stride = map_stride(iv);
        const int64_t out_stride = static_cast<int64_t>(oh) * ow * iv.c;
        for (int bi = 0; bi < iv.b; ++bi) {
          const double* gop = g.data() + bi * out_stride;
          double* gip = gi.data() + bi * in_stride;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double* grow = gop + (static_cast<int64_t>(oy) * ow + ox) * iv.c;
              for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) {
                  const int64_t p = static_cast<int64_t>(oy * factor + dy) * iv.w +
                                    (ox * factor + dx);
                  ops.axpy(inv, grow, gip + p * iv.c, iv.c);
                }
              }
            }
          }
        }
      })};
}

Var upsample_nearest(Tape& t, Var a, int factor) {
  const Tensor& in = t.val(a);
  const MapView iv = map_view(in, "upsample_nearest");
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  const int oh = iv.h * factor, ow = iv.w * factor;
  Tensor out(iv.batched ? std::vector<int>{iv.b, oh, ow, iv.c}
                        : std::vector<int>{oh, ow, iv.c});
  const int64_t in_stride = map_stride(iv);
  const int64_t out_stride = static_cast<int64_t>(oh) * ow * iv.c;
  for (int bi = 0; bi < iv.b; ++bi) {
    const double* ip = in.data() + bi * in_stride;
    double* op = out.data() + bi * out_stride;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const int64_t p = static_cast<int64_t>(oy / factor) * iv.w + (ox / factor);
        std::memcpy(op + (static_cast<int64_t>(oy) * ow + ox) * iv.c, ip + p * iv.c,
                    sizeof(double) * iv.c);
      }
    }
  }
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(
      t, std::move(out), rg, [ia, iv, factor, oh, ow](Tape& tp, int self) {
        const auto& ops = simd::active();
        const auto& g = TapeAccess::adj(tp, self);
        auto& gi = TapeAccess::adj(tp, ia);
        const int64_t in_stride = map_stride(iv);
        const int64_t out_stride = static_cast<int64_t>(oh) * ow * iv.c;
        for (int bi = 0; bi < iv.b; ++bi) {
          const double* gop = g.data() + bi * out_stride;
          double* gip = gi.data() + bi * in_stride;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const int64_t p = static_cast<int64_t>(oy / factor) * iv.w + (ox / factor);
              ops.axpy(1.0, gop + (static_cast<int64_t>(oy) * ow + ox) * iv.c,
                       gip + p * iv.c, iv.c);
            }
          }
        }
      })};
}

Var concat_channels(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  std::vector<MapView> views;
  views.reserve(parts.size());
  int total_c = 0;
  for (Var p : parts) {
    views.push_back(map_view(t.val(p), "concat_channels"));
    total_c += views.back().c;
  }
  for (size_t i = 1; i < views.size(); ++i) {
    if (views[i].b != views[0].b || views[i].h != views[0].h ||
        views[i].w != views[0].w || views[i].batched != views[0].batched) {
      throw ShapeError("concat_channels: mismatched grids " +
                       shape_str(t.val(parts[0]).dims) + " vs " +
                       shape_str(t.val(parts[i]).dims));
    }
  }
  const MapView& v0 = views[0];
  Tensor out(v0.batched ? std::vector<int>{v0.b, v0.h, v0.w, total_c}
                        : std::vector<int>{v0.h, v0.w, total_c});
  const int64_t positions = static_cast<int64_t>(v0.b) * v0.h * v0.w;
  int offset = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& pv = t.val(parts[pi]);
    const int c = views[pi].c;
    for (int64_t p = 0; p < positions; ++p) {
      std::memcpy(out.data() + p * total_c + offset, pv.data() + p * c,
                  sizeof(double) * c);
    }
    offset += c;
  }
  bool rg = false;
  std::vector<int> ids(parts.size());
  std::vector<int> widths(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) {
    ids[i] = parts[i].id;
    widths[i] = views[i].c;
    rg = rg || TapeAccess::wants(t, parts[i].id);
  }
  return Var{TapeAccess::push(
      t, std::move(out), rg,
      [ids, widths, positions, total_c](Tape& tp, int self) {
        const auto& ops = simd::active();
        const auto& g = TapeAccess::adj(tp, self);
        int offset = 0;
        for (size_t pi = 0; pi < ids.size(); ++pi) {
          const int c = widths[pi];
          if (TapeAccess::wants(tp, ids[pi])) {
            auto& gp = TapeAccess::adj(tp, ids[pi]);
            for (int64_t p = 0; p < positions; ++p) {
              ops.axpy(1.0, g.data() + p * total_c + offset, gp.data() + p * c, c);
            }
          }
          offset += c;
        }
      })};
}

Var broadcast_mul_map(Tape& t, Var map, Var feat) {
  const Tensor& mv = t.val(map);
  const Tensor& fv = t.val(feat);
  const MapView m = map_view(mv, "broadcast_mul_map");
  const MapView f = map_view(fv, "broadcast_mul_map");
  if (m.c != 1 || m.b != f.b || m.h != f.h || m.w != f.w || m.batched != f.batched) {
    throw ShapeError("broadcast_mul_map: map " + shape_str(mv.dims) +
                     " incompatible with features " + shape_str(fv.dims));
  }
  Tensor out(fv.dims);
  const auto& ops = simd::active();
  const int64_t positions = static_cast<int64_t>(f.b) * f.h * f.w;
  for (int64_t p = 0; p < positions; ++p) {
    ops.scale(mv.v[p], fv.data() + p * f.c, out.data() + p * f.c, f.c);
  }
  const bool rg = TapeAccess::wants(t, map.id) || TapeAccess::wants(t, feat.id);
  const int im = map.id, ifid = feat.id;
  const int c = f.c;
  return Var{TapeAccess::push(
      t, std::move(out), rg, [im, ifid, positions, c](Tape& tp, int self) {
        const auto& ops = simd::active();
        const auto& g = TapeAccess::adj(tp, self);
        const Tensor& mv = TapeAccess::value(tp, im);
        const Tensor& fv = TapeAccess::value(tp, ifid);
        if (TapeAccess::wants(tp, im)) {
          auto& gm = TapeAccess::adj(tp, im);
          for (int64_t p = 0; p < positions; ++p) {
            gm[p] += ops.dot(g.data() + p * c, fv.data() + p * c, c);
          }
        }
        if (TapeAccess::wants(tp, ifid)) {
          auto& gf = TapeAccess::adj(tp, ifid);
          for (int64_t p = 0; p < positions; ++p) {
            ops.axpy(mv.v[p], g.data() + p * c, gf.data() + p * c, c);
          }
        }
      })};
}

Var tile_batch(Tape& t, Var a, int b) {
  const Tensor& in = t.val(a);
  if (in.rank() != 3) {
    throw ShapeError("tile_batch: expected (h,w,c), got " + shape_str(in.dims));
  }
  if (b < 1) throw ContractError("tile_batch: batch must be >= 1");
  const int64_t slice = in.numel();
  Tensor out({b, in.dims[0], in.dims[1], in.dims[2]});
  for (int bi = 0; bi < b; ++bi) {
    std::memcpy(out.data() + bi * slice, in.data(), sizeof(double) * slice);
  }
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia, b, slice](Tape& tp, int self) {
    const auto& g = TapeAccess::adj(tp, self);
    auto& gi = TapeAccess::adj(tp, ia);
    for (int bi = 0; bi < b; ++bi) {
      simd::active().axpy(1.0, g.data() + bi * slice, gi.data(), slice);
    }
  })};
}

Var flatten(Tape& t, Var a) {
  const Tensor& in = t.val(a);
  if (in.rank() != 4) {
    throw ShapeError("flatten: expected (b,h,w,c), got " + shape_str(in.dims));
  }
  const int b = in.dims[0];
  const int n = static_cast<int>(in.numel() / b);
  Tensor out({b, n}, in.v);
  const bool rg = TapeAccess::wants(t, a.id);
  const int ia = a.id;
  return Var{TapeAccess::push(t, std::move(out), rg, [ia](Tape& tp, int self) {
    const auto& g = TapeAccess::adj(tp, self);
    simd::active().axpy(1.0, g.data(), TapeAccess::adj(tp, ia).data(), g.size());
  })};
}

Var mix_bank(Tape& t, std::span<const Var> entries, Var weights) {
  if (entries.empty()) throw ContractError("mix_bank: empty bank");
  const Tensor& wv = t.val(weights);
  if (wv.rank() != 2) {
    throw ShapeError("mix_bank: weights must be (b,k), got " + shape_str(wv.dims));
  }
  const int b = wv.dims[0];
  const int k = wv.dims[1];
  if (k != static_cast<int>(entries.size())) {
    std::ostringstream os;
    os << "mix_bank: " << entries.size() << " entries vs weights " << shape_str(wv.dims);
    throw ShapeError(os.str());
  }
  const Tensor& e0 = t.val(entries[0]);
  if (e0.rank() != 4 || e0.dims[0] != b) {
    throw ShapeError("mix_bank: entries must be (b,h,w,c) matching weights, got " +
                     shape_str(e0.dims));
  }
  for (Var e : entries) {
    if (!same_dims(t.val(e), e0)) {
      throw ShapeError("mix_bank: entry shape " + shape_str(t.val(e).dims) +
                       " differs from " + shape_str(e0.dims));
    }
  }
  const int64_t slice = static_cast<int64_t>(e0.dims[1]) * e0.dims[2] * e0.dims[3];
  Tensor out(e0.dims);
  const auto& ops = simd::active();
  std::vector<int> ids(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) ids[i] = entries[i].id;
  for (int bi = 0; bi < b; ++bi) {
    double* orow = out.data() + bi * slice;
    for (int j = 0; j < k; ++j) {
      const double wj = wv.v[static_cast<int64_t>(bi) * k + j];
      if (wj == 0.0) continue;  // hard one-hot path touches a single entry
      ops.axpy(wj, t.val(entries[j]).data() + bi * slice, orow, slice);
    }
  }
  bool rg = TapeAccess::wants(t, weights.id);
  for (Var e : entries) rg = rg || TapeAccess::wants(t, e.id);
  const int iw = weights.id;
  return Var{TapeAccess::push(
      t, std::move(out), rg, [ids, iw, b, k, slice](Tape& tp, int self) {
        const auto& ops = simd::active();
        const auto& g = TapeAccess::adj(tp, self);
        const Tensor& wv = TapeAccess::value(tp, iw);
        const bool want_w = TapeAccess::wants(tp, iw);
        for (int bi = 0; bi < b; ++bi) {
          const double* grow = g.data() + bi * slice;
          for (int j = 0; j < k; ++j) {
            const Tensor& ev = TapeAccess::value(tp, ids[j]);
            if (want_w) {
              TapeAccess::adj(tp, iw)[static_cast<int64_t>(bi) * k + j] +=
                  ops.dot(grow, ev.data() + bi * slice, slice);
            }
            if (TapeAccess::wants(tp, ids[j])) {
              const double wj = wv.v[static_cast<int64_t>(bi) * k + j];
              if (wj != 0.0) {
                ops.axpy(wj, grow, TapeAccess::adj(tp, ids[j]).data() + bi * slice,
                         slice);
              }
            }
          }
        }
      })};
}

}  // namespace lsattn
