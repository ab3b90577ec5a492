#ifndef QSATTN_TENSOR_NN_HPP
#define QSATTN_TENSOR_NN_HPP

#include "qsattn/tensor.hpp"

namespace qsattn {

enum class PadMode { Zero, Reflect };

namespace detail {

// Reflection without edge repeat: -1 -> 1, H -> H-2.
inline Index reflect_index(Index t, Index n) {
  if (t < 0) return -t;
  if (t >= n) return 2 * n - 2 - t;
  return t;
}

template <std::floating_point S>
std::vector<S> pad_chw(const std::vector<S>& x, Index C, Index H, Index W, Index p, PadMode mode) {
  const Index Hp = H + 2 * p, Wp = W + 2 * p;
  std::vector<S> xp(static_cast<size_t>(C * Hp * Wp), S(0));
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < Hp; ++i)
      for (Index j = 0; j < Wp; ++j) {
        const Index si = i - p, sj = j - p;
        S v;
        if (mode == PadMode::Zero) {
          v = (si >= 0 && si < H && sj >= 0 && sj < W) ? x[static_cast<size_t>((c * H + si) * W + sj)] : S(0);
        } else {
          v = x[static_cast<size_t>((c * H + reflect_index(si, H)) * W + reflect_index(sj, W))];
        }
        xp[static_cast<size_t>((c * Hp + i) * Wp + j)] = v;
      }
  return xp;
}

// Accumulates a padded-size gradient back onto the unpadded input gradient.
template <std::floating_point S>
void unpad_accumulate(const std::vector<S>& gxp, Index C, Index H, Index W, Index p, PadMode mode, std::vector<S>& gx) {
  const Index Hp = H + 2 * p, Wp = W + 2 * p;
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < Hp; ++i)
      for (Index j = 0; j < Wp; ++j) {
        const Index si = i - p, sj = j - p;
        Index ti, tj;
        if (mode == PadMode::Zero) {
          if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
          ti = si;
          tj = sj;
        } else {
          ti = reflect_index(si, H);
          tj = reflect_index(sj, W);
        }
        gx[static_cast<size_t>((c * H + ti) * W + tj)] += gxp[static_cast<size_t>((c * Hp + i) * Wp + j)];
      }
}

// col[(oh*Wout+ow), ci*k*k + kh*k + kw] from a padded [C,Hp,Wp] buffer.
template <std::floating_point S>
void im2col(const S* xp, Index C, Index Hp, Index Wp, Index k, Index stride, Index Hout, Index Wout, S* col) {
  const Index patch = C * k * k;
  for (Index oh = 0; oh < Hout; ++oh)
    for (Index ow = 0; ow < Wout; ++ow) {
      S* dst = col + (oh * Wout + ow) * patch;
      for (Index ci = 0; ci < C; ++ci) {
        const S* src = xp + ci * Hp * Wp;
        for (Index kh = 0; kh < k; ++kh) {
          const S* row = src + (oh * stride + kh) * Wp + ow * stride;
          for (Index kw = 0; kw < k; ++kw) dst[ci * k * k + kh * k + kw] = row[kw];
        }
      }
    }
}

template <std::floating_point S>
void col2im_add(const S* col, Index C, Index Hp, Index Wp, Index k, Index stride, Index Hout, Index Wout, S* xp) {
  const Index patch = C * k * k;
  for (Index oh = 0; oh < Hout; ++oh)
    for (Index ow = 0; ow < Wout; ++ow) {
      const S* src = col + (oh * Wout + ow) * patch;
      for (Index ci = 0; ci < C; ++ci) {
        S* dst = xp + ci * Hp * Wp;
        for (Index kh = 0; kh < k; ++kh) {
          S* row = dst + (oh * stride + kh) * Wp + ow * stride;
          for (Index kw = 0; kw < k; ++kw) row[kw] += src[ci * k * k + kh * k + kw];
        }
      }
    }
}

}  // namespace detail

// x: [Cin,H,W], w: [Cout,Cin,k,k], b: [Cout]. Square kernels, symmetric padding.
template <std::floating_point S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Index stride, Index pad,
                 PadMode mode = PadMode::Zero) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(w.shape()));
  if (w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  if (b.rank() != 1 || b.dim(0) != w.dim(0))
    throw ShapeError("conv2d: bias must be [Cout], got " + shape_str(b.shape()));
  const Index Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index Cout = w.dim(0), k = w.dim(2);
  if (mode == PadMode::Reflect && pad > std::min(H, W) - 1)
    throw ConfigError("conv2d: reflect pad " + std::to_string(pad) + " too large for " + shape_str(x.shape()));
  const Index Hout = (H + 2 * pad - k) / stride + 1;
  const Index Wout = (W + 2 * pad - k) / stride + 1;
  if (H + 2 * pad < k || W + 2 * pad < k || Hout < 1 || Wout < 1)
    throw ConfigError("conv2d: input " + shape_str(x.shape()) + " too small for kernel " + std::to_string(k));

  const Index Hp = H + 2 * pad, Wp = W + 2 * pad;
  const Index hw_out = Hout * Wout, patch = Cin * k * k;
  std::vector<S> xp = detail::pad_chw(x.data(), Cin, H, W, pad, mode);
  std::vector<S> col(static_cast<size_t>(hw_out * patch));
  detail::im2col(xp.data(), Cin, Hp, Wp, k, stride, Hout, Wout, col.data());

  Tensor<S> y = Tensor<S>::zeros({Cout, Hout, Wout});
  {
    detail::ConstMatMap<S> W2(w.data().data(), Cout, patch);
    detail::ConstMatMap<S> Col(col.data(), hw_out, patch);
    detail::MatMap<S> Y(y.mutable_data().data(), Cout, hw_out);
    Y.noalias() = W2 * Col.transpose();
  }
  {
    S* yd = y.mutable_data().data();
    for (Index co = 0; co < Cout; ++co) {
      const S bias = b.data()[static_cast<size_t>(co)];
      for (Index i = 0; i < hw_out; ++i) yd[co * hw_out + i] += bias;
    }
  }

  if (detail::recording<S>() && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
    detail::mark_and_record(y, [xi = x.impl(), wi = w.impl(), bi = b.impl(), yi = y.impl(), Cin, H, W, Cout, k, stride,
                                pad, mode, Hout, Wout] {
      if (yi->grad.empty()) return;
      const Index Hp = H + 2 * pad, Wp = W + 2 * pad;
      const Index hw_out = Hout * Wout, patch = Cin * k * k;
      const auto& gy = yi->grad;
      if (bi->requires_grad) {
        auto& gb = bi->grad_buf();
        for (Index co = 0; co < Cout; ++co) {
          S s = S(0);
          for (Index i = 0; i < hw_out; ++i) s += gy[static_cast<size_t>(co * hw_out + i)];
          gb[static_cast<size_t>(co)] += s;
        }
      }
      if (wi->requires_grad) {
        // col is cheap to rebuild relative to the GEMMs; the input tensor is
        // alive on the tape already, so do not save the col buffer.
        std::vector<S> xp = detail::pad_chw(xi->data, Cin, H, W, pad, mode);
        std::vector<S> col(static_cast<size_t>(hw_out * patch));
        detail::im2col(xp.data(), Cin, Hp, Wp, k, stride, Hout, Wout, col.data());
        detail::ConstMatMap<S> G(gy.data(), Cout, hw_out);
        detail::ConstMatMap<S> Col(col.data(), hw_out, patch);
        detail::MatMap<S> GW(wi->grad_buf().data(), Cout, patch);
        GW.noalias() += G * Col;
      }
      if (xi->requires_grad) {
        std::vector<S> gcol(static_cast<size_t>(hw_out * patch));
        detail::ConstMatMap<S> G(gy.data(), Cout, hw_out);
        detail::ConstMatMap<S> W2(wi->data.data(), Cout, patch);
        detail::MatMap<S> GCol(gcol.data(), hw_out, patch);
        GCol.noalias() = G.transpose() * W2;
        std::vector<S> gxp(static_cast<size_t>(Cin * Hp * Wp), S(0));
        detail::col2im_add(gcol.data(), Cin, Hp, Wp, k, stride, Hout, Wout, gxp.data());
        detail::unpad_accumulate(gxp, Cin, H, W, pad, mode, xi->grad_buf());
      }
    });
  }
  return y;
}

// x: [Cin,H,W], w: [Cin,Cout,k,k], b: [Cout].
// Hout = (H-1)*stride - 2*pad + k + out_pad.
template <std::floating_point S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Index stride, Index pad,
                           Index out_pad) {
  if (x.rank() != 3) throw ShapeError("conv_transpose2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw ShapeError("conv_transpose2d: weight must be [Cin,Cout,k,k], got " + shape_str(w.shape()));
  if (w.dim(0) != x.dim(0))
    throw ShapeError("conv_transpose2d: channel mismatch, input " + shape_str(x.shape()) + " weight " +
                     shape_str(w.shape()));
  if (out_pad >= stride) throw ConfigError("conv_transpose2d: out_pad must be < stride");
  const Index Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index Cout = w.dim(1), k = w.dim(2);
  if (b.rank() != 1 || b.dim(0) != Cout)
    throw ShapeError("conv_transpose2d: bias must be [Cout], got " + shape_str(b.shape()));
  const Index Hout = (H - 1) * stride - 2 * pad + k + out_pad;
  const Index Wout = (W - 1) * stride - 2 * pad + k + out_pad;
  if (Hout < 1 || Wout < 1) throw ConfigError("conv_transpose2d: degenerate output for input " + shape_str(x.shape()));

  const Index hw_in = H * W, patch = Cout * k * k;
  std::vector<S> colT(static_cast<size_t>(hw_in * patch));
  {
    // X2d = x^T without copying: map x as [Cin,HW] and transpose in the GEMM.
    detail::ConstMatMap<S> X(x.data().data(), Cin, hw_in);
    detail::ConstMatMap<S> W2(w.data().data(), Cin, patch);
    detail::MatMap<S> ColT(colT.data(), hw_in, patch);
    ColT.noalias() = X.transpose() * W2;
  }
  Tensor<S> y = Tensor<S>::zeros({Cout, Hout, Wout});
  {
    S* yd = y.mutable_data().data();
    for (Index ih = 0; ih < H; ++ih)
      for (Index iw = 0; iw < W; ++iw) {
        const S* src = colT.data() + (ih * W + iw) * patch;
        for (Index co = 0; co < Cout; ++co)
          for (Index kh = 0; kh < k; ++kh) {
            const Index oh = ih * stride + kh - pad;
            if (oh < 0 || oh >= Hout) continue;
            for (Index kw = 0; kw < k; ++kw) {
              const Index ow = iw * stride + kw - pad;
              if (ow < 0 || ow >= Wout) continue;
              yd[(co * Hout + oh) * Wout + ow] += src[co * k * k + kh * k + kw];
            }
          }
      }
    for (Index co = 0; co < Cout; ++co) {
      const S bias = b.data()[static_cast<size_t>(co)];
      for (Index i = 0; i < Hout * Wout; ++i) yd[co * Hout * Wout + i] += bias;
    }
  }

  if (detail::recording<S>() && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
    detail::mark_and_record(y, [xi = x.impl(), wi = w.impl(), bi = b.impl(), yi = y.impl(), Cin, H, W, Cout, k, stride,
                                pad, Hout, Wout] {
      if (yi->grad.empty()) return;
      const Index hw_in = H * W, patch = Cout * k * k;
      const auto& gy = yi->grad;
      if (bi->requires_grad) {
        auto& gb = bi->grad_buf();
        for (Index co = 0; co < Cout; ++co) {
          S s = S(0);
          for (Index i = 0; i < Hout * Wout; ++i) s += gy[static_cast<size_t>(co * Hout * Wout + i)];
          gb[static_cast<size_t>(co)] += s;
        }
      }
      std::vector<S> gcolT(static_cast<size_t>(hw_in * patch), S(0));
      for (Index ih = 0; ih < H; ++ih)
        for (Index iw = 0; iw < W; ++iw) {
          S* dst = gcolT.data() + (ih * W + iw) * patch;
          for (Index co = 0; co < Cout; ++co)
            for (Index kh = 0; kh < k; ++kh) {
              const Index oh = ih * stride + kh - pad;
              if (oh < 0 || oh >= Hout) continue;
              for (Index kw = 0; kw < k; ++kw) {
                const Index ow = iw * stride + kw - pad;
                if (ow < 0 || ow >= Wout) continue;
                dst[co * k * k + kh * k + kw] = gy[static_cast<size_t>((co * Hout + oh) * Wout + ow)];
              }
            }
        }
      if (wi->requires_grad) {
        detail::ConstMatMap<S> X(xi->data.data(), Cin, hw_in);
        detail::ConstMatMap<S> GColT(gcolT.data(), hw_in, patch);
        detail::MatMap<S> GW(wi->grad_buf().data(), Cin, patch);
        GW.noalias() += X * GColT;
      }
      if (xi->requires_grad) {
        std::vector<S> gx2(static_cast<size_t>(hw_in * Cin));
        detail::ConstMatMap<S> GColT(gcolT.data(), hw_in, patch);
        detail::ConstMatMap<S> W2(wi->data.data(), Cin, patch);
        detail::MatMap<S> GX2(gx2.data(), hw_in, Cin);
        GX2.noalias() = GColT * W2.transpose();
        auto& gx = xi->grad_buf();
        for (Index ci = 0; ci < Cin; ++ci)
          for (Index i = 0; i < hw_in; ++i) gx[static_cast<size_t>(ci * hw_in + i)] += gx2[static_cast<size_t>(i * Cin + ci)];
      }
    });
  }
  return y;
}

// Per-channel normalization over the spatial extent, then affine.
template <std::floating_point S>
Tensor<S> instance_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5)) {
  if (x.rank() != 3) throw ShapeError("instance_norm: input must be [C,H,W], got " + shape_str(x.shape()));
  const Index C = x.dim(0), HW = x.dim(1) * x.dim(2);
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    throw ShapeError("instance_norm: affine parameters must be [C]");
  std::vector<S> yd(static_cast<size_t>(C * HW));
  auto stats = std::make_shared<std::vector<S>>(static_cast<size_t>(2 * C));  // mu, inv_std per channel
  for (Index c = 0; c < C; ++c) {
    const S* xc = x.data().data() + c * HW;
    S mu = S(0);
    for (Index i = 0; i < HW; ++i) mu += xc[i];
    mu /= static_cast<S>(HW);
    S var = S(0);
    for (Index i = 0; i < HW; ++i) var += (xc[i] - mu) * (xc[i] - mu);
    var /= static_cast<S>(HW);
    const S inv_std = S(1) / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(2 * c)] = mu;
    (*stats)[static_cast<size_t>(2 * c + 1)] = inv_std;
    const S g = gamma.data()[static_cast<size_t>(c)], bt = beta.data()[static_cast<size_t>(c)];
    for (Index i = 0; i < HW; ++i) yd[static_cast<size_t>(c * HW + i)] = g * (xc[i] - mu) * inv_std + bt;
  }
  Tensor<S> y(x.shape(), std::move(yd));
  if (detail::recording<S>() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    detail::mark_and_record(y, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl(), stats, C, HW] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      for (Index c = 0; c < C; ++c) {
        const S mu = (*stats)[static_cast<size_t>(2 * c)], inv_std = (*stats)[static_cast<size_t>(2 * c + 1)];
        const S* xc = xi->data.data() + c * HW;
        const S* gc = gy.data() + c * HW;
        S sum_g = S(0), sum_gx = S(0);
        for (Index i = 0; i < HW; ++i) {
          sum_g += gc[i];
          sum_gx += gc[i] * (xc[i] - mu) * inv_std;
        }
        if (bi->requires_grad) bi->grad_buf()[static_cast<size_t>(c)] += sum_g;
        if (gi->requires_grad) gi->grad_buf()[static_cast<size_t>(c)] += sum_gx;
        if (xi->requires_grad) {
          auto& gx = xi->grad_buf();
          const S g = gi->data[static_cast<size_t>(c)];
          const S mean_g = sum_g / static_cast<S>(HW), mean_gx = sum_gx / static_cast<S>(HW);
          for (Index i = 0; i < HW; ++i) {
            const S xhat = (xc[i] - mu) * inv_std;
            gx[static_cast<size_t>(c * HW + i)] += g * inv_std * (gc[i] - mean_g - xhat * mean_gx);
          }
        }
      }
    });
  }
  return y;
}

// Non-overlapping block mean; spatial dims must divide by the block size.
template <std::floating_point S>
Tensor<S> avg_pool2d(const Tensor<S>& x, Index kh, Index kw) {
  if (x.rank() != 3) throw ShapeError("avg_pool2d: input must be [C,H,W], got " + shape_str(x.shape()));
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (kh < 1 || kw < 1 || H % kh != 0 || W % kw != 0)
    throw ConfigError("avg_pool2d: spatial size " + shape_str(x.shape()) + " not divisible by " + std::to_string(kh) +
                      "x" + std::to_string(kw));
  const Index Ho = H / kh, Wo = W / kw;
  std::vector<S> yd(static_cast<size_t>(C * Ho * Wo), S(0));
  for (Index c = 0; c < C; ++c)
    for (Index oh = 0; oh < Ho; ++oh)
      for (Index ow = 0; ow < Wo; ++ow) {
        S s = S(0);
        for (Index dh = 0; dh < kh; ++dh)
          for (Index dw = 0; dw < kw; ++dw)
            s += x.data()[static_cast<size_t>((c * H + oh * kh + dh) * W + ow * kw + dw)];
        yd[static_cast<size_t>((c * Ho + oh) * Wo + ow)] = s / static_cast<S>(kh * kw);
      }
  Tensor<S> y({C, Ho, Wo}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), C, H, W, kh, kw, Ho, Wo] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const S inv = S(1) / static_cast<S>(kh * kw);
      for (Index c = 0; c < C; ++c)
        for (Index oh = 0; oh < Ho; ++oh)
          for (Index ow = 0; ow < Wo; ++ow) {
            const S g = yi->grad[static_cast<size_t>((c * Ho + oh) * Wo + ow)] * inv;
            for (Index dh = 0; dh < kh; ++dh)
              for (Index dw = 0; dw < kw; ++dw)
                gx[static_cast<size_t>((c * H + oh * kh + dh) * W + ow * kw + dw)] += g;
          }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> avg_pool2d(const Tensor<S>& x, Index k) {
  return avg_pool2d(x, k, k);
}

// x: [C,H,W] -> [HW, w*w, C]; entry (i, j, :) is the j-th neighbor (row-major
// over the w x w window, zero padded) of spatial location i.
template <std::floating_point S>
Tensor<S> unfold(const Tensor<S>& x, Index w) {
  if (x.rank() != 3) throw ShapeError("unfold: input must be [C,H,W], got " + shape_str(x.shape()));
  if (w < 1 || w % 2 == 0) throw ConfigError("unfold: window must be odd, got " + std::to_string(w));
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index p = w / 2, HW = H * W, K = w * w;
  std::vector<S> yd(static_cast<size_t>(HW * K * C), S(0));
  for (Index h = 0; h < H; ++h)
    for (Index ww = 0; ww < W; ++ww) {
      const Index i = h * W + ww;
      for (Index kh = 0; kh < w; ++kh)
        for (Index kw = 0; kw < w; ++kw) {
          const Index sh = h + kh - p, sw = ww + kw - p;
          if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
          const Index j = kh * w + kw;
          for (Index c = 0; c < C; ++c)
            yd[static_cast<size_t>((i * K + j) * C + c)] = x.data()[static_cast<size_t>((c * H + sh) * W + sw)];
        }
    }
  Tensor<S> y({HW, K, C}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), C, H, W, w, p, K] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      for (Index h = 0; h < H; ++h)
        for (Index ww = 0; ww < W; ++ww) {
          const Index i = h * W + ww;
          for (Index kh = 0; kh < w; ++kh)
            for (Index kw = 0; kw < w; ++kw) {
              const Index sh = h + kh - p, sw = ww + kw - p;
              if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
              const Index j = kh * w + kw;
              for (Index c = 0; c < C; ++c)
                gx[static_cast<size_t>((c * H + sh) * W + sw)] +=
                    yi->grad[static_cast<size_t>((i * K + j) * C + c)];
            }
        }
    });
  }
  return y;
}

// y[i,j] = sum_c unf[i,j,c] * q[i,c]; the per-location dot products of a query
// with its unfolded neighborhood.
template <std::floating_point S>
Tensor<S> local_logits(const Tensor<S>& unf, const Tensor<S>& q) {
  if (unf.rank() != 3 || q.rank() != 2 || unf.dim(0) != q.dim(0) || unf.dim(2) != q.dim(1))
    throw ShapeError("local_logits: incompatible shapes " + shape_str(unf.shape()) + " and " + shape_str(q.shape()));
  const Index L = unf.dim(0), K = unf.dim(1), C = unf.dim(2);
  std::vector<S> yd(static_cast<size_t>(L * K), S(0));
  for (Index i = 0; i < L; ++i)
    for (Index j = 0; j < K; ++j) {
      S s = S(0);
      const S* u = unf.data().data() + (i * K + j) * C;
      const S* qq = q.data().data() + i * C;
      for (Index c = 0; c < C; ++c) s += u[c] * qq[c];
      yd[static_cast<size_t>(i * K + j)] = s;
    }
  Tensor<S> y({L, K}, std::move(yd));
  if (detail::recording<S>() && (unf.requires_grad() || q.requires_grad())) {
    detail::mark_and_record(y, [ui = unf.impl(), qi = q.impl(), yi = y.impl(), L, K, C] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      for (Index i = 0; i < L; ++i)
        for (Index j = 0; j < K; ++j) {
          const S g = gy[static_cast<size_t>(i * K + j)];
          if (g == S(0)) continue;
          if (ui->requires_grad) {
            S* gu = ui->grad_buf().data() + (i * K + j) * C;
            const S* qq = qi->data.data() + i * C;
            for (Index c = 0; c < C; ++c) gu[c] += g * qq[c];
          }
          if (qi->requires_grad) {
            S* gq = qi->grad_buf().data() + i * C;
            const S* u = ui->data.data() + (i * K + j) * C;
            for (Index c = 0; c < C; ++c) gq[c] += g * u[c];
          }
        }
    });
  }
  return y;
}

// y[i,c] = sum_j attn[i,j] * unf[i,j,c]; routes each row's neighborhood values
// by its attention weights.
template <std::floating_point S>
Tensor<S> local_route(const Tensor<S>& attn, const Tensor<S>& unf) {
  if (attn.rank() != 2 || unf.rank() != 3 || attn.dim(0) != unf.dim(0) || attn.dim(1) != unf.dim(1))
    throw ShapeError("local_route: incompatible shapes " + shape_str(attn.shape()) + " and " + shape_str(unf.shape()));
  const Index N = attn.dim(0), K = attn.dim(1), C = unf.dim(2);
  std::vector<S> yd(static_cast<size_t>(N * C), S(0));
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < K; ++j) {
      const S a = attn.data()[static_cast<size_t>(i * K + j)];
      if (a == S(0)) continue;
      const S* u = unf.data().data() + (i * K + j) * C;
      S* out = yd.data() + i * C;
      for (Index c = 0; c < C; ++c) out[c] += a * u[c];
    }
  Tensor<S> y({N, C}, std::move(yd));
  if (detail::recording<S>() && (attn.requires_grad() || unf.requires_grad())) {
    detail::mark_and_record(y, [ai = attn.impl(), ui = unf.impl(), yi = y.impl(), N, K, C] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      for (Index i = 0; i < N; ++i)
        for (Index j = 0; j < K; ++j) {
          const S a = ai->data[static_cast<size_t>(i * K + j)];
          const S* gout = gy.data() + i * C;
          if (ai->requires_grad) {
            const S* u = ui->data.data() + (i * K + j) * C;
            S s = S(0);
            for (Index c = 0; c < C; ++c) s += gout[c] * u[c];
            ai->grad_buf()[static_cast<size_t>(i * K + j)] += s;
          }
          if (ui->requires_grad) {
            S* gu = ui->grad_buf().data() + (i * K + j) * C;
            for (Index c = 0; c < C; ++c) gu[c] += a * gout[c];
          }
        }
    });
  }
  return y;
}

}  // namespace qsattn

#endif  // QSATTN_TENSOR_NN_HPP
