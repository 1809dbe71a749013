#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <fdnet/gemm.hpp>
#include <fdnet/tensor.hpp>

namespace fdn {

// ---------------------------------------------------------------------------
// Elementwise ops. Broadcasting is deliberately restricted to scalar-tensor
// and equal-shape operands.
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { Add, Sub, Mul };

template <typename T>
TensorT<T> binary_op(BinKind kind, const TensorT<T>& a, const TensorT<T>& b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!same_shape(a.shape(), b.shape()) && !a_scalar && !b_scalar)
    throw ConfigError("elementwise: shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));

  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  TensorT<T> y(out_shape);
  auto av = a.data();
  auto bv = b.data();
  auto yv = y.data();
  const std::size_t n = yv.size();
  for (std::size_t i = 0; i < n; ++i) {
    T x0 = av[a_scalar ? 0 : i];
    T x1 = bv[b_scalar ? 0 : i];
    switch (kind) {
      case BinKind::Add: yv[i] = x0 + x1; break;
      case BinKind::Sub: yv[i] = x0 - x1; break;
      case BinKind::Mul: yv[i] = x0 * x1; break;
    }
  }

  if (auto* tp = recording_tape<T>(a, b)) {
    int ai = watch_if_needed(*tp, a);
    int bi = watch_if_needed(*tp, b);
    int yi = tp->watch(y);
    auto ad = a.impl();
    auto bd = b.impl();
    tp->record([tp, kind, ai, bi, yi, ad, bd, a_scalar, b_scalar, n] {
      const auto& gy = tp->grad(yi);
      if (ai >= 0) {
        auto& ga = tp->grad(ai);
        for (std::size_t i = 0; i < n; ++i) {
          T g = gy[i];
          if (kind == BinKind::Mul) g *= bd->v[b_scalar ? 0 : i];
          ga[a_scalar ? 0 : i] += g;
        }
      }
      if (bi >= 0) {
        auto& gb = tp->grad(bi);
        for (std::size_t i = 0; i < n; ++i) {
          T g = gy[i];
          switch (kind) {
            case BinKind::Add: break;
            case BinKind::Sub: g = -g; break;
            case BinKind::Mul: g *= ad->v[a_scalar ? 0 : i]; break;
          }
          gb[b_scalar ? 0 : i] += g;
        }
      }
    });
  }
  return y;
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(detail::BinKind::Add, a, b);
}
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(detail::BinKind::Sub, a, b);
}
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(detail::BinKind::Mul, a, b);
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, double c) {
  return mul(x, TensorT<T>::scalar(static_cast<T>(c)));
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, double c) {
  return add(x, TensorT<T>::scalar(static_cast<T>(c)));
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  auto xv = x.data();
  auto yv = y.data();
  for (std::size_t i = 0; i < yv.size(); ++i)
    yv[i] = xv[i] > T(0) ? xv[i] : T(0);

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    auto xd = x.impl();
    tp->record([tp, xi, yi, xd] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (xd->v[i] > T(0)) gx[i] += gy[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ConfigError("matmul: expects 2-D operands");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ConfigError("matmul: inner extents differ, " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  TensorT<T> y({m, n});
  detail::gemm(false, false, m, n, k, T(1), a.data().data(), k,
               b.data().data(), n, T(0), y.data().data(), n);

  if (auto* tp = detail::recording_tape<T>(a, b)) {
    int ai = detail::watch_if_needed(*tp, a);
    int bi = detail::watch_if_needed(*tp, b);
    int yi = tp->watch(y);
    auto ad = a.impl();
    auto bd = b.impl();
    tp->record([tp, ai, bi, yi, ad, bd, m, n, k] {
      const auto& gy = tp->grad(yi);
      if (ai >= 0)
        detail::gemm(false, true, m, k, n, T(1), gy.data(), n, bd->v.data(), n,
                     T(1), tp->grad(ai).data(), k);
      if (bi >= 0)
        detail::gemm(true, false, k, n, m, T(1), ad->v.data(), k, gy.data(), n,
                     T(1), tp->grad(bi).data(), n);
    });
  }
  return y;
}

// Batched matmul over the leading dimension: (B,m,k) x (B,k,n) -> (B,m,n).
template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw ConfigError("bmm: expects 3-D operands with equal batch");
  const int bsz = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (k != b.dim(1))
    throw ConfigError("bmm: inner extents differ, " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  TensorT<T> y({bsz, m, n});
  const std::ptrdiff_t sa = static_cast<std::ptrdiff_t>(m) * k;
  const std::ptrdiff_t sb = static_cast<std::ptrdiff_t>(k) * n;
  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(m) * n;
  for (int i = 0; i < bsz; ++i)
    detail::gemm(false, false, m, n, k, T(1), a.data().data() + i * sa, k,
                 b.data().data() + i * sb, n, T(0), y.data().data() + i * sy,
                 n);

  if (auto* tp = detail::recording_tape<T>(a, b)) {
    int ai = detail::watch_if_needed(*tp, a);
    int bi = detail::watch_if_needed(*tp, b);
    int yi = tp->watch(y);
    auto ad = a.impl();
    auto bd = b.impl();
    tp->record([tp, ai, bi, yi, ad, bd, bsz, m, n, k, sa, sb, sy] {
      const auto& gy = tp->grad(yi);
      for (int i = 0; i < bsz; ++i) {
        if (ai >= 0)
          detail::gemm(false, true, m, k, n, T(1), gy.data() + i * sy, n,
                       bd->v.data() + i * sb, n, T(1),
                       tp->grad(ai).data() + i * sa, k);
        if (bi >= 0)
          detail::gemm(true, false, k, n, m, T(1), ad->v.data() + i * sa, k,
                       gy.data() + i * sy, n, T(1),
                       tp->grad(bi).data() + i * sb, n);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// Pure view: the result shares both storage and autograd slot with `x`.
template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  return x.view(std::move(shape));
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& x) {
  if (x.ndim() != 2) throw ConfigError("transpose2d: expects 2-D");
  const int m = x.dim(0), n = x.dim(1);
  TensorT<T> y({n, m});
  auto xv = x.data();
  auto yv = y.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      yv[static_cast<std::size_t>(j) * m + i] =
          xv[static_cast<std::size_t>(i) * n + j];

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    tp->record([tp, xi, yi, m, n] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(i) * n + j] +=
              gy[static_cast<std::size_t>(j) * m + i];
    });
  }
  return y;
}

// Swap the last two axes of a 3-D tensor: (B,m,n) -> (B,n,m).
template <typename T>
TensorT<T> transpose_last2(const TensorT<T>& x) {
  if (x.ndim() != 3) throw ConfigError("transpose_last2: expects 3-D");
  const int b = x.dim(0), m = x.dim(1), n = x.dim(2);
  TensorT<T> y({b, n, m});
  auto xv = x.data();
  auto yv = y.data();
  for (int s = 0; s < b; ++s) {
    const std::size_t off = static_cast<std::size_t>(s) * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        yv[off + static_cast<std::size_t>(j) * m + i] =
            xv[off + static_cast<std::size_t>(i) * n + j];
  }

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    tp->record([tp, xi, yi, b, m, n] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      for (int s = 0; s < b; ++s) {
        const std::size_t off = static_cast<std::size_t>(s) * m * n;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gx[off + static_cast<std::size_t>(i) * n + j] +=
                gy[off + static_cast<std::size_t>(j) * m + i];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Convolution (zero padding, odd kernels)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, T* col) {
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < kh; ++r)
      for (int s = 0; s < kw; ++s) {
        T* dst = col + (static_cast<std::size_t>(ch) * kh * kw +
                        static_cast<std::size_t>(r) * kw + s) *
                           ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride + r - pad;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride + s - pad;
            dst[static_cast<std::size_t>(oh) * wo + ow] =
                (ih >= 0 && ih < h && iw >= 0 && iw < w)
                    ? x[(static_cast<std::size_t>(ch) * h + ih) * w + iw]
                    : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride,
                int pad, int ho, int wo, T* x) {
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < kh; ++r)
      for (int s = 0; s < kw; ++s) {
        const T* src = col + (static_cast<std::size_t>(ch) * kh * kw +
                              static_cast<std::size_t>(r) * kw + s) *
                                 ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride + r - pad;
          if (ih < 0 || ih >= h) continue;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride + s - pad;
            if (iw < 0 || iw >= w) continue;
            x[(static_cast<std::size_t>(ch) * h + ih) * w + iw] +=
                src[static_cast<std::size_t>(oh) * wo + ow];
          }
        }
      }
}

}  // namespace detail

// x: (N,C,H,W), w: (K,C,kh,kw) -> (N,K,H',W') with H' = (H + 2p - kh)/s + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride = 1,
                  int pad = 0) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ConfigError("conv2d: expects 4-D input and kernel");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int k = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (kc != c)
    throw ConfigError("conv2d: kernel channels " + std::to_string(kc) +
                      " != input channels " + std::to_string(c));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ConfigError("conv2d: kernel extents must be odd");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if ((h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0)
    throw ConfigError("conv2d: non-integer output extent for input " +
                      shape_str(x.shape()) + ", kernel " +
                      shape_str(w.shape()) + ", stride " +
                      std::to_string(stride) + ", pad " + std::to_string(pad));
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  const int ckk = c * kh * kw;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;

  TensorT<T> y({n, k, ho, wo});
  std::vector<T> col(static_cast<std::size_t>(ckk) * plane);
  for (int i = 0; i < n; ++i) {
    detail::im2col(x.data().data() + static_cast<std::size_t>(i) * c * h * wd,
                   c, h, wd, kh, kw, stride, pad, ho, wo, col.data());
    detail::gemm(false, false, k, static_cast<int>(plane), ckk, T(1),
                 w.data().data(), ckk, col.data(), static_cast<int>(plane),
                 T(0), y.data().data() + static_cast<std::size_t>(i) * k * plane,
                 static_cast<int>(plane));
  }

  if (auto* tp = detail::recording_tape<T>(x, w)) {
    int xi = detail::watch_if_needed(*tp, x);
    int wi = detail::watch_if_needed(*tp, w);
    int yi = tp->watch(y);
    auto xd = x.impl();
    auto wdp = w.impl();
    tp->record([tp, xi, wi, yi, xd, wdp, n, c, h, wd, k, kh, kw, stride, pad,
                ho, wo, ckk, plane] {
      const auto& gy = tp->grad(yi);
      std::vector<T> col(static_cast<std::size_t>(ckk) * plane);
      for (int i = 0; i < n; ++i) {
        const T* gyi = gy.data() + static_cast<std::size_t>(i) * k * plane;
        if (wi >= 0) {
          detail::im2col(xd->v.data() + static_cast<std::size_t>(i) * c * h * wd,
                         c, h, wd, kh, kw, stride, pad, ho, wo, col.data());
          detail::gemm(false, true, k, ckk, static_cast<int>(plane), T(1), gyi,
                       static_cast<int>(plane), col.data(),
                       static_cast<int>(plane), T(1), tp->grad(wi).data(), ckk);
        }
        if (xi >= 0) {
          detail::gemm(true, false, ckk, static_cast<int>(plane), k, T(1),
                       wdp->v.data(), ckk, gyi, static_cast<int>(plane), T(0),
                       col.data(), static_cast<int>(plane));
          detail::col2im_add(col.data(), c, h, wd, kh, kw, stride, pad, ho, wo,
                             tp->grad(xi).data() +
                                 static_cast<std::size_t>(i) * c * h * wd);
        }
      }
    });
  }
  return y;
}

// y[n,c,h,w] = x[n,c,h,w] + b[c]
template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.ndim() != 4 || b.ndim() != 1 || b.dim(0) != x.dim(1))
    throw ConfigError("add_channel_bias: want (N,C,H,W) and (C)");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  TensorT<T> y(x.shape());
  auto xv = x.data();
  auto bv = b.data();
  auto yv = y.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) yv[off + p] = xv[off + p] + bv[ch];
    }

  if (auto* tp = detail::recording_tape<T>(x, b)) {
    int xi = detail::watch_if_needed(*tp, x);
    int bi = detail::watch_if_needed(*tp, b);
    int yi = tp->watch(y);
    tp->record([tp, xi, bi, yi, n, c, plane] {
      const auto& gy = tp->grad(yi);
      if (xi >= 0) {
        auto& gx = tp->grad(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (bi >= 0) {
        auto& gb = tp->grad(bi);
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t off =
                (static_cast<std::size_t>(i) * c + ch) * plane;
            T s = T(0);
            for (std::size_t p = 0; p < plane; ++p) s += gy[off + p];
            gb[ch] += s;
          }
      }
    });
  }
  return y;
}

// y[n,k] = x[n,k] + b[k]
template <typename T>
TensorT<T> add_row_bias(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
    throw ConfigError("add_row_bias: want (N,K) and (K)");
  const int n = x.dim(0), k = x.dim(1);
  TensorT<T> y(x.shape());
  auto xv = x.data();
  auto bv = b.data();
  auto yv = y.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      yv[static_cast<std::size_t>(i) * k + j] =
          xv[static_cast<std::size_t>(i) * k + j] + bv[j];

  if (auto* tp = detail::recording_tape<T>(x, b)) {
    int xi = detail::watch_if_needed(*tp, x);
    int bi = detail::watch_if_needed(*tp, b);
    int yi = tp->watch(y);
    tp->record([tp, xi, bi, yi, n, k] {
      const auto& gy = tp->grad(yi);
      if (xi >= 0) {
        auto& gx = tp->grad(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (bi >= 0) {
        auto& gb = tp->grad(bi);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < k; ++j)
            gb[j] += gy[static_cast<std::size_t>(i) * k + j];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax and reductions
// ---------------------------------------------------------------------------

// Numerically stable softmax along `axis` (max subtraction).
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim())
    throw ConfigError("softmax: axis out of range");
  std::int64_t outer = 1, inner = 1;
  const int len = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);

  TensorT<T> y(x.shape());
  auto xv = x.data();
  auto yv = y.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::size_t base = static_cast<std::size_t>(o) * len * inner + in;
      T mx = xv[base];
      for (int l = 1; l < len; ++l)
        mx = std::max(mx, xv[base + static_cast<std::size_t>(l) * inner]);
      T denom = T(0);
      for (int l = 0; l < len; ++l) {
        T e = std::exp(xv[base + static_cast<std::size_t>(l) * inner] - mx);
        yv[base + static_cast<std::size_t>(l) * inner] = e;
        denom += e;
      }
      for (int l = 0; l < len; ++l)
        yv[base + static_cast<std::size_t>(l) * inner] /= denom;
    }

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    auto yd = y.impl();
    tp->record([tp, xi, yi, yd, outer, inner, len] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::size_t base =
              static_cast<std::size_t>(o) * len * inner + in;
          T dot = T(0);
          for (int l = 0; l < len; ++l) {
            const std::size_t ix = base + static_cast<std::size_t>(l) * inner;
            dot += gy[ix] * yd->v[ix];
          }
          for (int l = 0; l < len; ++l) {
            const std::size_t ix = base + static_cast<std::size_t>(l) * inner;
            gx[ix] += yd->v[ix] * (gy[ix] - dot);
          }
        }
    });
  }
  return y;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  TensorT<T> y = TensorT<T>::scalar(s);
  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    tp->record([tp, xi, yi] {
      const T g = tp->grad(yi)[0];
      auto& gx = tp->grad(xi);
      for (auto& v : gx) v += g;
    });
  }
  return y;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  const auto n = static_cast<T>(x.numel());
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Max pooling; backward routes the gradient to the argmax element only
// (ties: first in row-major scan order).
template <typename T>
TensorT<T> max_pool2d(const TensorT<T>& x, int win = 2, int stride = 2) {
  if (x.ndim() != 4) throw ConfigError("max_pool2d: expects (N,C,H,W)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < win || w < win) throw ConfigError("max_pool2d: window exceeds input");
  const int ho = (h - win) / stride + 1;
  const int wo = (w - win) / stride + 1;
  TensorT<T> y({n, c, ho, wo});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(y.numel()));
  auto xv = x.data();
  auto yv = y.data();
  std::size_t oi = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) *
                               static_cast<std::size_t>(h) * w;
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_ix = -1;
          for (int r = 0; r < win; ++r)
            for (int s = 0; s < win; ++s) {
              const std::size_t ix =
                  base + static_cast<std::size_t>(oh * stride + r) * w +
                  (ow * stride + s);
              if (xv[ix] > best) {
                best = xv[ix];
                best_ix = static_cast<std::int64_t>(ix);
              }
            }
          yv[oi] = best;
          arg[oi] = best_ix;
        }
    }

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    tp->record([tp, xi, yi, arg = std::move(arg)] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      for (std::size_t i = 0; i < gy.size(); ++i)
        gx[static_cast<std::size_t>(arg[i])] += gy[i];
    });
  }
  return y;
}

// Global average pooling: (N,C,H,W) -> (N,C).
template <typename T>
TensorT<T> avg_pool_global(const TensorT<T>& x) {
  if (x.ndim() != 4) throw ConfigError("avg_pool_global: expects (N,C,H,W)");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  TensorT<T> y({n, c});
  auto xv = x.data();
  auto yv = y.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      T s = T(0);
      for (std::size_t p = 0; p < plane; ++p) s += xv[off + p];
      yv[static_cast<std::size_t>(i) * c + ch] = s / static_cast<T>(plane);
    }

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    tp->record([tp, xi, yi, n, c, plane] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      const T inv = T(1) / static_cast<T>(plane);
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const T g = gy[static_cast<std::size_t>(i) * c + ch] * inv;
          const std::size_t off =
              (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t p = 0; p < plane; ++p) gx[off + p] += g;
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Non-autodiff helpers
// ---------------------------------------------------------------------------

// Row argmax for (N,K) logits; ties resolve to the first index.
template <typename T>
std::vector<int> argmax_rows(const TensorT<T>& x) {
  if (x.ndim() != 2) throw ConfigError("argmax_rows: expects (N,K)");
  const int n = x.dim(0), k = x.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  auto xv = x.data();
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (xv[static_cast<std::size_t>(i) * k + j] >
          xv[static_cast<std::size_t>(i) * k + best])
        best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace fdn
