#pragma once

#include <fdnet/layers.hpp>

namespace fdn {

// ---------------------------------------------------------------------------
// Denoising block configuration
// ---------------------------------------------------------------------------

enum class DenoiseKind {
  NonlocalGaussian,
  NonlocalDot,
  BilateralGaussian,
  BilateralDot,
  Mean3x3,
  Median3x3,
  Null,
};

inline const char* to_string(DenoiseKind k) {
  switch (k) {
    case DenoiseKind::NonlocalGaussian: return "nonlocal-gaussian";
    case DenoiseKind::NonlocalDot: return "nonlocal-dotproduct";
    case DenoiseKind::BilateralGaussian: return "bilateral-gaussian";
    case DenoiseKind::BilateralDot: return "bilateral-dotproduct";
    case DenoiseKind::Mean3x3: return "mean3x3";
    case DenoiseKind::Median3x3: return "median3x3";
    case DenoiseKind::Null: return "null";
  }
  return "?";
}

inline DenoiseKind parse_denoise_kind(const std::string& s) {
  for (DenoiseKind k :
       {DenoiseKind::NonlocalGaussian, DenoiseKind::NonlocalDot,
        DenoiseKind::BilateralGaussian, DenoiseKind::BilateralDot,
        DenoiseKind::Mean3x3, DenoiseKind::Median3x3, DenoiseKind::Null})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown denoising operation '" + s + "'");
}

inline bool is_gaussian(DenoiseKind k) {
  return k == DenoiseKind::NonlocalGaussian ||
         k == DenoiseKind::BilateralGaussian;
}
inline bool is_nonlocal(DenoiseKind k) {
  return k == DenoiseKind::NonlocalGaussian || k == DenoiseKind::NonlocalDot;
}
inline bool is_local_filter(DenoiseKind k) {
  return k == DenoiseKind::BilateralGaussian ||
         k == DenoiseKind::BilateralDot || k == DenoiseKind::Mean3x3 ||
         k == DenoiseKind::Median3x3;
}

struct DenoiseBlockSpec {
  DenoiseKind kind = DenoiseKind::Null;
  int neighborhood = 3;    // local filters only
  bool embed = false;      // Gaussian weightings only
  bool subsample = false;  // non-local only: 2x2 max pool on the j side
  int channels = 0;

  static DenoiseBlockSpec make(DenoiseKind kind, int channels,
                               int neighborhood = 3, bool subsample = false) {
    DenoiseBlockSpec s;
    s.kind = kind;
    s.channels = channels;
    s.neighborhood = neighborhood;
    s.subsample = subsample;
    s.embed = is_gaussian(kind);
    s.validate();
    return s;
  }

  void validate() const {
    if (channels <= 0)
      throw ConfigError("denoise spec: channel count must be positive");
    if (is_gaussian(kind) != embed)
      throw ConfigError(std::string("denoise spec: ") + to_string(kind) +
                        (embed ? " does not take embeddings"
                               : " requires embeddings"));
    if (subsample && !is_nonlocal(kind))
      throw ConfigError("denoise spec: subsampling applies to non-local "
                        "operations only");
    if (neighborhood < 1 || neighborhood % 2 == 0)
      throw ConfigError("denoise spec: neighborhood must be a positive odd "
                        "integer");
  }

  // Extra parameters a block of this kind adds to a model.
  std::int64_t param_count() const {
    const std::int64_t d = channels;
    std::int64_t n = d * d + d;  // 1x1 conv + bias
    if (embed) n += 2 * d * d;   // theta, phi
    return n;
  }
};

// Learned state of one denoising block: the wrapping 1x1 convolution (zero
// initialized so the block starts as the identity) plus the optional
// embedding convolutions of the Gaussian weightings.
template <typename T>
struct DenoiseBlockParamsT {
  TensorT<T> conv_w;  // (d,d,1,1)
  TensorT<T> conv_b;  // (d)
  TensorT<T> theta_w; // (d,d,1,1), Gaussian only
  TensorT<T> phi_w;   // (d,d,1,1), Gaussian only

  static DenoiseBlockParamsT zeros(const DenoiseBlockSpec& spec) {
    DenoiseBlockParamsT p;
    const int d = spec.channels;
    p.conv_w = TensorT<T>({d, d, 1, 1}, T(0));
    p.conv_b = TensorT<T>({d}, T(0));
    if (spec.embed) {
      p.theta_w = TensorT<T>({d, d, 1, 1}, T(0));
      p.phi_w = TensorT<T>({d, d, 1, 1}, T(0));
    }
    return p;
  }

  void check(const DenoiseBlockSpec& spec) const {
    const int d = spec.channels;
    auto expect = [d](const TensorT<T>& t, const Shape& s, const char* name) {
      if (!t.defined() || !same_shape(t.shape(), s))
        throw ConfigError(std::string("denoise params: bad shape for ") + name +
                          ", want " + shape_str(s));
      (void)d;
    };
    expect(conv_w, {d, d, 1, 1}, "conv_w");
    expect(conv_b, {d}, "conv_b");
    if (spec.embed) {
      expect(theta_w, {d, d, 1, 1}, "theta_w");
      expect(phi_w, {d, d, 1, 1}, "phi_w");
    }
  }
};

using DenoiseBlockParams = DenoiseBlockParamsT<float>;

// Precision change for gradient checking.
template <typename To, typename From>
DenoiseBlockParamsT<To> cast_params(const DenoiseBlockParamsT<From>& p) {
  DenoiseBlockParamsT<To> out;
  if (p.conv_w.defined()) out.conv_w = tensor_cast<To>(p.conv_w);
  if (p.conv_b.defined()) out.conv_b = tensor_cast<To>(p.conv_b);
  if (p.theta_w.defined()) out.theta_w = tensor_cast<To>(p.theta_w);
  if (p.phi_w.defined()) out.phi_w = tensor_cast<To>(p.phi_w);
  return out;
}

// ---------------------------------------------------------------------------
// Local filters (3x3 by default, stride 1, edge-replicate padding).
// The window is taken from the edge-replicated image, so border windows
// contain repeated elements.
// ---------------------------------------------------------------------------

namespace detail {

inline int clamp_index(int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

}  // namespace detail

template <typename T>
TensorT<T> mean_filter(const TensorT<T>& x, int win = 3) {
  if (x.ndim() != 4) throw ConfigError("mean_filter: expects (N,C,H,W)");
  if (win < 1 || win % 2 == 0)
    throw ConfigError("mean_filter: window must be odd");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int r = win / 2;
  const T inv = T(1) / static_cast<T>(win * win);
  TensorT<T> y(x.shape());
  auto xv = x.data();
  auto yv = y.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) *
                               static_cast<std::size_t>(h) * w;
      for (int ph = 0; ph < h; ++ph)
        for (int pw = 0; pw < w; ++pw) {
          T s = T(0);
          for (int dr = -r; dr <= r; ++dr)
            for (int ds = -r; ds <= r; ++ds)
              s += xv[base +
                      static_cast<std::size_t>(detail::clamp_index(ph + dr, h)) *
                          w +
                      detail::clamp_index(pw + ds, w)];
          yv[base + static_cast<std::size_t>(ph) * w + pw] = s * inv;
        }
    }

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    tp->record([tp, xi, yi, n, c, h, w, r, inv] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t base = (static_cast<std::size_t>(i) * c + ch) *
                                   static_cast<std::size_t>(h) * w;
          for (int ph = 0; ph < h; ++ph)
            for (int pw = 0; pw < w; ++pw) {
              const T g = gy[base + static_cast<std::size_t>(ph) * w + pw] * inv;
              for (int dr = -r; dr <= r; ++dr)
                for (int ds = -r; ds <= r; ++ds)
                  gx[base +
                     static_cast<std::size_t>(detail::clamp_index(ph + dr, h)) *
                         w +
                     detail::clamp_index(pw + ds, w)] += g;
            }
        }
    });
  }
  return y;
}

// Median over the window, per channel. Backward routes the gradient to the
// window element equal to the median, first in scan order on ties, mirroring
// the max-pool convention.
template <typename T>
TensorT<T> median_filter(const TensorT<T>& x, int win = 3) {
  if (x.ndim() != 4) throw ConfigError("median_filter: expects (N,C,H,W)");
  if (win < 1 || win % 2 == 0)
    throw ConfigError("median_filter: window must be odd");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int r = win / 2;
  const int wsize = win * win;
  TensorT<T> y(x.shape());
  std::vector<std::int64_t> route(static_cast<std::size_t>(x.numel()));
  std::vector<T> window(static_cast<std::size_t>(wsize));
  auto xv = x.data();
  auto yv = y.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) *
                               static_cast<std::size_t>(h) * w;
      for (int ph = 0; ph < h; ++ph)
        for (int pw = 0; pw < w; ++pw) {
          int q = 0;
          for (int dr = -r; dr <= r; ++dr)
            for (int ds = -r; ds <= r; ++ds)
              window[static_cast<std::size_t>(q++)] =
                  xv[base +
                     static_cast<std::size_t>(detail::clamp_index(ph + dr, h)) *
                         w +
                     detail::clamp_index(pw + ds, w)];
          std::vector<T> sorted(window);
          std::nth_element(sorted.begin(), sorted.begin() + wsize / 2,
                           sorted.end());
          const T med = sorted[static_cast<std::size_t>(wsize / 2)];
          const std::size_t oix = base + static_cast<std::size_t>(ph) * w + pw;
          yv[oix] = med;
          // First window slot holding the median, in scan order.
          std::int64_t src = -1;
          q = 0;
          for (int dr = -r; dr <= r && src < 0; ++dr)
            for (int ds = -r; ds <= r; ++ds, ++q)
              if (window[static_cast<std::size_t>(q)] == med) {
                src = static_cast<std::int64_t>(
                    base +
                    static_cast<std::size_t>(detail::clamp_index(ph + dr, h)) *
                        w +
                    detail::clamp_index(pw + ds, w));
                break;
              }
          route[oix] = src;
        }
    }

  if (auto* tp = detail::recording_tape<T>(x)) {
    int xi = tp->watch(x);
    int yi = tp->watch(y);
    tp->record([tp, xi, yi, route = std::move(route)] {
      const auto& gy = tp->grad(yi);
      auto& gx = tp->grad(xi);
      for (std::size_t i = 0; i < gy.size(); ++i)
        gx[static_cast<std::size_t>(route[i])] += gy[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Bilateral filter: the local-window restriction of non-local means. The
// weighted mean runs over the window around each pixel; Gaussian weighting
// softmaxes embedded dot products scaled by 1/sqrt(d), dot-product weighting
// divides raw inner products by the window size.
// ---------------------------------------------------------------------------

namespace detail {

// Fused bilateral core with hand-derived backward. Gaussian variant when
// theta/phi are defined; dot-product otherwise (theta/phi undefined).
template <typename T>
TensorT<T> bilateral_core(const TensorT<T>& x, const TensorT<T>& theta,
                          const TensorT<T>& phi, int win) {
  const bool gaussian = theta.defined();
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int d = gaussian ? theta.dim(1) : c;
  const int r = win / 2;
  const int wsize = win * win;
  const T inv_scale =
      gaussian ? T(1) / std::sqrt(static_cast<T>(d)) : T(1) / static_cast<T>(wsize);

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  TensorT<T> y(x.shape());
  auto xv = x.data();
  auto yv = y.data();
  const T* tv = gaussian ? theta.data().data() : nullptr;
  const T* pv = gaussian ? phi.data().data() : nullptr;

  std::vector<std::size_t> nb(static_cast<std::size_t>(wsize));
  std::vector<T> wt(static_cast<std::size_t>(wsize));

  auto window_of = [&](int ph, int pw, std::vector<std::size_t>& out) {
    int q = 0;
    for (int dr = -r; dr <= r; ++dr)
      for (int ds = -r; ds <= r; ++ds)
        out[static_cast<std::size_t>(q++)] =
            static_cast<std::size_t>(clamp_index(ph + dr, h)) * w +
            clamp_index(pw + ds, w);
  };
  // Weights for pixel i of sample s; `emb` points at the embedding used for
  // similarity (theta/phi for Gaussian, x itself for dot product).
  auto weights_at = [&](int s, std::size_t pix,
                        const std::vector<std::size_t>& win_ix,
                        std::vector<T>& out) {
    const std::size_t ebase =
        static_cast<std::size_t>(s) * static_cast<std::size_t>(d) * plane;
    const T* qi = gaussian ? tv : xv.data();
    const T* kj = gaussian ? pv : xv.data();
    for (int k = 0; k < wsize; ++k) {
      T dot = T(0);
      for (int e = 0; e < d; ++e)
        dot += qi[ebase + static_cast<std::size_t>(e) * plane + pix] *
               kj[ebase + static_cast<std::size_t>(e) * plane +
                  win_ix[static_cast<std::size_t>(k)]];
      out[static_cast<std::size_t>(k)] = dot * inv_scale;
    }
    if (gaussian) {
      T mx = out[0];
      for (int k = 1; k < wsize; ++k) mx = std::max(mx, out[static_cast<std::size_t>(k)]);
      T denom = T(0);
      for (int k = 0; k < wsize; ++k) {
        out[static_cast<std::size_t>(k)] = std::exp(out[static_cast<std::size_t>(k)] - mx);
        denom += out[static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < wsize; ++k) out[static_cast<std::size_t>(k)] /= denom;
    }
  };

  for (int s = 0; s < n; ++s) {
    const std::size_t xbase =
        static_cast<std::size_t>(s) * static_cast<std::size_t>(c) * plane;
    for (int ph = 0; ph < h; ++ph)
      for (int pw = 0; pw < w; ++pw) {
        const std::size_t pix = static_cast<std::size_t>(ph) * w + pw;
        window_of(ph, pw, nb);
        weights_at(s, pix, nb, wt);
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t cb = xbase + static_cast<std::size_t>(ch) * plane;
          T acc = T(0);
          for (int k = 0; k < wsize; ++k)
            acc += wt[static_cast<std::size_t>(k)] *
                   xv[cb + nb[static_cast<std::size_t>(k)]];
          yv[cb + pix] = acc;
        }
      }
  }

  auto* tp = gaussian ? recording_tape<T>(x, theta, phi) : recording_tape<T>(x);
  if (tp) {
    int xi = watch_if_needed(*tp, x);
    int ti = gaussian ? watch_if_needed(*tp, theta) : -1;
    int pi = gaussian ? watch_if_needed(*tp, phi) : -1;
    int yi = tp->watch(y);
    auto xd = x.impl();
    auto td = gaussian ? theta.impl() : nullptr;
    auto pd = gaussian ? phi.impl() : nullptr;
    tp->record([tp, xi, ti, pi, yi, xd, td, pd, gaussian, n, c, h, w, d, r,
                wsize, inv_scale, plane] {
      const auto& gy = tp->grad(yi);
      std::vector<std::size_t> nb(static_cast<std::size_t>(wsize));
      std::vector<T> wt(static_cast<std::size_t>(wsize));
      std::vector<T> u(static_cast<std::size_t>(wsize));
      std::vector<T> dsc(static_cast<std::size_t>(wsize));
      const T* xv = xd->v.data();
      const T* tv = gaussian ? td->v.data() : nullptr;
      const T* pv = gaussian ? pd->v.data() : nullptr;

      for (int s = 0; s < n; ++s) {
        const std::size_t xbase =
            static_cast<std::size_t>(s) * static_cast<std::size_t>(c) * plane;
        const std::size_t ebase =
            static_cast<std::size_t>(s) * static_cast<std::size_t>(d) * plane;
        for (int ph = 0; ph < h; ++ph)
          for (int pw = 0; pw < w; ++pw) {
            const std::size_t pix = static_cast<std::size_t>(ph) * w + pw;
            // Rebuild window and weights (cheaper than storing them all).
            int q = 0;
            for (int dr = -r; dr <= r; ++dr)
              for (int ds = -r; ds <= r; ++ds)
                nb[static_cast<std::size_t>(q++)] =
                    static_cast<std::size_t>(clamp_index(ph + dr, h)) * w +
                    clamp_index(pw + ds, w);
            const T* qi = gaussian ? tv : xv;
            const T* kj = gaussian ? pv : xv;
            for (int k = 0; k < wsize; ++k) {
              T dot = T(0);
              for (int e = 0; e < d; ++e)
                dot += qi[ebase + static_cast<std::size_t>(e) * plane + pix] *
                       kj[ebase + static_cast<std::size_t>(e) * plane +
                          nb[static_cast<std::size_t>(k)]];
              wt[static_cast<std::size_t>(k)] = dot * inv_scale;
            }
            if (gaussian) {
              T mx = wt[0];
              for (int k = 1; k < wsize; ++k)
                mx = std::max(mx, wt[static_cast<std::size_t>(k)]);
              T denom = T(0);
              for (int k = 0; k < wsize; ++k) {
                wt[static_cast<std::size_t>(k)] =
                    std::exp(wt[static_cast<std::size_t>(k)] - mx);
                denom += wt[static_cast<std::size_t>(k)];
              }
              for (int k = 0; k < wsize; ++k)
                wt[static_cast<std::size_t>(k)] /= denom;
            }

            // u_k = sum_c g[c,i] * x[c,j_k]; value-path gradient to x[c,j_k].
            for (int k = 0; k < wsize; ++k) u[static_cast<std::size_t>(k)] = T(0);
            for (int ch = 0; ch < c; ++ch) {
              const std::size_t cb =
                  xbase + static_cast<std::size_t>(ch) * plane;
              const T g = gy[cb + pix];
              if (g == T(0)) continue;
              for (int k = 0; k < wsize; ++k)
                u[static_cast<std::size_t>(k)] +=
                    g * xv[cb + nb[static_cast<std::size_t>(k)]];
            }
            if (xi >= 0) {
              auto& gx = tp->grad(xi);
              for (int ch = 0; ch < c; ++ch) {
                const std::size_t cb =
                    xbase + static_cast<std::size_t>(ch) * plane;
                const T g = gy[cb + pix];
                if (g == T(0)) continue;
                for (int k = 0; k < wsize; ++k)
                  gx[cb + nb[static_cast<std::size_t>(k)]] +=
                      wt[static_cast<std::size_t>(k)] * g;
              }
            }

            if (gaussian) {
              // Softmax backward on the window scores.
              T wu = T(0);
              for (int k = 0; k < wsize; ++k)
                wu += wt[static_cast<std::size_t>(k)] *
                      u[static_cast<std::size_t>(k)];
              for (int k = 0; k < wsize; ++k)
                dsc[static_cast<std::size_t>(k)] =
                    wt[static_cast<std::size_t>(k)] *
                    (u[static_cast<std::size_t>(k)] - wu) * inv_scale;
              if (ti >= 0) {
                auto& gt = tp->grad(ti);
                for (int e = 0; e < d; ++e) {
                  const std::size_t eb =
                      ebase + static_cast<std::size_t>(e) * plane;
                  T acc = T(0);
                  for (int k = 0; k < wsize; ++k)
                    acc += dsc[static_cast<std::size_t>(k)] *
                           pv[eb + nb[static_cast<std::size_t>(k)]];
                  gt[eb + pix] += acc;
                }
              }
              if (pi >= 0) {
                auto& gp = tp->grad(pi);
                for (int e = 0; e < d; ++e) {
                  const std::size_t eb =
                      ebase + static_cast<std::size_t>(e) * plane;
                  const T th = tv[eb + pix];
                  for (int k = 0; k < wsize; ++k)
                    gp[eb + nb[static_cast<std::size_t>(k)]] +=
                        dsc[static_cast<std::size_t>(k)] * th;
                }
              }
            } else if (xi >= 0) {
              // Similarity path of the dot-product weighting: s_k depends on
              // x_i and x_{j_k} directly.
              auto& gx = tp->grad(xi);
              for (int k = 0; k < wsize; ++k)
                dsc[static_cast<std::size_t>(k)] =
                    u[static_cast<std::size_t>(k)] * inv_scale;
              for (int e = 0; e < c; ++e) {
                const std::size_t eb =
                    xbase + static_cast<std::size_t>(e) * plane;
                T acc = T(0);
                const T xie = xv[eb + pix];
                for (int k = 0; k < wsize; ++k) {
                  const T dk = dsc[static_cast<std::size_t>(k)];
                  acc += dk * xv[eb + nb[static_cast<std::size_t>(k)]];
                  gx[eb + nb[static_cast<std::size_t>(k)]] += dk * xie;
                }
                gx[eb + pix] += acc;
              }
            }
          }
      }
    });
  }
  return y;
}

}  // namespace detail

template <typename T>
TensorT<T> bilateral_filter(const TensorT<T>& x, const DenoiseBlockSpec& spec,
                            const DenoiseBlockParamsT<T>& params) {
  spec.validate();
  if (spec.kind != DenoiseKind::BilateralGaussian &&
      spec.kind != DenoiseKind::BilateralDot)
    throw ConfigError("bilateral_filter: spec kind is not bilateral");
  if (x.ndim() != 4) throw ConfigError("bilateral_filter: expects (N,C,H,W)");
  if (x.dim(1) != spec.channels)
    throw ConfigError("bilateral_filter: channel mismatch");
  if (spec.neighborhood > x.dim(2) || spec.neighborhood > x.dim(3))
    throw ConfigError("bilateral_filter: neighborhood " +
                      std::to_string(spec.neighborhood) +
                      " exceeds feature map " + shape_str(x.shape()));
  if (spec.kind == DenoiseKind::BilateralGaussian) {
    params.check(spec);
    TensorT<T> theta = conv2d(x, params.theta_w);
    TensorT<T> phi = conv2d(x, params.phi_w);
    return detail::bilateral_core(x, theta, phi, spec.neighborhood);
  }
  TensorT<T> none;
  return detail::bilateral_core(x, none, none, spec.neighborhood);
}

// ---------------------------------------------------------------------------
// Non-local means over all spatial locations:
//   y_i = 1/C(x) * sum_j f(x_i, x_j) x_j
// Gaussian: f = exp(theta(x_i)^T phi(x_j) / sqrt(d)), C = sum_j f (a row
// softmax). Dot product: f = x_i^T x_j, C = pixel count, no embeddings.
// With `subsample`, the j side (weights and averaged values) is reduced by a
// 2x2 max pool; the output stays full sized because the i side is not pooled.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> nonlocal_means(const TensorT<T>& x, const DenoiseBlockSpec& spec,
                          const DenoiseBlockParamsT<T>& params) {
  spec.validate();
  if (!is_nonlocal(spec.kind))
    throw ConfigError("nonlocal_means: spec kind is not non-local");
  if (x.ndim() != 4) throw ConfigError("nonlocal_means: expects (N,C,H,W)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != spec.channels) throw ConfigError("nonlocal_means: channel mismatch");
  if (h * w == 0) throw DataError("nonlocal_means: empty feature map");

  TensorT<T> xj = spec.subsample ? max_pool2d(x, 2, 2) : x;
  const int hw = h * w;
  const int hwj = xj.dim(2) * xj.dim(3);

  // (N,HWj,C) value matrix shared by both variants.
  TensorT<T> vj = transpose_last2(reshape(xj, {n, c, hwj}));

  TensorT<T> scores;
  double norm = 1.0;
  if (spec.kind == DenoiseKind::NonlocalGaussian) {
    params.check(spec);
    const int d = spec.channels;
    TensorT<T> theta = conv2d(x, params.theta_w);
    TensorT<T> phi = conv2d(xj, params.phi_w);
    TensorT<T> tf = transpose_last2(reshape(theta, {n, d, hw}));  // (N,HW,d)
    TensorT<T> pf = reshape(phi, {n, d, hwj});                    // (N,d,HWj)
    scores = softmax(scale(bmm(tf, pf), 1.0 / std::sqrt(static_cast<double>(d))), 2);
  } else {
    TensorT<T> xf = transpose_last2(reshape(x, {n, c, hw}));  // (N,HW,C)
    scores = bmm(xf, reshape(xj, {n, c, hwj}));               // (N,HW,HWj)
    norm = 1.0 / static_cast<double>(hwj);
  }

  TensorT<T> yf = bmm(scores, vj);  // (N,HW,C)
  if (norm != 1.0) yf = scale(yf, norm);
  return reshape(transpose_last2(yf), {n, c, h, w});
}

// ---------------------------------------------------------------------------
// Denoising operation dispatch and the generic block wrapper.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> denoise_op(const TensorT<T>& x, const DenoiseBlockSpec& spec,
                      const DenoiseBlockParamsT<T>& params) {
  switch (spec.kind) {
    case DenoiseKind::NonlocalGaussian:
    case DenoiseKind::NonlocalDot:
      return nonlocal_means(x, spec, params);
    case DenoiseKind::BilateralGaussian:
    case DenoiseKind::BilateralDot:
      return bilateral_filter(x, spec, params);
    case DenoiseKind::Mean3x3:
      return mean_filter(x, 3);
    case DenoiseKind::Median3x3:
      return median_filter(x, 3);
    case DenoiseKind::Null:
      return x;
  }
  throw ConfigError("denoise_op: unhandled kind");
}

enum class BlockMode {
  Full,        // x + Conv1x1(D(x))
  NoConv1x1,   // x + D(x)
  NoResidual,  // Conv1x1(D(x))
};

inline const char* to_string(BlockMode m) {
  switch (m) {
    case BlockMode::Full: return "full";
    case BlockMode::NoConv1x1: return "no-1x1";
    case BlockMode::NoResidual: return "no-residual";
  }
  return "?";
}

inline BlockMode parse_block_mode(const std::string& s) {
  for (BlockMode m : {BlockMode::Full, BlockMode::NoConv1x1, BlockMode::NoResidual})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown block mode '" + s + "'");
}

// The generic denoising block: denoising operation wrapped by a 1x1
// convolution and an identity skip connection. With the 1x1 convolution zero
// initialized the block computes the identity.
template <typename T>
TensorT<T> denoise_block(const TensorT<T>& x, const DenoiseBlockSpec& spec,
                         const DenoiseBlockParamsT<T>& params,
                         BlockMode mode = BlockMode::Full,
                         TensorT<T>* op_out = nullptr) {
  if (x.ndim() != 4) throw ConfigError("denoise_block: expects (N,C,H,W)");
  if (x.dim(1) != spec.channels)
    throw ConfigError("denoise_block: input has " + std::to_string(x.dim(1)) +
                      " channels, block expects " +
                      std::to_string(spec.channels));
  params.check(spec);
  TensorT<T> d = denoise_op(x, spec, params);
  if (op_out) *op_out = d;
  switch (mode) {
    case BlockMode::Full:
      return add(x, add_channel_bias(conv2d(d, params.conv_w), params.conv_b));
    case BlockMode::NoConv1x1:
      return add(x, d);
    case BlockMode::NoResidual:
      return add_channel_bias(conv2d(d, params.conv_w), params.conv_b);
  }
  throw ConfigError("denoise_block: unhandled mode");
}

}  // namespace fdn
