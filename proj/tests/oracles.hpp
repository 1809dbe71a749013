#pragma once

// Brute-force reference implementations of the denoising operations, kept
// independent of the library's execution path. Shared by the unit tests and
// the acceptance suite.

#include <fdnet/denoise.hpp>

namespace fdn::oracle {

// 2x2 max pool by direct loops (stride 2).
inline Tensor pool2x2(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h - 2) / 2 + 1, wo = (w - 2) / 2 + 1;
  Tensor y({n, c, ho, wo});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          float best = -1e30f;
          for (int r = 0; r < 2; ++r)
            for (int s = 0; s < 2; ++s)
              best = std::max(best, x.data()[((i * c + ch) * h + 2 * oh + r) * w +
                                             2 * ow + s]);
          y.data()[((i * c + ch) * ho + oh) * wo + ow] = best;
        }
  return y;
}

// 1x1 convolution (no bias) by direct loops.
inline Tensor embed(const Tensor& x, const Tensor& w) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int d = w.dim(0);
  Tensor y({n, d, h, wd});
  for (int i = 0; i < n; ++i)
    for (int e = 0; e < d; ++e)
      for (int p = 0; p < h * wd; ++p) {
        float s = 0;
        for (int ch = 0; ch < c; ++ch)
          s += w.data()[e * c + ch] * x.data()[(i * c + ch) * h * wd + p];
        y.data()[(i * d + e) * h * wd + p] = s;
      }
  return y;
}

// Direct evaluation of the weighted mean over all spatial locations.
inline Tensor nonlocal_means(const Tensor& x, const DenoiseBlockSpec& spec,
                             const DenoiseBlockParams& params) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor xj = spec.subsample ? pool2x2(x) : x;
  const int hw = h * w;
  const int hwj = xj.dim(2) * xj.dim(3);
  Tensor y(x.shape(), 0.0f);

  Tensor theta, phi;
  if (spec.kind == DenoiseKind::NonlocalGaussian) {
    theta = embed(x, params.theta_w);
    phi = embed(xj, params.phi_w);
  }

  for (int s = 0; s < n; ++s) {
    for (int i = 0; i < hw; ++i) {
      std::vector<double> f(static_cast<std::size_t>(hwj));
      double norm;
      if (spec.kind == DenoiseKind::NonlocalGaussian) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(c));
        double denom = 0.0;
        for (int j = 0; j < hwj; ++j) {
          double dot = 0.0;
          for (int e = 0; e < c; ++e)
            dot += theta.data()[(s * c + e) * hw + i] *
                   phi.data()[(s * c + e) * hwj + j];
          f[static_cast<std::size_t>(j)] = std::exp(dot * inv);
          denom += f[static_cast<std::size_t>(j)];
        }
        norm = denom;
      } else {
        for (int j = 0; j < hwj; ++j) {
          double dot = 0.0;
          for (int e = 0; e < c; ++e)
            dot += x.data()[(s * c + e) * hw + i] *
                   xj.data()[(s * c + e) * hwj + j];
          f[static_cast<std::size_t>(j)] = dot;
        }
        norm = static_cast<double>(hwj);
      }
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int j = 0; j < hwj; ++j)
          acc += f[static_cast<std::size_t>(j)] *
                 xj.data()[(s * c + ch) * hwj + j];
        y.data()[(s * c + ch) * hw + i] = static_cast<float>(acc / norm);
      }
    }
  }
  return y;
}

// Direct evaluation of the windowed weighted mean (edge-replicate padding).
inline Tensor bilateral(const Tensor& x, const DenoiseBlockSpec& spec,
                        const DenoiseBlockParams& params) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int r = spec.neighborhood / 2;
  const int wsize = spec.neighborhood * spec.neighborhood;
  Tensor y(x.shape(), 0.0f);
  Tensor theta, phi;
  if (spec.kind == DenoiseKind::BilateralGaussian) {
    theta = embed(x, params.theta_w);
    phi = embed(x, params.phi_w);
  }
  auto cl = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  for (int s = 0; s < n; ++s)
    for (int ph = 0; ph < h; ++ph)
      for (int pw = 0; pw < w; ++pw) {
        std::vector<int> nb;
        for (int dr = -r; dr <= r; ++dr)
          for (int ds = -r; ds <= r; ++ds)
            nb.push_back(cl(ph + dr, h) * w + cl(pw + ds, w));
        std::vector<double> f(nb.size());
        double norm;
        if (spec.kind == DenoiseKind::BilateralGaussian) {
          const double inv = 1.0 / std::sqrt(static_cast<double>(c));
          double denom = 0.0;
          for (std::size_t k = 0; k < nb.size(); ++k) {
            double dot = 0.0;
            for (int e = 0; e < c; ++e)
              dot += theta.data()[(s * c + e) * h * w + ph * w + pw] *
                     phi.data()[(s * c + e) * h * w + nb[k]];
            f[k] = std::exp(dot * inv);
            denom += f[k];
          }
          norm = denom;
        } else {
          for (std::size_t k = 0; k < nb.size(); ++k) {
            double dot = 0.0;
            for (int e = 0; e < c; ++e)
              dot += x.data()[(s * c + e) * h * w + ph * w + pw] *
                     x.data()[(s * c + e) * h * w + nb[k]];
            f[k] = dot;
          }
          norm = static_cast<double>(wsize);
        }
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t k = 0; k < nb.size(); ++k)
            acc += f[k] * x.data()[(s * c + ch) * h * w + nb[k]];
          y.data()[(s * c + ch) * h * w + ph * w + pw] =
              static_cast<float>(acc / norm);
        }
      }
  return y;
}

// Median by full sort, per window.
inline Tensor median(const Tensor& x, int win = 3) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int r = win / 2;
  Tensor y(x.shape());
  auto cl = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int ph = 0; ph < h; ++ph)
        for (int pw = 0; pw < w; ++pw) {
          std::vector<float> vals;
          for (int dr = -r; dr <= r; ++dr)
            for (int ds = -r; ds <= r; ++ds)
              vals.push_back(
                  x.data()[((i * c + ch) * h + cl(ph + dr, h)) * w +
                           cl(pw + ds, w)]);
          std::sort(vals.begin(), vals.end());
          y.data()[((i * c + ch) * h + ph) * w + pw] = vals[vals.size() / 2];
        }
  return y;
}

}  // namespace fdn::oracle
