#pragma once

#include <fdnet/ops.hpp>

namespace fdn {

enum class Mode { Train, Eval };

// Per-channel affine batch normalization state. gamma/beta are learned;
// running statistics use momentum averaging (r <- m*r + (1-m)*batch).
template <typename T>
struct BatchNormT {
  TensorT<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.9);

  BatchNormT() = default;
  explicit BatchNormT(int channels)
      : gamma({channels}, T(1)),
        beta({channels}, T(0)),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}

  int channels() const { return gamma.dim(0); }
};

using BatchNorm = BatchNormT<float>;

// Training mode normalizes by batch statistics (biased variance) and updates
// the running estimates; eval mode uses the running estimates only.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, BatchNormT<T>& bn, Mode mode) {
  if (x.ndim() != 4) throw ConfigError("batch_norm: expects (N,C,H,W)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != bn.channels())
    throw ConfigError("batch_norm: channel mismatch, input " +
                      std::to_string(c) + " vs state " +
                      std::to_string(bn.channels()));
  if (mode == Mode::Train && n < 2)
    throw ConfigError("batch_norm: training mode needs batch size >= 2");

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t cstride = static_cast<std::size_t>(c) * plane;
  const T m = static_cast<T>(static_cast<std::int64_t>(n) * h * w);

  std::vector<T> mean(static_cast<std::size_t>(c)),
      inv_std(static_cast<std::size_t>(c));
  if (mode == Mode::Train) {
    for (int ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (int i = 0; i < n; ++i) {
        const T* p = x.data().data() + i * cstride + ch * plane;
        for (std::size_t q = 0; q < plane; ++q) s += p[q];
      }
      const T mu = s / m;
      T v = T(0);
      for (int i = 0; i < n; ++i) {
        const T* p = x.data().data() + i * cstride + ch * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          const T d = p[q] - mu;
          v += d * d;
        }
      }
      const T var = v / m;
      mean[static_cast<std::size_t>(ch)] = mu;
      inv_std[static_cast<std::size_t>(ch)] = T(1) / std::sqrt(var + bn.eps);
      bn.running_mean[static_cast<std::size_t>(ch)] =
          bn.momentum * bn.running_mean[static_cast<std::size_t>(ch)] +
          (T(1) - bn.momentum) * mu;
      bn.running_var[static_cast<std::size_t>(ch)] =
          bn.momentum * bn.running_var[static_cast<std::size_t>(ch)] +
          (T(1) - bn.momentum) * var;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] =
          bn.running_mean[static_cast<std::size_t>(ch)];
      inv_std[static_cast<std::size_t>(ch)] =
          T(1) / std::sqrt(bn.running_var[static_cast<std::size_t>(ch)] +
                           bn.eps);
    }
  }

  TensorT<T> y(x.shape());
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  {
    auto xv = x.data();
    auto yv = y.data();
    auto gv = bn.gamma.data();
    auto bv = bn.beta.data();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = i * cstride + ch * plane;
        const T mu = mean[static_cast<std::size_t>(ch)];
        const T is = inv_std[static_cast<std::size_t>(ch)];
        const T g = gv[ch], b = bv[ch];
        for (std::size_t q = 0; q < plane; ++q) {
          const T xh = (xv[off + q] - mu) * is;
          xhat[off + q] = xh;
          yv[off + q] = g * xh + b;
        }
      }
  }

  if (auto* tp = detail::recording_tape<T>(x, bn.gamma, bn.beta)) {
    int xi = detail::watch_if_needed(*tp, x);
    int gi = detail::watch_if_needed(*tp, bn.gamma);
    int bi = detail::watch_if_needed(*tp, bn.beta);
    int yi = tp->watch(y);
    auto gamma_d = bn.gamma.impl();
    bool train = mode == Mode::Train;
    tp->record([tp, xi, gi, bi, yi, gamma_d, xhat = std::move(xhat),
                inv_std = std::move(inv_std), n, c, plane, cstride, m, train] {
      const auto& gy = tp->grad(yi);
      for (int ch = 0; ch < c; ++ch) {
        const T is = inv_std[static_cast<std::size_t>(ch)];
        const T gamma = gamma_d->v[static_cast<std::size_t>(ch)];
        // Channel sums over the batch.
        T sum_g = T(0), sum_gx = T(0);
        for (int i = 0; i < n; ++i) {
          const std::size_t off = i * cstride + ch * plane;
          for (std::size_t q = 0; q < plane; ++q) {
            sum_g += gy[off + q];
            sum_gx += gy[off + q] * xhat[off + q];
          }
        }
        if (gi >= 0) tp->grad(gi)[static_cast<std::size_t>(ch)] += sum_gx;
        if (bi >= 0) tp->grad(bi)[static_cast<std::size_t>(ch)] += sum_g;
        if (xi >= 0) {
          auto& gx = tp->grad(xi);
          if (train) {
            const T k1 = gamma * is / m;
            for (int i = 0; i < n; ++i) {
              const std::size_t off = i * cstride + ch * plane;
              for (std::size_t q = 0; q < plane; ++q)
                gx[off + q] += k1 * (m * gy[off + q] - sum_g -
                                     xhat[off + q] * sum_gx);
            }
          } else {
            const T k = gamma * is;
            for (int i = 0; i < n; ++i) {
              const std::size_t off = i * cstride + ch * plane;
              for (std::size_t q = 0; q < plane; ++q) gx[off + q] += k * gy[off + q];
            }
          }
        }
      }
    });
  }
  return y;
}

// Label-smoothed cross entropy, mean over the batch:
//   loss = -1/N sum_i sum_k q_k log p_k,
//   q = (1 - eps_ls) * onehot(y_i) + eps_ls / K,  p = softmax(logits).
template <typename T>
TensorT<T> cross_entropy_smoothed(const TensorT<T>& logits,
                                  const std::vector<int>& labels,
                                  double eps_ls) {
  if (logits.ndim() != 2)
    throw ConfigError("cross_entropy_smoothed: logits must be (N,K)");
  if (eps_ls < 0.0 || eps_ls >= 1.0)
    throw ConfigError("cross_entropy_smoothed: smoothing must be in [0,1)");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw DataError("cross_entropy_smoothed: " + std::to_string(labels.size()) +
                    " labels for batch " + std::to_string(n));
  for (int i = 0; i < n; ++i)
    if (labels[static_cast<std::size_t>(i)] < 0 ||
        labels[static_cast<std::size_t>(i)] >= k)
      throw DataError("cross_entropy_smoothed: label " +
                      std::to_string(labels[static_cast<std::size_t>(i)]) +
                      " out of range [0," + std::to_string(k) + ") at row " +
                      std::to_string(i));

  auto xv = logits.data();
  std::vector<T> prob(static_cast<std::size_t>(logits.numel()));
  const T off_mass = static_cast<T>(eps_ls / k);
  const T on_mass = static_cast<T>(1.0 - eps_ls) + off_mass;
  T loss_acc = T(0);
  for (int i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * k;
    T mx = xv[base];
    for (int j = 1; j < k; ++j) mx = std::max(mx, xv[base + j]);
    T denom = T(0);
    for (int j = 0; j < k; ++j) denom += std::exp(xv[base + j] - mx);
    const T lse = mx + std::log(denom);
    for (int j = 0; j < k; ++j) {
      const T logp = xv[base + j] - lse;
      prob[base + j] = std::exp(logp);
      const T q = (j == labels[static_cast<std::size_t>(i)]) ? on_mass : off_mass;
      loss_acc -= q * logp;
    }
  }
  TensorT<T> loss = TensorT<T>::scalar(loss_acc / static_cast<T>(n));

  if (auto* tp = detail::recording_tape<T>(logits)) {
    int xi = tp->watch(logits);
    int li = tp->watch(loss);
    tp->record([tp, xi, li, prob = std::move(prob), labels, n, k, on_mass,
                off_mass] {
      const T g = tp->grad(li)[0] / static_cast<T>(n);
      auto& gx = tp->grad(xi);
      for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
          const T q =
              (j == labels[static_cast<std::size_t>(i)]) ? on_mass : off_mass;
          gx[base + j] += g * (prob[base + j] - q);
        }
      }
    });
  }
  return loss;
}

// Fully connected head: x (N,D) * w (D,K) + b (K).
template <typename T>
TensorT<T> dense(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  return add_row_bias(matmul(x, w), b);
}

}  // namespace fdn
