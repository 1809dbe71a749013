#include <fdnet/denoise.hpp>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace fdn;
using fdn::test::max_abs_diff;
using fdn::test::max_rel_diff;
using fdn::test::random_distinct_tensor;
using fdn::test::random_tensor;

namespace {

DenoiseBlockParams random_params(const DenoiseBlockSpec& spec, Rng& rng) {
  auto p = DenoiseBlockParams::zeros(spec);
  if (spec.embed) {
    for (auto& v : p.theta_w.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : p.phi_w.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  }
  return p;
}

Tensor nonlocal_oracle(const Tensor& x, const DenoiseBlockSpec& spec,
                       const DenoiseBlockParams& params) {
  return fdn::oracle::nonlocal_means(x, spec, params);
}

Tensor bilateral_oracle(const Tensor& x, const DenoiseBlockSpec& spec,
                        const DenoiseBlockParams& params) {
  return fdn::oracle::bilateral(x, spec, params);
}

}  // namespace

TEST_CASE("non-local Gaussian with constant input returns the input") {
  const int c = 3;
  auto spec = DenoiseBlockSpec::make(DenoiseKind::NonlocalGaussian, c);
  auto params = DenoiseBlockParams::zeros(spec);
  for (int k = 0; k < c; ++k) params.theta_w.data()[k * c + k] = 1.0f;
  for (int k = 0; k < c; ++k) params.phi_w.data()[k * c + k] = 1.0f;

  Tensor x({1, c, 4, 4});
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < 16; ++p)
      x.data()[ch * 16 + p] = 0.5f + 0.25f * static_cast<float>(ch);
  Tensor y = nonlocal_means(x, spec, params);
  CHECK(max_abs_diff(y, x) < 1e-5);
}

TEST_CASE("non-local dot product on a single pixel") {
  auto spec = DenoiseBlockSpec::make(DenoiseKind::NonlocalDot, 2);
  auto params = DenoiseBlockParams::zeros(spec);
  Tensor x({1, 2, 1, 1}, {1.0f, 2.0f});
  Tensor y = nonlocal_means(x, spec, params);
  CHECK(y.data()[0] == 5.0f);
  CHECK(y.data()[1] == 10.0f);
}

TEST_CASE("non-local variants match the brute-force oracle") {
  Rng rng(101);
  Tensor x = random_tensor({1, 4, 5, 5}, rng);
  for (auto kind : {DenoiseKind::NonlocalGaussian, DenoiseKind::NonlocalDot}) {
    for (bool sub : {false, true}) {
      auto spec = DenoiseBlockSpec::make(kind, 4, 3, sub);
      auto params = random_params(spec, rng);
      Tensor got = nonlocal_means(x, spec, params);
      Tensor want = nonlocal_oracle(x, spec, params);
      INFO(to_string(kind) << " subsample=" << sub);
      CHECK(max_rel_diff(got, want) < 1e-5);
      CHECK(got.shape() == x.shape());
    }
  }
}

TEST_CASE("non-local Gaussian softmax rows are normalized") {
  // With channel 0 pinned to one, output channel 0 equals the weight row sum.
  Rng rng(103);
  Tensor x = random_tensor({1, 3, 5, 5}, rng);
  for (int p = 0; p < 25; ++p) x.data()[p] = 1.0f;
  auto spec = DenoiseBlockSpec::make(DenoiseKind::NonlocalGaussian, 3);
  auto params = random_params(spec, rng);
  Tensor y = nonlocal_means(x, spec, params);
  for (int p = 0; p < 25; ++p)
    CHECK(std::abs(y.data()[p] - 1.0f) < 1e-5);
}

TEST_CASE("dot-product non-local means is homogeneous of degree 3") {
  Rng rng(107);
  Tensor x = random_tensor({1, 4, 5, 5}, rng);
  for (bool sub : {false, true}) {
    auto spec = DenoiseBlockSpec::make(DenoiseKind::NonlocalDot, 4, 3, sub);
    auto params = DenoiseBlockParams::zeros(spec);
    Tensor y1 = nonlocal_means(x, spec, params);
    Tensor xs = x.clone();
    for (auto& v : xs.data()) v *= 2.0f;
    Tensor y2 = nonlocal_means(xs, spec, params);
    for (std::size_t i = 0; i < y1.data().size(); ++i) {
      double want = 8.0 * static_cast<double>(y1.data()[i]);
      double denom = std::max(1.0, std::abs(want));
      CHECK(std::abs(y2.data()[i] - want) / denom < 1e-5);
    }
  }
}

TEST_CASE("bilateral filter with constant input returns the input") {
  auto spec = DenoiseBlockSpec::make(DenoiseKind::BilateralGaussian, 2);
  Rng rng(109);
  auto params = random_params(spec, rng);
  Tensor x({1, 2, 4, 4});
  for (int ch = 0; ch < 2; ++ch)
    for (int p = 0; p < 16; ++p) x.data()[ch * 16 + p] = 1.5f - ch;
  Tensor y = bilateral_filter(x, spec, params);
  CHECK(max_abs_diff(y, x) < 1e-5);
}

TEST_CASE("bilateral 3x3 center pixel is the softmax-weighted window mean") {
  auto spec = DenoiseBlockSpec::make(DenoiseKind::BilateralGaussian, 1);
  auto params = DenoiseBlockParams::zeros(spec);
  params.theta_w.data()[0] = 1.0f;
  params.phi_w.data()[0] = 1.0f;
  Tensor x({1, 1, 3, 3}, {0.1f, 0.5f, -0.2f, 0.8f, 0.0f, 0.3f, -0.4f, 0.6f, 0.2f});
  Tensor y = bilateral_filter(x, spec, params);
  // Direct softmax over all 9 values against the center.
  double denom = 0.0, acc = 0.0;
  for (int j = 0; j < 9; ++j) {
    double f = std::exp(static_cast<double>(x.data()[4]) * x.data()[j]);
    denom += f;
    acc += f * x.data()[j];
  }
  CHECK(std::abs(y.data()[4] - acc / denom) < 1e-6);
}

TEST_CASE("bilateral variants match the window-loop oracle") {
  Rng rng(113);
  Tensor x = random_tensor({1, 4, 5, 5}, rng);
  for (auto kind : {DenoiseKind::BilateralGaussian, DenoiseKind::BilateralDot}) {
    auto spec = DenoiseBlockSpec::make(kind, 4);
    auto params = random_params(spec, rng);
    Tensor got = bilateral_filter(x, spec, params);
    Tensor want = bilateral_oracle(x, spec, params);
    INFO(to_string(kind));
    CHECK(max_rel_diff(got, want) < 1e-5);
  }
}

TEST_CASE("Gaussian outputs stay inside the contributing value range") {
  Rng rng(127);
  Tensor x = random_tensor({1, 3, 6, 6}, rng);
  // Non-local: bound is the global per-channel min/max.
  {
    auto spec = DenoiseBlockSpec::make(DenoiseKind::NonlocalGaussian, 3);
    auto params = random_params(spec, rng);
    Tensor y = nonlocal_means(x, spec, params);
    for (int ch = 0; ch < 3; ++ch) {
      float lo = 1e30f, hi = -1e30f;
      for (int p = 0; p < 36; ++p) {
        lo = std::min(lo, x.data()[ch * 36 + p]);
        hi = std::max(hi, x.data()[ch * 36 + p]);
      }
      for (int p = 0; p < 36; ++p) {
        CHECK(y.data()[ch * 36 + p] >= lo - 1e-5f);
        CHECK(y.data()[ch * 36 + p] <= hi + 1e-5f);
      }
    }
  }
  // Bilateral and mean: bound is the window min/max; median is an element.
  auto cl = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  {
    auto spec = DenoiseBlockSpec::make(DenoiseKind::BilateralGaussian, 3);
    auto params = random_params(spec, rng);
    Tensor yb = bilateral_filter(x, spec, params);
    Tensor ym = mean_filter(x);
    Tensor yd = median_filter(x);
    for (int ch = 0; ch < 3; ++ch)
      for (int ph = 0; ph < 6; ++ph)
        for (int pw = 0; pw < 6; ++pw) {
          float lo = 1e30f, hi = -1e30f;
          bool member = false;
          float med = yd.data()[(ch * 6 + ph) * 6 + pw];
          for (int dr = -1; dr <= 1; ++dr)
            for (int ds = -1; ds <= 1; ++ds) {
              float v = x.data()[(ch * 6 + cl(ph + dr, 6)) * 6 + cl(pw + ds, 6)];
              lo = std::min(lo, v);
              hi = std::max(hi, v);
              if (v == med) member = true;
            }
          float vb = yb.data()[(ch * 6 + ph) * 6 + pw];
          float vm = ym.data()[(ch * 6 + ph) * 6 + pw];
          CHECK(vb >= lo - 1e-5f);
          CHECK(vb <= hi + 1e-5f);
          CHECK(vm >= lo - 1e-5f);
          CHECK(vm <= hi + 1e-5f);
          CHECK(member);
        }
  }
}

TEST_CASE("mean filter basics") {
  Tensor c({1, 1, 4, 4}, 3.25f);
  CHECK(max_abs_diff(mean_filter(c), c) < 1e-6);

  Tensor x({1, 1, 3, 3},
           {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f, 7.0f, 8.0f, 9.0f});
  Tensor y = mean_filter(x);
  CHECK(y.data()[4] == Catch::Approx(5.0));
}

TEST_CASE("mean filter variance reduction on i.i.d. noise") {
  Rng rng(131);
  const int side = 128;  // > 10^4 interior pixels
  Tensor x({1, 1, side, side});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const double sigma2 = 1.0 / 3.0;
  Tensor y = mean_filter(x);
  double s = 0, s2 = 0;
  int cnt = 0;
  for (int i = 1; i < side - 1; ++i)
    for (int j = 1; j < side - 1; ++j) {
      double v = y.data()[i * side + j];
      s += v;
      s2 += v * v;
      ++cnt;
    }
  double var = s2 / cnt - (s / cnt) * (s / cnt);
  CHECK(var > sigma2 / 9.0 * 0.8);
  CHECK(var < sigma2 / 9.0 * 1.2);
}

TEST_CASE("median filter suppresses outliers and matches sort oracle") {
  Tensor x({1, 1, 3, 3},
           {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f, 7.0f, 8.0f, 100.0f});
  Tensor y = median_filter(x);
  CHECK(y.data()[4] == 5.0f);

  Rng rng(137);
  Tensor r = random_distinct_tensor({1, 2, 6, 7}, rng);
  Tensor got = median_filter(r);
  auto cl = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  for (int ch = 0; ch < 2; ++ch)
    for (int ph = 0; ph < 6; ++ph)
      for (int pw = 0; pw < 7; ++pw) {
        std::vector<float> win;
        for (int dr = -1; dr <= 1; ++dr)
          for (int ds = -1; ds <= 1; ++ds)
            win.push_back(r.data()[(ch * 6 + cl(ph + dr, 6)) * 7 + cl(pw + ds, 7)]);
        std::sort(win.begin(), win.end());
        CHECK(got.data()[(ch * 6 + ph) * 7 + pw] == win[4]);
      }
}

TEST_CASE("median filter constant input routes gradient to one element") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x({1, 1, 3, 3}, 2.0f);
  x.set_requires_grad(true);
  Tensor y = median_filter(x);
  CHECK(max_abs_diff(y, x) == 0.0);
  tape.backward(sum(y));
  auto g = tape.grad_of(x);
  // Every output window is constant; each routes its full gradient to the
  // first scan-order element of its window. Total mass is preserved.
  float total = 0;
  for (float v : g) total += v;
  CHECK(total == 9.0f);
  CHECK(g[0] > 0.0f);  // top-left window starts at the corner
}

TEST_CASE("denoise block is the identity at zero initialization") {
  Rng rng(139);
  Tensor x = random_tensor({2, 4, 5, 5}, rng);
  for (auto kind :
       {DenoiseKind::NonlocalGaussian, DenoiseKind::NonlocalDot,
        DenoiseKind::BilateralGaussian, DenoiseKind::BilateralDot,
        DenoiseKind::Mean3x3, DenoiseKind::Median3x3, DenoiseKind::Null}) {
    auto spec = DenoiseBlockSpec::make(kind, 4);
    auto params = random_params(spec, rng);  // conv stays zero
    Tensor y = denoise_block(x, spec, params);
    INFO(to_string(kind));
    CHECK(max_abs_diff(y, x) == 0.0);
  }
}

TEST_CASE("null block computes x + W*x") {
  auto spec = DenoiseBlockSpec::make(DenoiseKind::Null, 2);
  auto params = DenoiseBlockParams::zeros(spec);
  // W = [[2, -1], [0.5, 3]]
  params.conv_w.data()[0] = 2.0f;
  params.conv_w.data()[1] = -1.0f;
  params.conv_w.data()[2] = 0.5f;
  params.conv_w.data()[3] = 3.0f;
  Tensor x({1, 2, 1, 1}, {4.0f, 10.0f});
  Tensor y = denoise_block(x, spec, params);
  CHECK(y.data()[0] == 4.0f + (2.0f * 4.0f - 1.0f * 10.0f));
  CHECK(y.data()[1] == 10.0f + (0.5f * 4.0f + 3.0f * 10.0f));
}

TEST_CASE("block ablation modes are constructible and shape preserving") {
  Rng rng(149);
  Tensor x = random_tensor({1, 3, 4, 4}, rng);
  auto spec = DenoiseBlockSpec::make(DenoiseKind::Mean3x3, 3);
  auto params = DenoiseBlockParams::zeros(spec);
  for (auto& v : params.conv_w.data()) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor d = denoise_op(x, spec, params);

  Tensor no_conv = denoise_block(x, spec, params, BlockMode::NoConv1x1);
  CHECK(no_conv.shape() == x.shape());
  CHECK(max_abs_diff(no_conv, add(x, d)) == 0.0);

  Tensor no_res = denoise_block(x, spec, params, BlockMode::NoResidual);
  CHECK(no_res.shape() == x.shape());
  CHECK(max_abs_diff(no_res,
                     add_channel_bias(conv2d(d, params.conv_w), params.conv_b)) ==
        0.0);
}

TEST_CASE("zero-initialized block has exactly all-ones input gradient") {
  Rng rng(151);
  Tensor x = random_tensor({1, 3, 4, 4}, rng);
  for (auto kind : {DenoiseKind::NonlocalGaussian, DenoiseKind::Mean3x3,
                    DenoiseKind::Null}) {
    auto spec = DenoiseBlockSpec::make(kind, 3);
    auto params = random_params(spec, rng);
    Tape tape;
    TapeScope scope(tape);
    Tensor xv = x.clone();
    xv.set_requires_grad(true);
    tape.backward(sum(denoise_block(xv, spec, params)));
    for (float g : tape.grad_of(xv)) CHECK(g == 1.0f);
  }
}

TEST_CASE("denoise spec invariants are enforced") {
  CHECK_THROWS_AS(
      [] {
        DenoiseBlockSpec s;
        s.kind = DenoiseKind::NonlocalGaussian;
        s.channels = 4;
        s.embed = false;  // Gaussian requires embeddings
        s.validate();
      }(),
      ConfigError);
  CHECK_THROWS_AS(
      [] {
        DenoiseBlockSpec s;
        s.kind = DenoiseKind::NonlocalDot;
        s.channels = 4;
        s.embed = true;  // dot product takes none
        s.validate();
      }(),
      ConfigError);
  CHECK_THROWS_AS(DenoiseBlockSpec::make(DenoiseKind::Mean3x3, 4, 3, true),
                  ConfigError);
  // Window larger than the feature map.
  auto spec = DenoiseBlockSpec::make(DenoiseKind::BilateralDot, 2, 5);
  Tensor small({1, 2, 3, 3}, 1.0f);
  CHECK_THROWS_AS(bilateral_filter(small, spec, DenoiseBlockParams::zeros(spec)),
                  ConfigError);
}

TEST_CASE("subsampled non-local preserves output shape") {
  Rng rng(157);
  Tensor x = random_tensor({2, 4, 6, 6}, rng);
  for (auto kind : {DenoiseKind::NonlocalGaussian, DenoiseKind::NonlocalDot}) {
    auto spec = DenoiseBlockSpec::make(kind, 4, 3, true);
    auto params = random_params(spec, rng);
    CHECK(nonlocal_means(x, spec, params).shape() == x.shape());
  }
}
