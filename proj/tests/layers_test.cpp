#include <fdnet/layers.hpp>

#include "test_util.hpp"

using namespace fdn;
using fdn::test::max_abs_diff;
using fdn::test::random_tensor;

TEST_CASE("batch_norm training normalizes batch statistics") {
  Rng rng(41);
  Tensor x = random_tensor({8, 3, 4, 4}, rng, -2.0, 5.0);
  BatchNorm bn(3);
  Tensor y = batch_norm(x, bn, Mode::Train);
  const int m = 8 * 4 * 4;
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 8; ++n)
      for (int p = 0; p < 16; ++p) {
        double v = y.data()[(n * 3 + c) * 16 + p];
        s += v;
        s2 += v * v;
      }
    double mean = s / m;
    double var = s2 / m - mean * mean;
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
  // Running statistics moved toward the batch statistics.
  CHECK(bn.running_mean[0] != 0.0f);
  CHECK(bn.running_var[0] != 1.0f);
}

TEST_CASE("batch_norm eval with unit running stats is an affine map") {
  Rng rng(43);
  Tensor x = random_tensor({2, 2, 3, 3}, rng);
  BatchNorm bn(2);
  bn.gamma.data()[0] = 1.5f;
  bn.gamma.data()[1] = 0.5f;
  bn.beta.data()[0] = -1.0f;
  bn.beta.data()[1] = 2.0f;
  Tensor y = batch_norm(x, bn, Mode::Eval);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int p = 0; p < 9; ++p) {
        float g = bn.gamma.data()[c], b = bn.beta.data()[c];
        float want = g * x.data()[(n * 2 + c) * 9 + p] /
                         std::sqrt(1.0f + bn.eps) +
                     b;
        CHECK(y.data()[(n * 2 + c) * 9 + p] == Catch::Approx(want).margin(1e-5));
      }
}

TEST_CASE("batch_norm rejects batch of one in training mode") {
  Tensor x({1, 2, 3, 3}, 1.0f);
  BatchNorm bn(2);
  CHECK_THROWS_AS(batch_norm(x, bn, Mode::Train), ConfigError);
  CHECK_NOTHROW(batch_norm(x, bn, Mode::Eval));
}

TEST_CASE("cross entropy of a uniform prediction is ln K") {
  Tensor logits({1, 2}, {0.0f, 0.0f});
  for (double eps : {0.0, 0.1, 0.5}) {
    for (int label : {0, 1}) {
      Tensor loss = cross_entropy_smoothed(logits, {label}, eps);
      CHECK(loss.item() == Catch::Approx(std::log(2.0)).epsilon(1e-6));
    }
  }
}

TEST_CASE("cross entropy vanishes for a confident correct prediction") {
  Tensor logits({1, 3}, {50.0f, 0.0f, 0.0f});
  Tensor loss = cross_entropy_smoothed(logits, {0}, 0.0);
  CHECK(loss.item() < 1e-6);
}

TEST_CASE("cross entropy matches the direct formula") {
  Rng rng(47);
  const int n = 3, k = 10;
  Tensor logits = random_tensor({n, k}, rng, -3.0, 3.0);
  std::vector<int> labels = {7, 0, 3};
  const double eps = 0.1;
  Tensor loss = cross_entropy_smoothed(logits, labels, eps);

  double want = 0;
  for (int i = 0; i < n; ++i) {
    double denom = 0;
    for (int j = 0; j < k; ++j)
      denom += std::exp(static_cast<double>(logits.data()[i * k + j]));
    for (int j = 0; j < k; ++j) {
      double p = std::exp(static_cast<double>(logits.data()[i * k + j])) / denom;
      double q = eps / k + (j == labels[i] ? 1.0 - eps : 0.0);
      want -= q * std::log(p);
    }
  }
  want /= n;
  CHECK(loss.item() == Catch::Approx(want).epsilon(1e-6));
}

TEST_CASE("zero smoothing equals plain cross entropy") {
  Rng rng(53);
  Tensor logits = random_tensor({4, 5}, rng, -2.0, 2.0);
  std::vector<int> labels = {1, 4, 0, 2};
  Tensor a = cross_entropy_smoothed(logits, labels, 0.0);
  double want = 0;
  for (int i = 0; i < 4; ++i) {
    double denom = 0;
    for (int j = 0; j < 5; ++j)
      denom += std::exp(static_cast<double>(logits.data()[i * 5 + j]));
    want -= std::log(
        std::exp(static_cast<double>(logits.data()[i * 5 + labels[i]])) / denom);
  }
  CHECK(a.item() == Catch::Approx(want / 4).epsilon(1e-6));
}

TEST_CASE("cross entropy is invariant to constant logit shifts") {
  Rng rng(59);
  Tensor logits = random_tensor({2, 6}, rng, -2.0, 2.0);
  std::vector<int> labels = {5, 2};
  Tensor shifted = logits.clone();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 6; ++j) shifted.data()[i * 6 + j] += (i ? -7.5f : 3.25f);
  float a = cross_entropy_smoothed(logits, labels, 0.1).item();
  float b = cross_entropy_smoothed(shifted, labels, 0.1).item();
  CHECK(std::abs(a - b) < 1e-6);
}

TEST_CASE("cross entropy rejects bad labels and smoothing") {
  Tensor logits({2, 3}, 0.0f);
  CHECK_THROWS_AS(cross_entropy_smoothed(logits, {0, 3}, 0.1), DataError);
  CHECK_THROWS_AS(cross_entropy_smoothed(logits, {0, -1}, 0.1), DataError);
  CHECK_THROWS_AS(cross_entropy_smoothed(logits, {0, 1}, 1.0), ConfigError);
}
