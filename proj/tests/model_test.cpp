#include <fdnet/checkpoint.hpp>

#include <filesystem>

#include "test_util.hpp"

using namespace fdn;
using fdn::test::max_abs_diff;
using fdn::test::random_tensor;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.in_channels = 1;
  s.in_size = 16;
  s.widths = {4, 8};
  s.blocks_per_stage = 2;
  s.classes = 3;
  return s;
}

ModelSpec with_insertions(DenoiseKind kind) {
  ModelSpec s = tiny_spec();
  for (int stage : {0, 1}) {
    DenoiseInsertion ins;
    ins.stage = stage;
    ins.spec.kind = kind;
    ins.spec.embed = is_gaussian(kind);
    s.insertions.push_back(ins);
  }
  return s;
}

std::filesystem::path tmp_dir() {
  auto p = std::filesystem::temp_directory_path() / "fdnet-model-test";
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("same seed produces bit-identical parameters") {
  Model a(tiny_spec(), 7);
  Model b(tiny_spec(), 7);
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].first == b.params()[i].first);
    CHECK(max_abs_diff(a.params()[i].second, b.params()[i].second) == 0.0);
  }
  Model c(tiny_spec(), 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (max_abs_diff(a.params()[i].second, c.params()[i].second) > 0)
      any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("parameter count parity across embedding-free denoise kinds") {
  const auto base = Model(tiny_spec(), 1).param_count();
  const auto null_count = Model(with_insertions(DenoiseKind::Null), 1).param_count();
  const auto mean_count = Model(with_insertions(DenoiseKind::Mean3x3), 1).param_count();
  const auto median_count =
      Model(with_insertions(DenoiseKind::Median3x3), 1).param_count();
  const auto dot_count =
      Model(with_insertions(DenoiseKind::NonlocalDot), 1).param_count();
  CHECK(null_count > base);
  CHECK(null_count == mean_count);
  CHECK(null_count == median_count);
  CHECK(null_count == dot_count);
  // The Gaussian version adds its embeddings on top.
  const auto gauss_count =
      Model(with_insertions(DenoiseKind::NonlocalGaussian), 1).param_count();
  CHECK(gauss_count == null_count + 2 * (4 * 4 + 8 * 8));

  // Accounting matches the per-tensor sum by construction; cross-check one.
  Model m(with_insertions(DenoiseKind::Null), 1);
  std::int64_t total = 0;
  for (auto& [n, t] : m.params()) total += t.numel();
  CHECK(total == m.param_count());
}

TEST_CASE("forward produces finite logits of the right shape") {
  Rng rng(3);
  Model m(tiny_spec(), 5);
  Tensor x = random_tensor({4, 1, 16, 16}, rng, 0.0, 255.0);
  Tensor logits = m.forward(x, Mode::Eval);
  CHECK(logits.shape() == Shape{4, 3});
  CHECK(all_finite(logits));
}

TEST_CASE("identical rows for identical images in evaluation mode") {
  Rng rng(5);
  Model m(tiny_spec(), 5);
  Tensor one = random_tensor({1, 1, 16, 16}, rng, 0.0, 255.0);
  Tensor two({2, 1, 16, 16});
  std::copy_n(one.data().data(), 256, two.data().data());
  std::copy_n(one.data().data(), 256, two.data().data() + 256);
  Tensor logits = m.forward(two, Mode::Eval);
  for (int k = 0; k < 3; ++k)
    CHECK(logits.data()[k] == logits.data()[3 + k]);
}

TEST_CASE("input shape mismatch raises a data error") {
  Model m(tiny_spec(), 5);
  Tensor bad({1, 1, 8, 8}, 0.0f);
  CHECK_THROWS_AS(m.forward(bad, Mode::Eval), DataError);
}

TEST_CASE("captures preserve shapes around the denoising op") {
  Rng rng(7);
  Model m(with_insertions(DenoiseKind::Mean3x3), 5);
  Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 255.0);
  CaptureSink caps;
  m.forward(x, Mode::Eval, &caps);
  REQUIRE(caps.size() == 2);
  for (const auto& c : caps) CHECK(c.before.shape() == c.after.shape());
  CHECK(caps[0].site == "s0.end");
  CHECK(caps[1].site == "s1.end");
}

TEST_CASE("zero-initialized denoise blocks match the same-seed baseline") {
  Rng rng(9);
  Model base(tiny_spec(), 11);
  Model denoise(with_insertions(DenoiseKind::NonlocalGaussian), 11);
  Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 255.0);
  Tensor a = base.forward(x, Mode::Eval);
  Tensor b = denoise.forward(x, Mode::Eval);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("after-every-residual-block mode builds and preserves shapes") {
  ModelSpec s = tiny_spec();
  s.denoise_after_every_block = true;
  s.every_block_spec.kind = DenoiseKind::NonlocalGaussian;
  s.every_block_spec.embed = true;
  s.every_block_spec.subsample = true;
  Model m(s, 2);
  Rng rng(13);
  Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 255.0);
  CaptureSink caps;
  Tensor logits = m.forward(x, Mode::Eval, &caps);
  CHECK(logits.shape() == Shape{2, 3});
  CHECK(caps.size() == 4);  // 2 stages x 2 blocks
  for (const auto& c : caps) CHECK(c.before.shape() == c.after.shape());
}

TEST_CASE("model spec validation rejects bad inputs") {
  ModelSpec s = tiny_spec();
  s.widths.clear();
  CHECK_THROWS_AS(Model(s, 1), ConfigError);
  s = tiny_spec();
  s.classes = 1;
  CHECK_THROWS_AS(Model(s, 1), ConfigError);
  s = tiny_spec();
  DenoiseInsertion ins;
  ins.stage = 5;
  s.insertions.push_back(ins);
  CHECK_THROWS_AS(Model(s, 1), ConfigError);
}

TEST_CASE("model spec JSON round trips") {
  ModelSpec s = with_insertions(DenoiseKind::BilateralGaussian);
  s.block_mode = BlockMode::NoConv1x1;
  ModelSpec back = ModelSpec::from_json(s.to_json());
  CHECK(back.canonical_json() == s.canonical_json());
  CHECK(back.hash() == s.hash());
}

TEST_CASE("checkpoint round trip preserves forward outputs bit-exactly") {
  Rng rng(17);
  Model m(with_insertions(DenoiseKind::NonlocalGaussian), 23);
  // Perturb some state so the checkpoint is not just the fresh init.
  for (auto& [name, t] : m.params())
    for (auto& v : t.data()) v += 0.01f * static_cast<float>(rng.uniform(-1, 1));
  m.bn_states()[0].second->running_mean[0] = 0.37f;

  Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 255.0);
  Tensor before = m.forward(x, Mode::Eval);

  auto path = tmp_dir() / "roundtrip.fshd";
  CheckpointMeta meta;
  meta.epoch = 4;
  meta.seed = 23;
  meta.train_epsilon = 16.0;
  OptState opt;
  opt["head.fc.w"] = std::vector<float>(static_cast<std::size_t>(3 * 8), 0.5f);
  save_checkpoint(m, path, meta, opt);

  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta.epoch == 4);
  CHECK(loaded.meta.seed == 23);
  CHECK(loaded.meta.train_epsilon == 16.0);
  REQUIRE(loaded.opt.count("head.fc.w") == 1);
  CHECK(loaded.opt["head.fc.w"][0] == 0.5f);
  Tensor after = loaded.model->forward(x, Mode::Eval);
  CHECK(max_abs_diff(before, after) == 0.0);
  CHECK(loaded.model->fingerprint() == m.fingerprint());
}

TEST_CASE("checkpoint spec mismatch and corruption raise io errors") {
  Model m(tiny_spec(), 1);
  auto path = tmp_dir() / "mismatch.fshd";
  save_checkpoint(m, path);

  ModelSpec other = tiny_spec();
  other.classes = 4;
  CHECK_THROWS_AS(load_checkpoint(path, &other), IoError);
  ModelSpec same = tiny_spec();
  CHECK_NOTHROW(load_checkpoint(path, &same));

  // Corrupt the magic.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  CHECK_THROWS_AS(load_checkpoint(tmp_dir() / "missing.fshd"), IoError);
}
