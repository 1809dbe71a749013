#include <fdnet/cli.hpp>

#include <catch2/catch_amalgamated.hpp>

using namespace fdn;
namespace fs = std::filesystem;

namespace {

fs::path tmp_root() {
  auto p = fs::temp_directory_path() / "fdnet-cli-test";
  fs::create_directories(p);
  return p;
}

fs::path write_config(const std::string& name, const std::string& text) {
  auto p = tmp_root() / name;
  std::ofstream out(p, std::ios::trunc);
  out << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Micro setup shared by the command tests: 8x8 single-channel shapes,
// one-stage model.
std::string micro_config(const std::string& extra) {
  return R"([run]
seed = 3
out_dir = ")" + (tmp_root() / "runs").string() + R"("

[dataset]
format = "synthetic"
kind = "shapes"
classes = 3
train_count = 24
eval_count = 12
height = 8
width = 8
noise = 8.0
distractors = 0
seed = 5
)" + extra;
}

const std::string kMicroModelTrain = R"(
[model]
widths = [4]
blocks_per_stage = 1

[train]
epochs = 1
batch_size = 8
lr = 0.05
track_clean_val = false

[attack]
epsilon = 4
alpha = 2
iters = 1
)";

fs::path train_micro_checkpoint() {
  static fs::path ckpt;
  if (!ckpt.empty()) return ckpt;
  auto cfgp = write_config("train.toml", micro_config(kMicroModelTrain));
  REQUIRE(fdn::cli::run({"train", "--config", cfgp.string()}) == 0);
  // Find the run directory the command created.
  for (const auto& e :
       fs::directory_iterator(tmp_root() / "runs"))
    if (e.path().filename().string().rfind("train-", 0) == 0)
      ckpt = e.path() / "checkpoint.fshd";
  REQUIRE(fs::exists(ckpt));
  return ckpt;
}

}  // namespace

TEST_CASE("malformed configs exit with code 2") {
  auto p = write_config("bad.toml", "[run\nseed = 1\n");
  CHECK(fdn::cli::run({"train", "--config", p.string()}) == 2);
  auto unknown = write_config("unknown.toml",
                              micro_config(kMicroModelTrain) +
                                  "\n[train]\nbogus_key = 1\n");
  CHECK(fdn::cli::run({"train", "--config", unknown.string()}) == 2);
  CHECK(fdn::cli::run({"train"}) == 2);  // missing --config
}

TEST_CASE("train writes a self-contained run directory") {
  auto ckpt = train_micro_checkpoint();
  auto dir = ckpt.parent_path();
  CHECK(fs::exists(dir / "config.toml"));
  CHECK(fs::exists(dir / "resolved.json"));
  CHECK(fs::exists(dir / "metrics.jsonl"));
  CHECK(fs::exists(dir / "manifest.json"));

  // Metrics are line-delimited JSON with the advertised fields.
  std::istringstream lines(slurp(dir / "metrics.jsonl"));
  std::string line;
  REQUIRE(std::getline(lines, line));
  json m = json::parse(line);
  for (const char* key : {"epoch", "lr", "loss", "adv_acc", "clean_acc",
                          "wall_time"})
    CHECK(m.contains(key));

  // Manifest lists the checkpoint with a hash.
  json manifest = json::parse(slurp(dir / "manifest.json"));
  bool found = false;
  for (const auto& a : manifest.at("artifacts"))
    if (a.at("path") == "checkpoint.fshd") {
      found = true;
      CHECK(a.at("fnv1a64").is_string());
    }
  CHECK(found);
}

TEST_CASE("re-running train with the same config is byte-identical") {
  auto ckpt = train_micro_checkpoint();
  const std::string before = slurp(ckpt);
  auto cfgp = write_config("train.toml", micro_config(kMicroModelTrain));
  REQUIRE(fdn::cli::run({"train", "--config", cfgp.string()}) == 0);
  CHECK(slurp(ckpt) == before);
}

TEST_CASE("divergent training exits with code 3") {
  auto cfgp = write_config(
      "diverge.toml",
      micro_config(R"(
[model]
widths = [4]
blocks_per_stage = 1

[train]
epochs = 2
batch_size = 8
lr = 1e12
track_clean_val = false

[attack]
epsilon = 4
alpha = 2
iters = 1
)"));
  CHECK(fdn::cli::run({"train", "--config", cfgp.string()}) == 3);
}

TEST_CASE("attack with epsilon zero reproduces the input bytes") {
  auto ckpt = train_micro_checkpoint();
  auto cfgp = write_config("attack0.toml", micro_config(R"(
[input]
checkpoint = ")" + ckpt.string() + R"("

[attack]
epsilon = 0
alpha = 1
iters = 0
)"));
  REQUIRE(fdn::cli::run({"attack", "--config", cfgp.string()}) == 0);
  fs::path dir;
  for (const auto& e : fs::directory_iterator(tmp_root() / "runs"))
    if (e.path().filename().string().rfind("attack-", 0) == 0 &&
        fs::exists(e.path() / "adv_images.idx")) {
      json resolved = json::parse(slurp(e.path() / "resolved.json"));
      if (resolved.at("attack").at("epsilon").get<double>() == 0.0)
        dir = e.path();
    }
  REQUIRE(!dir.empty());

  // The archived adversarial images must byte-match a direct dump of the
  // clean evaluation images.
  SyntheticSpec s;
  s.kind = SyntheticSpec::Kind::Shapes;
  s.classes = 3;
  s.count = 12;
  s.height = 8;
  s.width = 8;
  s.noise = 8.0;
  s.distractors = 0;
  s.seed = splitmix64(5 ^ fnv1a64("eval-split"));
  Dataset eval = make_synthetic(s);
  save_idx_images(eval.images, tmp_root() / "clean_dump.idx");
  CHECK(slurp(dir / "adv_images.idx") == slurp(tmp_root() / "clean_dump.idx"));

  // Delta archive reconstructs the clean images exactly.
  auto arch = load_delta_archive(dir / "deltas.fadl");
  Tensor rec = reconstruct_adversarial(arch, eval.images);
  for (std::size_t i = 0; i < rec.data().size(); ++i)
    CHECK(rec.data()[i] == eval.images.data()[i]);
}

TEST_CASE("attack archive deltas stay within the integer budget") {
  auto ckpt = train_micro_checkpoint();
  auto cfgp = write_config("attack4.toml", micro_config(R"(
[input]
checkpoint = ")" + ckpt.string() + R"("

[attack]
epsilon = 4
alpha = 2
iters = 2
)"));
  REQUIRE(fdn::cli::run({"attack", "--config", cfgp.string()}) == 0);
  fs::path dir;
  for (const auto& e : fs::directory_iterator(tmp_root() / "runs"))
    if (e.path().filename().string().rfind("attack-", 0) == 0 &&
        fs::exists(e.path() / "deltas.fadl")) {
      json resolved = json::parse(slurp(e.path() / "resolved.json"));
      if (resolved.at("attack").at("epsilon").get<double>() == 4.0)
        dir = e.path();
    }
  REQUIRE(!dir.empty());
  auto arch = load_delta_archive(dir / "deltas.fadl");
  bool moved = false;
  for (auto d : arch.deltas) {
    CHECK(std::abs(static_cast<int>(d)) <= 4);
    if (d != 0) moved = true;
  }
  CHECK(moved);
}

TEST_CASE("eval-whitebox reports are byte-identical across reruns") {
  auto ckpt = train_micro_checkpoint();
  auto cfgp = write_config("wb.toml", micro_config(R"(
[input]
checkpoint = ")" + ckpt.string() + R"("

[eval]
epsilon = 4
iters = [1, 2]
batch_size = 8
)"));
  REQUIRE(fdn::cli::run({"eval-whitebox", "--config", cfgp.string()}) == 0);
  fs::path report;
  for (const auto& e : fs::directory_iterator(tmp_root() / "runs"))
    if (e.path().filename().string().rfind("eval-whitebox-", 0) == 0)
      report = e.path() / "whitebox_report.json";
  REQUIRE(fs::exists(report));
  const std::string first = slurp(report);
  REQUIRE(fdn::cli::run({"eval-whitebox", "--config", cfgp.string()}) == 0);
  CHECK(slurp(report) == first);

  json rep = json::parse(first);
  CHECK(rep.at("curve").size() == 2);
  CHECK(rep.at("metadata").at("bn_attack_mode") == "eval-frozen");
  CHECK(rep.at("metadata").at("targeted_loss") == "target-cross-entropy");
}

TEST_CASE("eval-clean and eval-blackbox run end to end") {
  auto ckpt = train_micro_checkpoint();
  auto clean_cfg = write_config("clean.toml", micro_config(R"(
[input]
checkpoint = ")" + ckpt.string() + R"("
)"));
  CHECK(fdn::cli::run({"eval-clean", "--config", clean_cfg.string()}) == 0);

  // Use the same checkpoint as its own surrogate set (legal, if pointless).
  auto bb_cfg = write_config("bb.toml", micro_config(R"(
[input]
checkpoint = ")" + ckpt.string() + R"("
surrogates = [")" + ckpt.string() + R"("]

[eval]
epsilon = 8
batch_size = 8

[attack]
iters = 2
alpha = 2
)"));
  REQUIRE(fdn::cli::run({"eval-blackbox", "--config", bb_cfg.string()}) == 0);
  fs::path report;
  for (const auto& e : fs::directory_iterator(tmp_root() / "runs"))
    if (e.path().filename().string().rfind("eval-blackbox-", 0) == 0)
      report = e.path() / "blackbox_report.json";
  REQUIRE(fs::exists(report));
  json rep = json::parse(slurp(report));
  const double aon = rep.at("all_or_nothing_accuracy").get<double>();
  double mn = 1.0;
  for (const auto& a : rep.at("per_attacker_accuracy"))
    mn = std::min(mn, a.get<double>());
  CHECK(aon <= mn);
}

TEST_CASE("viz-features writes per-channel dumps for a denoise model") {
  auto cfgp = write_config("train-dn.toml", micro_config(R"(
[model]
widths = [4]
blocks_per_stage = 1
denoise = "mean3x3"

[train]
epochs = 1
batch_size = 8
lr = 0.05
track_clean_val = false

[attack]
epsilon = 4
alpha = 2
iters = 1
)"));
  REQUIRE(fdn::cli::run({"train", "--config", cfgp.string()}) == 0);
  fs::path ckpt;
  for (const auto& e : fs::directory_iterator(tmp_root() / "runs"))
    if (e.path().filename().string().rfind("train-", 0) == 0 &&
        fs::exists(e.path() / "checkpoint.fshd")) {
      json resolved = json::parse(slurp(e.path() / "resolved.json"));
      if (resolved.at("model").at("insertions").size() == 1)
        ckpt = e.path() / "checkpoint.fshd";
    }
  REQUIRE(!ckpt.empty());

  auto viz_cfg = write_config("viz.toml", micro_config(R"(
[input]
checkpoint = ")" + ckpt.string() + R"("
index = 1

[attack]
epsilon = 4
alpha = 2
iters = 1
)"));
  REQUIRE(fdn::cli::run({"viz-features", "--config", viz_cfg.string()}) == 0);
  fs::path feat;
  for (const auto& e : fs::directory_iterator(tmp_root() / "runs"))
    if (e.path().filename().string().rfind("viz-features-", 0) == 0)
      feat = e.path() / "features";
  REQUIRE(fs::exists(feat / "feature_noise.json"));
  CHECK(fs::exists(feat / "s0.end_clean_before_c0.pgm"));
  CHECK(fs::exists(feat / "s0.end_adv_after_c3.pgm"));
}

TEST_CASE("grad-check subcommand passes on a fresh tree") {
  CHECK(fdn::cli::run({"grad-check", "--instances", "1"}) == 0);
}
