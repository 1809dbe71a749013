#pragma once

#include <iostream>
#include <unistd.h>

#include <fdnet/archive.hpp>
#include <fdnet/checkpoint.hpp>
#include <fdnet/config.hpp>
#include <fdnet/eval.hpp>
#include <fdnet/gradcheck_suite.hpp>

#include <CLI11.hpp>

namespace fdn::cli {

namespace fs = std::filesystem;

// OpenBLAS selects its kernels in a load-time constructor, and its runtime
// detection falls back to generic kernels on CPUs it does not recognize
// (common inside VMs). A core-type override only works if it is in the
// environment before the library loads, so re-exec once with the right
// value. No-ops when the user already chose, or on exec failure.
inline void select_blas_core(char** argv) {
#if defined(FDNET_USE_OPENBLAS) && defined(__x86_64__) && defined(__linux__) && \
    defined(__GNUC__)
  if (std::getenv("OPENBLAS_CORETYPE")) return;
  const char* want = nullptr;
  if (__builtin_cpu_supports("avx512f")) want = "SKYLAKEX";
  else if (__builtin_cpu_supports("avx2")) want = "HASWELL";
  if (!want) return;
  setenv("OPENBLAS_CORETYPE", want, 0);
  execv("/proc/self/exe", argv);
#else
  (void)argv;
#endif
}

// ---------------------------------------------------------------------------
// Config schemas. Every command rejects keys it does not understand.
// ---------------------------------------------------------------------------

inline const std::set<std::string> kRunKeys = {"seed", "out_dir"};
inline const std::set<std::string> kDatasetKeys = {
    "format",       "kind",        "classes",     "train_count", "eval_count",
    "height",       "width",       "channels",    "noise",       "distractors",
    "seed",         "train_images", "train_labels", "eval_images",
    "eval_labels",  "train_files", "eval_files"};
inline const std::set<std::string> kModelKeys = {
    "in_channels",   "in_size",     "widths",       "blocks_per_stage",
    "classes",       "denoise",     "denoise_stages", "denoise_all_blocks",
    "subsample",     "neighborhood", "block_mode"};
inline const std::set<std::string> kTrainKeys = {
    "epochs",       "batch_size",  "lr",          "momentum",
    "weight_decay", "label_smoothing", "lr_drops", "adversarial",
    "clean_init_ratio", "shards",  "track_clean_val"};
inline const std::set<std::string> kAttackKeys = {"epsilon", "alpha", "iters",
                                                  "init", "targeted"};
inline const std::set<std::string> kInputKeys = {"checkpoint", "surrogates",
                                                 "index"};
inline const std::set<std::string> kEvalKeys = {"epsilon", "iters",
                                                "batch_size"};

inline std::map<std::string, std::set<std::string>> schema_for(
    const std::string& command) {
  std::map<std::string, std::set<std::string>> s;
  s["run"] = kRunKeys;
  if (command != "grad-check") s["dataset"] = kDatasetKeys;
  if (command == "train") {
    s["model"] = kModelKeys;
    s["train"] = kTrainKeys;
    s["attack"] = kAttackKeys;
  } else if (command == "attack" || command == "viz-features") {
    s["input"] = kInputKeys;
    s["attack"] = kAttackKeys;
  } else if (command == "eval-whitebox" || command == "eval-blackbox") {
    s["input"] = kInputKeys;
    s["eval"] = kEvalKeys;
    s["attack"] = kAttackKeys;
  } else if (command == "eval-clean") {
    s["input"] = kInputKeys;
    s["eval"] = kEvalKeys;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Builders: Config -> typed structures, recording resolved values.
// ---------------------------------------------------------------------------

struct SplitPair {
  Dataset train;  // may be empty for evaluation-only commands
  Dataset eval;
};

inline SplitPair build_dataset(const Config& cfg, bool need_train,
                               json& resolved) {
  const std::string format = cfg.get_string("dataset", "format", "synthetic");
  json r;
  r["format"] = format;
  SplitPair out;
  if (format == "synthetic") {
    SyntheticSpec s;
    const std::string kind = cfg.get_string("dataset", "kind", "shapes");
    if (kind == "shapes") s.kind = SyntheticSpec::Kind::Shapes;
    else if (kind == "gaussians") s.kind = SyntheticSpec::Kind::Gaussians;
    else throw ConfigError("dataset.kind must be 'shapes' or 'gaussians'");
    s.classes = static_cast<int>(cfg.get_int("dataset", "classes", 4));
    s.height = static_cast<int>(cfg.get_int("dataset", "height", 32));
    s.width = static_cast<int>(cfg.get_int("dataset", "width", 32));
    s.channels = static_cast<int>(cfg.get_int("dataset", "channels", 1));
    s.noise = cfg.get_double("dataset", "noise", 24.0);
    s.distractors = static_cast<int>(cfg.get_int("dataset", "distractors", 2));
    const auto base_seed =
        static_cast<std::uint64_t>(cfg.get_int("dataset", "seed", 0));
    r["kind"] = kind;
    r["classes"] = s.classes;
    r["height"] = s.height;
    r["width"] = s.width;
    r["channels"] = s.channels;
    r["noise"] = s.noise;
    r["distractors"] = s.distractors;
    r["seed"] = std::to_string(base_seed);
    r["train_count"] = cfg.get_int("dataset", "train_count", 5000);
    r["eval_count"] = cfg.get_int("dataset", "eval_count", 1000);
    if (need_train) {
      s.count = static_cast<int>(cfg.get_int("dataset", "train_count", 5000));
      s.seed = splitmix64(base_seed ^ fnv1a64("train-split"));
      out.train = make_synthetic(s);
    }
    s.count = static_cast<int>(cfg.get_int("dataset", "eval_count", 1000));
    s.seed = splitmix64(base_seed ^ fnv1a64("eval-split"));
    out.eval = make_synthetic(s);
  } else if (format == "idx") {
    const int classes = static_cast<int>(cfg.get_int("dataset", "classes", 10));
    r["classes"] = classes;
    if (need_train) {
      out.train = load_idx_pair(cfg.require_string("dataset", "train_images"),
                                cfg.require_string("dataset", "train_labels"),
                                classes);
      r["train_images"] = cfg.require_string("dataset", "train_images");
      r["train_labels"] = cfg.require_string("dataset", "train_labels");
    }
    out.eval = load_idx_pair(cfg.require_string("dataset", "eval_images"),
                             cfg.require_string("dataset", "eval_labels"),
                             classes);
    r["eval_images"] = cfg.require_string("dataset", "eval_images");
    r["eval_labels"] = cfg.require_string("dataset", "eval_labels");
  } else if (format == "cifar") {
    const int classes = static_cast<int>(cfg.get_int("dataset", "classes", 10));
    r["classes"] = classes;
    auto to_paths = [](const std::vector<std::string>& v) {
      std::vector<fs::path> p(v.begin(), v.end());
      return p;
    };
    if (need_train) {
      auto files = cfg.get_string_list("dataset", "train_files", {});
      if (files.empty()) throw ConfigError("missing dataset.train_files");
      out.train = load_cifar_binary(to_paths(files), classes);
      r["train_files"] = files;
    }
    auto files = cfg.get_string_list("dataset", "eval_files", {});
    if (files.empty()) throw ConfigError("missing dataset.eval_files");
    out.eval = load_cifar_binary(to_paths(files), classes);
    r["eval_files"] = files;
  } else {
    throw ConfigError("dataset.format must be synthetic, idx, or cifar");
  }
  resolved["dataset"] = r;
  return out;
}

inline ModelSpec build_model_spec(const Config& cfg, const Dataset& ref,
                                  json& resolved) {
  ModelSpec s;
  s.in_channels =
      static_cast<int>(cfg.get_int("model", "in_channels", ref.images.dim(1)));
  s.in_size = static_cast<int>(cfg.get_int("model", "in_size", ref.images.dim(2)));
  auto widths = cfg.get_int_list("model", "widths", {16, 32, 64});
  s.widths.assign(widths.begin(), widths.end());
  s.blocks_per_stage =
      static_cast<int>(cfg.get_int("model", "blocks_per_stage", 3));
  s.classes = static_cast<int>(cfg.get_int("model", "classes", ref.classes));
  s.block_mode =
      parse_block_mode(cfg.get_string("model", "block_mode", "full"));

  const std::string kind_str = cfg.get_string("model", "denoise", "none");
  if (kind_str != "none") {
    DenoiseBlockSpec dn;
    dn.kind = parse_denoise_kind(kind_str);
    dn.embed = is_gaussian(dn.kind);
    dn.neighborhood =
        static_cast<int>(cfg.get_int("model", "neighborhood", 3));
    dn.subsample = cfg.get_bool("model", "subsample", false);
    if (cfg.get_bool("model", "denoise_all_blocks", false)) {
      s.denoise_after_every_block = true;
      s.every_block_spec = dn;
    } else {
      std::vector<std::int64_t> def_stages;
      for (std::size_t i = 0; i < s.widths.size(); ++i)
        def_stages.push_back(static_cast<std::int64_t>(i));
      for (auto stage : cfg.get_int_list("model", "denoise_stages", def_stages))
        s.insertions.push_back({static_cast<int>(stage), dn});
    }
  }
  s.validate();
  resolved["model"] = s.to_json();
  return s;
}

inline AttackSpec build_attack_spec(const Config& cfg, std::uint64_t run_seed,
                                    json& resolved, double default_eps = 16.0,
                                    double default_alpha = 1.0,
                                    int default_iters = 30) {
  AttackSpec a;
  a.epsilon = cfg.get_double("attack", "epsilon", default_eps);
  a.alpha = cfg.get_double("attack", "alpha", default_alpha);
  a.iters = static_cast<int>(cfg.get_int("attack", "iters", default_iters));
  const std::string init = cfg.get_string("attack", "init", "random");
  if (init == "random") a.init = AttackSpec::Init::Random;
  else if (init == "clean") a.init = AttackSpec::Init::Clean;
  else throw ConfigError("attack.init must be 'random' or 'clean'");
  a.targeted = cfg.get_bool("attack", "targeted", true);
  a.seed = splitmix64(run_seed ^ fnv1a64("attack-spec"));
  a.validate();
  resolved["attack"] = a.to_json();
  return a;
}

inline TrainConfig build_train_config(const Config& cfg, std::uint64_t run_seed,
                                      json& resolved) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.get_int("train", "epochs", 10));
  t.batch_size = static_cast<int>(cfg.get_int("train", "batch_size", 64));
  t.lr = cfg.get_double("train", "lr", 0.1);
  t.momentum = cfg.get_double("train", "momentum", 0.9);
  t.weight_decay = cfg.get_double("train", "weight_decay", 5e-4);
  t.label_smoothing = cfg.get_double("train", "label_smoothing", 0.1);
  t.lr_drop_fracs = cfg.get_double_list(
      "train", "lr_drops", {35.0 / 110.0, 70.0 / 110.0, 95.0 / 110.0});
  t.adversarial = cfg.get_bool("train", "adversarial", true);
  t.clean_init_ratio = cfg.get_double("train", "clean_init_ratio", 0.2);
  t.shards = static_cast<int>(cfg.get_int("train", "shards", 1));
  t.track_clean_val = cfg.get_bool("train", "track_clean_val", true);
  t.seed = run_seed;
  json dummy;
  t.attack = build_attack_spec(cfg, run_seed, dummy, 16.0, 4.0, 5);
  t.validate();
  json r;
  r["epochs"] = t.epochs;
  r["batch_size"] = t.batch_size;
  r["lr"] = t.lr;
  r["momentum"] = t.momentum;
  r["weight_decay"] = t.weight_decay;
  r["label_smoothing"] = t.label_smoothing;
  r["lr_drops"] = t.lr_drop_fracs;
  r["adversarial"] = t.adversarial;
  r["clean_init_ratio"] = t.clean_init_ratio;
  r["shards"] = t.shards;
  r["track_clean_val"] = t.track_clean_val;
  resolved["train"] = r;
  resolved["attack"] = t.attack.to_json();
  return t;
}

// ---------------------------------------------------------------------------
// Run directories and manifests. A run directory is named by the hash of the
// resolved configuration and holds the verbatim config, the resolved values,
// every artifact, and a manifest with artifact hashes. Volatile files (the
// metrics log carries wall-clock times) are listed without a hash.
// ---------------------------------------------------------------------------

class RunContext {
 public:
  RunContext(const std::string& command, const std::string& config_text,
             const json& resolved, const fs::path& out_dir) {
    const std::string h = hex16(fnv1a64(resolved.dump()));
    dir_ = out_dir / (command + "-" + h);
    fs::create_directories(dir_);
    manifest_["command"] = command;
    manifest_["config_hash"] = h;
    manifest_["artifacts"] = json::array();
    write_text("config.toml", config_text);
    write_text("resolved.json", resolved.dump(2) + "\n");
  }

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& rel) const { return dir_ / rel; }

  void write_text(const std::string& rel, const std::string& text) {
    std::ofstream out(dir_ / rel, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir_ / rel).string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    add_artifact(rel);
  }

  void add_artifact(const std::string& rel, bool hash = true) {
    const fs::path p = dir_ / rel;
    json e;
    e["path"] = rel;
    e["bytes"] = static_cast<std::uint64_t>(fs::file_size(p));
    if (hash) {
      const std::string blob = fdn::detail::read_file(p);
      e["fnv1a64"] = hex16(fnv1a64(blob));
    } else {
      e["fnv1a64"] = nullptr;
    }
    manifest_["artifacts"].push_back(e);
  }

  void finish() {
    std::ofstream out(dir_ / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest.json");
    out << manifest_.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  json manifest_;
};

struct CommonArgs {
  std::string config_path;
  std::string out_dir_override;
};

struct LoadedRun {
  Config cfg;
  std::uint64_t seed = 0;
  fs::path out_dir;
  json resolved;
};

inline LoadedRun load_run(const std::string& command, const CommonArgs& args) {
  if (args.config_path.empty())
    throw ConfigError(command + ": --config is required");
  LoadedRun run;
  run.cfg = Config::parse(fdn::detail::read_file(args.config_path));
  run.cfg.check_schema(schema_for(command));
  run.seed = static_cast<std::uint64_t>(run.cfg.get_int("run", "seed", 0));
  run.out_dir = args.out_dir_override.empty()
                    ? fs::path(run.cfg.get_string("run", "out_dir", "runs"))
                    : fs::path(args.out_dir_override);
  run.resolved["command"] = command;
  run.resolved["run"] = {{"seed", std::to_string(run.seed)}};
  return run;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_train(const CommonArgs& args) {
  LoadedRun run = load_run("train", args);
  SplitPair data = build_dataset(run.cfg, true, run.resolved);
  ModelSpec spec = build_model_spec(run.cfg, data.train, run.resolved);
  TrainConfig tcfg = build_train_config(run.cfg, run.seed, run.resolved);

  RunContext ctx("train", run.cfg.text(), run.resolved, run.out_dir);
  Model model(spec, run.seed);

  std::ofstream metrics(ctx.path("metrics.jsonl"), std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics.jsonl");
  auto sink = [&](const EpochMetrics& m) {
    metrics << m.to_json().dump() << "\n";
    metrics.flush();
    std::cout << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.loss
              << " adv_acc " << m.adv_acc;
    if (m.clean_acc >= 0) std::cout << " clean_acc " << m.clean_acc;
    std::cout << "\n";
  };

  OptState opt;
  train(model, data.train, &data.eval, tcfg, sink, &opt);

  CheckpointMeta meta;
  meta.epoch = tcfg.epochs;
  meta.seed = run.seed;
  meta.train_epsilon = tcfg.adversarial ? tcfg.attack.epsilon : -1.0;
  save_checkpoint(model, ctx.path("checkpoint.fshd"), meta, opt);
  ctx.add_artifact("checkpoint.fshd");
  ctx.add_artifact("metrics.jsonl", /*hash=*/false);
  ctx.finish();
  std::cout << "checkpoint: " << ctx.path("checkpoint.fshd").string() << "\n";
  return 0;
}

inline int cmd_attack(const CommonArgs& args) {
  LoadedRun run = load_run("attack", args);
  SplitPair data = build_dataset(run.cfg, false, run.resolved);
  const std::string ckpt = run.cfg.require_string("input", "checkpoint");
  run.resolved["input"] = {{"checkpoint", ckpt}};
  AttackSpec spec = build_attack_spec(run.cfg, run.seed, run.resolved);

  RunContext ctx("attack", run.cfg.text(), run.resolved, run.out_dir);
  auto loaded = load_checkpoint(ckpt);
  Model& model = *loaded.model;

  const Dataset& ds = data.eval;
  Tensor adv(ds.images.shape());
  const int batch = 64;
  std::uint64_t batch_ix = 0;
  for (std::int64_t at = 0; at < ds.count(); at += batch, ++batch_ix) {
    const std::int64_t take = std::min<std::int64_t>(batch, ds.count() - at);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
    for (std::int64_t i = 0; i < take; ++i)
      idx[static_cast<std::size_t>(i)] = at + i;
    Tensor x = ds.gather_images(idx);
    auto labels = ds.gather_labels(idx);
    Rng rng(splitmix64(spec.seed ^ batch_ix));
    Tensor x_adv = pgd_attack(model, x, labels, spec, rng);
    std::copy_n(x_adv.data().data(), x_adv.data().size(),
                adv.data().data() + at * (ds.images.numel() / ds.count()));
  }

  // Integer-quantized archive: native-format images plus signed deltas.
  auto deltas = quantize_deltas(adv, ds.images, spec.epsilon);
  Tensor adv_q = apply_deltas(ds.images, deltas);
  check_linf_budget(adv_q, ds.images, spec.epsilon);

  const std::string format = run.resolved["dataset"]["format"];
  if (format == "cifar") {
    save_cifar_binary(adv_q, ds.labels, ctx.path("adv_images.bin"));
    ctx.add_artifact("adv_images.bin");
  } else {
    save_idx_images(adv_q, ctx.path("adv_images.idx"));
    save_idx_labels(ds.labels, ctx.path("adv_labels.idx"));
    ctx.add_artifact("adv_images.idx");
    ctx.add_artifact("adv_labels.idx");
  }
  save_delta_archive(ctx.path("deltas.fadl"), ds.images, deltas, spec.epsilon,
                     spec.to_json());
  ctx.add_artifact("deltas.fadl");
  ctx.finish();
  std::cout << "adversarial archive: " << ctx.dir().string() << "\n";
  return 0;
}

inline json eval_metadata(const AttackSpec& spec, std::uint64_t seed) {
  json m;
  m["bn_attack_mode"] = "eval-frozen";
  m["targeted_loss"] = "target-cross-entropy";
  m["seed"] = std::to_string(seed);
  m["attack"] = spec.to_json();
  return m;
}

inline int cmd_eval_whitebox(const CommonArgs& args) {
  LoadedRun run = load_run("eval-whitebox", args);
  SplitPair data = build_dataset(run.cfg, false, run.resolved);
  const std::string ckpt = run.cfg.require_string("input", "checkpoint");
  run.resolved["input"] = {{"checkpoint", ckpt}};
  auto loaded = load_checkpoint(ckpt);

  const double default_eps =
      loaded.meta.train_epsilon > 0 ? loaded.meta.train_epsilon : 16.0;
  const double eps = run.cfg.get_double("eval", "epsilon", default_eps);
  auto iters64 = run.cfg.get_int_list("eval", "iters", {10});
  std::vector<int> iters(iters64.begin(), iters64.end());
  const int batch =
      static_cast<int>(run.cfg.get_int("eval", "batch_size", 64));
  run.resolved["eval"] = {{"epsilon", eps}, {"iters", iters},
                          {"batch_size", batch}};

  RunContext ctx("eval-whitebox", run.cfg.text(), run.resolved, run.out_dir);
  auto curve = whitebox_curve(*loaded.model, data.eval, eps, iters, run.seed,
                              batch);
  const double clean = clean_eval(*loaded.model, data.eval, 128);

  json rep;
  rep["protocol"] = "whitebox-pgd";
  rep["defender"] = hex16(loaded.model->fingerprint());
  rep["epsilon"] = eps;
  rep["clean_accuracy"] = clean;
  json pts = json::array();
  for (const auto& p : curve) {
    json e;
    e["iters"] = p.iters;
    e["alpha"] = p.alpha;
    e["accuracy"] = p.accuracy;
    pts.push_back(e);
    std::cout << "pgd-" << p.iters << " accuracy " << p.accuracy << "\n";
  }
  rep["curve"] = pts;
  AttackSpec proto;
  proto.epsilon = eps;
  rep["metadata"] = eval_metadata(proto, run.seed);
  ctx.write_text("whitebox_report.json", rep.dump(2) + "\n");
  ctx.finish();
  return 0;
}

inline int cmd_eval_blackbox(const CommonArgs& args) {
  LoadedRun run = load_run("eval-blackbox", args);
  SplitPair data = build_dataset(run.cfg, false, run.resolved);
  const std::string ckpt = run.cfg.require_string("input", "checkpoint");
  auto surrogate_paths = run.cfg.get_string_list("input", "surrogates", {});
  if (surrogate_paths.empty())
    throw ConfigError("eval-blackbox: input.surrogates must list at least one "
                      "checkpoint");
  run.resolved["input"] = {{"checkpoint", ckpt},
                           {"surrogates", surrogate_paths}};

  auto loaded = load_checkpoint(ckpt);
  // Transfer evaluation defaults to twice the training budget.
  const double default_eps = loaded.meta.train_epsilon > 0
                                 ? 2.0 * loaded.meta.train_epsilon
                                 : 32.0;
  const double eps = run.cfg.get_double("eval", "epsilon", default_eps);
  const int batch =
      static_cast<int>(run.cfg.get_int("eval", "batch_size", 64));
  json dummy;
  AttackSpec proto =
      build_attack_spec(run.cfg, run.seed, dummy, eps, eps / 10.0, 10);
  proto.epsilon = eps;
  run.resolved["eval"] = {{"epsilon", eps}, {"batch_size", batch}};
  run.resolved["attack"] = proto.to_json();

  RunContext ctx("eval-blackbox", run.cfg.text(), run.resolved, run.out_dir);
  std::vector<std::unique_ptr<Model>> surrogates;
  std::vector<Attacker> attackers;
  for (std::size_t i = 0; i < surrogate_paths.size(); ++i) {
    auto s = load_checkpoint(surrogate_paths[i]);
    surrogates.push_back(std::move(s.model));
    AttackSpec sp = proto;
    sp.seed = splitmix64(proto.seed ^ (i + 1));
    attackers.push_back(make_transfer_attacker(
        *surrogates.back(), sp, "surrogate" + std::to_string(i)));
  }
  EvalReport report =
      allornothing_eval(*loaded.model, attackers, data.eval, eps, batch);
  report.metadata = eval_metadata(proto, run.seed);

  std::cout << "all-or-nothing accuracy " << report.all_or_nothing_acc << "\n";
  for (std::size_t i = 0; i < report.per_attacker_acc.size(); ++i)
    std::cout << report.attackers[i] << " accuracy "
              << report.per_attacker_acc[i] << "\n";
  ctx.write_text("blackbox_report.json", report.to_json().dump(2) + "\n");
  ctx.finish();
  return 0;
}

inline int cmd_eval_clean(const CommonArgs& args) {
  LoadedRun run = load_run("eval-clean", args);
  SplitPair data = build_dataset(run.cfg, false, run.resolved);
  const std::string ckpt = run.cfg.require_string("input", "checkpoint");
  run.resolved["input"] = {{"checkpoint", ckpt}};
  const int batch =
      static_cast<int>(run.cfg.get_int("eval", "batch_size", 128));
  run.resolved["eval"] = {{"batch_size", batch}};

  RunContext ctx("eval-clean", run.cfg.text(), run.resolved, run.out_dir);
  auto loaded = load_checkpoint(ckpt);
  const double acc = clean_eval(*loaded.model, data.eval, batch);
  json rep;
  rep["protocol"] = "clean";
  rep["defender"] = hex16(loaded.model->fingerprint());
  rep["accuracy"] = acc;
  rep["images"] = data.eval.count();
  std::cout << "clean accuracy " << acc << "\n";
  ctx.write_text("clean_report.json", rep.dump(2) + "\n");
  ctx.finish();
  return 0;
}

inline int cmd_viz_features(const CommonArgs& args) {
  LoadedRun run = load_run("viz-features", args);
  SplitPair data = build_dataset(run.cfg, false, run.resolved);
  const std::string ckpt = run.cfg.require_string("input", "checkpoint");
  const auto index = run.cfg.get_int("input", "index", 0);
  run.resolved["input"] = {{"checkpoint", ckpt}, {"index", index}};
  AttackSpec spec = build_attack_spec(run.cfg, run.seed, run.resolved);

  RunContext ctx("viz-features", run.cfg.text(), run.resolved, run.out_dir);
  auto loaded = load_checkpoint(ckpt);
  json doc = dump_feature_noise(*loaded.model, data.eval, index, spec,
                                ctx.path("features"));
  for (const auto& site : doc.at("sites"))
    for (const char* variant : {"clean", "adv"})
      for (const char* phase : {"before", "after"})
        for (const auto& chan : site.at(variant).at(phase))
          ctx.add_artifact("features/" +
                           chan.at("image").get<std::string>());
  ctx.add_artifact("features/feature_noise.json");
  ctx.finish();
  std::cout << "feature dumps: " << ctx.path("features").string() << "\n";
  return 0;
}

inline int cmd_grad_check(std::uint64_t seed, int instances, double tol) {
  auto results = run_gradcheck_suite(seed, instances, tol);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "pass" : "FAIL") << "  " << r.name
              << "  max_rel_err=" << r.max_rel_err << "  tol=" << r.tolerance
              << "\n";
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "gradient check passed" : "gradient check FAILED")
            << " (" << results.size() << " operations, " << instances
            << " instances each)\n";
  return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args) {
  CLI::App app{"feature-denoising robustness workbench"};
  app.require_subcommand(1);

  CommonArgs common;
  std::uint64_t gc_seed = 0;
  int gc_instances = 10;
  double gc_tol = 1e-4;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "run configuration file");
    sub->add_option("--out-dir", common.out_dir_override,
                    "override [run].out_dir");
  };

  std::function<int()> action;
  auto bind = [&](CLI::App* sub, int (*fn)(const CommonArgs&)) {
    sub->callback([&action, fn, &common] { action = [fn, &common] { return fn(common); }; });
  };

  auto add_cmd = [&](const char* name, const char* desc,
                     int (*fn)(const CommonArgs&)) {
    CLI::App* sub = app.add_subcommand(name, desc);
    add_common(sub);
    bind(sub, fn);
  };
  add_cmd("train", "adversarially train a model", cmd_train);
  add_cmd("attack", "write an adversarial image archive", cmd_attack);
  add_cmd("eval-whitebox", "PGD accuracy curve", cmd_eval_whitebox);
  add_cmd("eval-blackbox", "transfer attacks, all-or-nothing criterion",
          cmd_eval_blackbox);
  add_cmd("eval-clean", "clean accuracy", cmd_eval_clean);
  add_cmd("viz-features", "feature-map noise dumps", cmd_viz_features);

  auto* gc = app.add_subcommand("grad-check",
                                "finite-difference checks for every op");
  gc->add_option("--seed", gc_seed, "random seed");
  gc->add_option("--instances", gc_instances, "random instances per op");
  gc->add_option("--tol", gc_tol, "relative tolerance");
  gc->callback([&] {
    action = [&] { return cmd_grad_check(gc_seed, gc_instances, gc_tol); };
  });

  // Thread-count override for the GEMM backend.
  if (int n = env_thread_override()) fdn::detail::set_blas_threads(n);

  std::vector<const char*> argv;
  argv.push_back("fdnet");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()),
              const_cast<char**>(argv.data()));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return action ? action() : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergedError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol violation: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fdn::cli
