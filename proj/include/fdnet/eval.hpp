#pragma once

#include <fdnet/image_io.hpp>
#include <fdnet/train.hpp>

namespace fdn {

// ---------------------------------------------------------------------------
// Evaluation report: per-image, per-attacker correctness with the derived
// accuracies. The all-or-nothing accuracy counts an image only if every
// attacker's version of it is classified correctly.
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string defender_id;
  std::vector<std::string> attackers;
  std::vector<std::vector<std::uint8_t>> correct;  // [attacker][image]
  std::vector<double> per_attacker_acc;
  double all_or_nothing_acc = 0;
  json metadata;

  void finalize() {
    per_attacker_acc.clear();
    if (correct.empty()) return;
    const std::size_t n = correct[0].size();
    for (const auto& row : correct) {
      if (row.size() != n)
        throw ConfigError("eval report: ragged correctness matrix");
      std::int64_t c = 0;
      for (auto v : row) c += v ? 1 : 0;
      per_attacker_acc.push_back(static_cast<double>(c) /
                                 static_cast<double>(n));
    }
    std::int64_t all = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool ok = true;
      for (const auto& row : correct) ok = ok && row[i];
      all += ok ? 1 : 0;
    }
    all_or_nothing_acc = static_cast<double>(all) / static_cast<double>(n);
    check();
  }

  void check() const {
    double mn = 1.0;
    for (double a : per_attacker_acc) {
      if (a < 0 || a > 1) throw ConfigError("eval report: accuracy out of range");
      mn = std::min(mn, a);
    }
    if (!per_attacker_acc.empty() && all_or_nothing_acc > mn + 1e-12)
      throw ConfigError("eval report: all-or-nothing exceeds per-attacker min");
  }

  json to_json() const {
    json j;
    j["defender"] = defender_id;
    j["attackers"] = attackers;
    json rows = json::array();
    for (const auto& row : correct) {
      json r = json::array();
      for (auto v : row) r.push_back(static_cast<int>(v));
      rows.push_back(r);
    }
    j["correct"] = rows;
    j["per_attacker_accuracy"] = per_attacker_acc;
    j["all_or_nothing_accuracy"] = all_or_nothing_acc;
    j["metadata"] = metadata;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Attackers as black boxes over batches. `batch_seed` keys the attacker's
// randomness so evaluations replay exactly.
// ---------------------------------------------------------------------------

struct Attacker {
  std::string descriptor;
  std::function<Tensor(const Tensor& x, const std::vector<int>& labels,
                       std::uint64_t batch_seed)>
      perturb;
};

// Transfer attack: PGD crafted against `surrogate`, applied to the defender.
inline Attacker make_transfer_attacker(Model& surrogate, AttackSpec spec,
                                       const std::string& name) {
  Attacker a;
  a.descriptor = name + ":" + spec.descriptor();
  a.perturb = [&surrogate, spec](const Tensor& x, const std::vector<int>& labels,
                                 std::uint64_t batch_seed) {
    Rng rng(splitmix64(spec.seed ^ batch_seed));
    return pgd_attack(surrogate, x, labels, spec, rng);
  };
  return a;
}

// White-box attacker: PGD against the defender itself.
inline Attacker make_whitebox_attacker(Model& defender, AttackSpec spec) {
  Attacker a;
  a.descriptor = std::string("whitebox:") + spec.descriptor();
  a.perturb = [&defender, spec](const Tensor& x, const std::vector<int>& labels,
                                std::uint64_t batch_seed) {
    Rng rng(splitmix64(spec.seed ^ batch_seed));
    return pgd_attack(defender, x, labels, spec, rng);
  };
  return a;
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

inline double clean_eval(Model& model, const Dataset& data,
                         int batch_size = 128) {
  if (data.count() == 0) throw DataError("clean_eval: empty dataset");
  return eval_accuracy(model, data, batch_size);
}

struct CurvePoint {
  int iters = 0;
  double alpha = 0;
  double accuracy = 0;
};

// Accuracy on perturbed images for each PGD iteration count, targeted with
// random init. The step size follows the evaluation protocol: alpha =
// eps / 10 for 10-iteration attacks, 1 otherwise. Top-1 is measured against
// the true labels regardless of the attack targets.
inline std::vector<CurvePoint> whitebox_curve(Model& model, const Dataset& data,
                                              double eps,
                                              const std::vector<int>& iter_list,
                                              std::uint64_t seed,
                                              int batch_size = 64) {
  if (data.count() == 0) throw DataError("whitebox_curve: empty dataset");
  for (std::size_t i = 1; i < iter_list.size(); ++i)
    if (iter_list[i] <= iter_list[i - 1])
      throw ConfigError("whitebox_curve: iteration list must ascend");

  std::vector<CurvePoint> out;
  for (int n : iter_list) {
    AttackSpec spec;
    spec.epsilon = eps;
    spec.alpha = (n == 10 && eps > 0) ? eps / 10.0 : 1.0;
    spec.iters = n;
    spec.init = AttackSpec::Init::Random;
    spec.targeted = true;
    spec.seed = splitmix64(seed ^ static_cast<std::uint64_t>(n));

    std::int64_t correct = 0;
    const std::int64_t total = data.count();
    std::uint64_t batch_ix = 0;
    for (std::int64_t at = 0; at < total; at += batch_size, ++batch_ix) {
      const std::int64_t take = std::min<std::int64_t>(batch_size, total - at);
      std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
      for (std::int64_t i = 0; i < take; ++i)
        idx[static_cast<std::size_t>(i)] = at + i;
      Tensor x = data.gather_images(idx);
      auto labels = data.gather_labels(idx);
      Rng rng(splitmix64(spec.seed ^ batch_ix));
      Tensor x_adv = pgd_attack(model, x, labels, spec, rng);
      check_linf_budget(x_adv, x, eps);
      auto pred = argmax_rows(model.forward(x_adv, Mode::Eval));
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    }
    out.push_back({n, spec.alpha,
                   static_cast<double>(correct) / static_cast<double>(total)});
  }
  return out;
}

// All-or-nothing evaluation against a set of attackers. Every attacker
// output is re-verified against the budget before scoring.
inline EvalReport allornothing_eval(Model& defender,
                                    const std::vector<Attacker>& attackers,
                                    const Dataset& data, double eps,
                                    int batch_size = 64) {
  if (attackers.empty())
    throw ConfigError("allornothing_eval: attacker set is empty");
  if (data.count() == 0) throw DataError("allornothing_eval: empty dataset");

  EvalReport report;
  report.defender_id = hex16(defender.fingerprint());
  const std::int64_t total = data.count();
  for (const auto& atk : attackers) {
    report.attackers.push_back(atk.descriptor);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(total), 0);
    std::uint64_t batch_ix = 0;
    for (std::int64_t at = 0; at < total; at += batch_size, ++batch_ix) {
      const std::int64_t take = std::min<std::int64_t>(batch_size, total - at);
      std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
      for (std::int64_t i = 0; i < take; ++i)
        idx[static_cast<std::size_t>(i)] = at + i;
      Tensor x = data.gather_images(idx);
      auto labels = data.gather_labels(idx);
      Tensor x_adv = atk.perturb(x, labels, batch_ix);
      check_linf_budget(x_adv, x, eps);  // protocol violation -> throw
      auto pred = argmax_rows(defender.forward(x_adv, Mode::Eval));
      for (std::size_t i = 0; i < pred.size(); ++i)
        row[static_cast<std::size_t>(at) + i] = pred[i] == labels[i] ? 1 : 0;
    }
    report.correct.push_back(std::move(row));
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Feature-map noise dumps (descriptive; the statistics are reported, not
// asserted).
// ---------------------------------------------------------------------------

struct MapStats {
  double mean_abs = 0;
  double total_variation = 0;  // mean |horizontal diff| + |vertical diff|
  double laplacian = 0;        // mean |4 v - up - down - left - right|
  float lo = 0, hi = 0;        // normalization bounds of the written image

  json to_json() const {
    return json{{"mean_abs", mean_abs},
                {"total_variation", total_variation},
                {"laplacian", laplacian},
                {"min", lo},
                {"max", hi}};
  }
};

inline MapStats map_stats(std::span<const float> map, int h, int w) {
  MapStats s;
  double abs_sum = 0;
  for (float v : map) abs_sum += std::abs(static_cast<double>(v));
  s.mean_abs = abs_sum / static_cast<double>(map.size());

  double tv = 0;
  std::int64_t tv_terms = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j + 1 < w; ++j, ++tv_terms)
      tv += std::abs(static_cast<double>(map[i * w + j + 1]) - map[i * w + j]);
  for (int i = 0; i + 1 < h; ++i)
    for (int j = 0; j < w; ++j, ++tv_terms)
      tv += std::abs(static_cast<double>(map[(i + 1) * w + j]) - map[i * w + j]);
  s.total_variation = tv_terms ? tv / static_cast<double>(tv_terms) : 0.0;

  double lap = 0;
  std::int64_t lap_terms = 0;
  for (int i = 1; i + 1 < h; ++i)
    for (int j = 1; j + 1 < w; ++j, ++lap_terms)
      lap += std::abs(4.0 * map[i * w + j] - map[(i - 1) * w + j] -
                      map[(i + 1) * w + j] - map[i * w + j - 1] -
                      map[i * w + j + 1]);
  s.laplacian = lap_terms ? lap / static_cast<double>(lap_terms) : 0.0;

  float lo = map.empty() ? 0.0f : map[0], hi = lo;
  for (float v : map) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  s.lo = lo;
  s.hi = hi;
  return s;
}

// Writes the feature maps immediately before and after every denoising
// operation for one clean/adversarial image pair: per-channel 8-bit PGM
// images (min-max normalized, bounds recorded) plus a JSON sidecar of the
// descriptive statistics. Returns the sidecar document.
inline json dump_feature_noise(Model& model, const Dataset& data,
                               std::int64_t index, const AttackSpec& spec,
                               const std::filesystem::path& out_dir) {
  if (index < 0 || index >= data.count())
    throw ConfigError("dump_feature_noise: image index out of range");
  std::filesystem::create_directories(out_dir);

  std::vector<std::int64_t> ix = {index};
  Tensor x = data.gather_images(ix);
  auto labels = data.gather_labels(ix);
  Rng rng = Rng::derive(spec.seed, "viz");
  Tensor x_adv = pgd_attack(model, x, labels, spec, rng);

  CaptureSink clean_caps, adv_caps;
  model.forward(x, Mode::Eval, &clean_caps);
  model.forward(x_adv, Mode::Eval, &adv_caps);
  if (clean_caps.empty())
    throw ConfigError("dump_feature_noise: model has no denoising blocks to "
                      "capture");

  auto dump_side = [&](const Capture& cap, const std::string& variant) {
    json side;
    for (const char* phase : {"before", "after"}) {
      const Tensor& t = phase == std::string("before") ? cap.before : cap.after;
      const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
      json per_channel = json::array();
      for (int k = 0; k < c; ++k) {
        std::span<const float> map{t.data().data() +
                                       static_cast<std::size_t>(k) * h * w,
                                   static_cast<std::size_t>(h) * w};
        MapStats st = map_stats(map, h, w);
        std::vector<unsigned char> px;
        auto [lo, hi] = normalize_to_u8(map, px);
        st.lo = lo;
        st.hi = hi;
        const std::string fname = cap.site + "_" + variant + "_" + phase +
                                  "_c" + std::to_string(k) + ".pgm";
        write_pgm(out_dir / fname, w, h, px);
        json e = st.to_json();
        e["image"] = fname;
        per_channel.push_back(e);
      }
      side[phase] = per_channel;
    }
    return side;
  };

  json sites = json::array();
  for (std::size_t i = 0; i < clean_caps.size(); ++i) {
    json rec;
    rec["site"] = clean_caps[i].site;
    rec["shape"] = clean_caps[i].before.shape();
    rec["clean"] = dump_side(clean_caps[i], "clean");
    rec["adv"] = dump_side(adv_caps[i], "adv");
    sites.push_back(rec);
  }

  json doc;
  doc["index"] = index;
  doc["label"] = labels[0];
  doc["attack"] = spec.to_json();
  doc["sites"] = sites;

  std::ofstream out(out_dir / "feature_noise.json", std::ios::trunc);
  if (!out) throw IoError("cannot write feature_noise.json");
  out << doc.dump(2) << "\n";
  return doc;
}

}  // namespace fdn
