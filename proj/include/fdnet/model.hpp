#pragma once

#include <map>
#include <optional>

#include <fdnet/denoise.hpp>

#include <json.hpp>

namespace fdn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

struct DenoiseInsertion {
  int stage = 0;
  DenoiseBlockSpec spec;  // channels 0 = derive from the stage width
};

// Small residual classifier: stem 3x3 convolution, `widths.size()` stages of
// pre-activation blocks (stride 2 between stages), batch-norm/ReLU head with
// global average pooling and a fully connected classifier. Denoising blocks
// go after the last residual block of the named stages, or after every
// residual block.
struct ModelSpec {
  int in_channels = 1;
  int in_size = 32;
  std::vector<int> widths = {16, 32, 64};
  int blocks_per_stage = 3;
  int classes = 10;
  std::vector<DenoiseInsertion> insertions;
  bool denoise_after_every_block = false;
  DenoiseBlockSpec every_block_spec;  // used when denoise_after_every_block
  BlockMode block_mode = BlockMode::Full;

  void validate() const {
    if (in_channels < 1 || in_size < 8)
      throw ConfigError("model spec: bad input shape");
    if (widths.empty()) throw ConfigError("model spec: no stages");
    for (int w : widths)
      if (w < 1) throw ConfigError("model spec: widths must be positive");
    if (blocks_per_stage < 1)
      throw ConfigError("model spec: blocks_per_stage must be positive");
    if (classes < 2) throw ConfigError("model spec: need at least two classes");
    for (const auto& ins : insertions)
      if (ins.stage < 0 || ins.stage >= static_cast<int>(widths.size()))
        throw ConfigError("model spec: insertion stage " +
                          std::to_string(ins.stage) + " out of range");
    int sz = in_size;
    for (std::size_t s = 1; s < widths.size(); ++s) {
      if (sz % 2 != 0)
        throw ConfigError("model spec: input size does not halve cleanly");
      sz /= 2;
    }
  }

  json to_json() const {
    json j;
    j["in_channels"] = in_channels;
    j["in_size"] = in_size;
    j["widths"] = widths;
    j["blocks_per_stage"] = blocks_per_stage;
    j["classes"] = classes;
    j["block_mode"] = to_string(block_mode);
    json ins = json::array();
    for (const auto& i : insertions) {
      json e;
      e["stage"] = i.stage;
      e["kind"] = to_string(i.spec.kind);
      e["neighborhood"] = i.spec.neighborhood;
      e["subsample"] = i.spec.subsample;
      ins.push_back(e);
    }
    j["insertions"] = ins;
    j["denoise_after_every_block"] = denoise_after_every_block;
    if (denoise_after_every_block) {
      j["every_block"] = {{"kind", to_string(every_block_spec.kind)},
                          {"neighborhood", every_block_spec.neighborhood},
                          {"subsample", every_block_spec.subsample}};
    }
    return j;
  }

  static ModelSpec from_json(const json& j) {
    ModelSpec s;
    s.in_channels = j.at("in_channels").get<int>();
    s.in_size = j.at("in_size").get<int>();
    s.widths = j.at("widths").get<std::vector<int>>();
    s.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    s.classes = j.at("classes").get<int>();
    s.block_mode = parse_block_mode(j.at("block_mode").get<std::string>());
    for (const auto& e : j.at("insertions")) {
      DenoiseInsertion ins;
      ins.stage = e.at("stage").get<int>();
      ins.spec.kind = parse_denoise_kind(e.at("kind").get<std::string>());
      ins.spec.neighborhood = e.at("neighborhood").get<int>();
      ins.spec.subsample = e.at("subsample").get<bool>();
      ins.spec.embed = is_gaussian(ins.spec.kind);
      s.insertions.push_back(ins);
    }
    s.denoise_after_every_block = j.at("denoise_after_every_block").get<bool>();
    if (s.denoise_after_every_block) {
      const auto& e = j.at("every_block");
      s.every_block_spec.kind = parse_denoise_kind(e.at("kind").get<std::string>());
      s.every_block_spec.neighborhood = e.at("neighborhood").get<int>();
      s.every_block_spec.subsample = e.at("subsample").get<bool>();
      s.every_block_spec.embed = is_gaussian(s.every_block_spec.kind);
    }
    return s;
  }

  std::string canonical_json() const { return to_json().dump(); }
  std::uint64_t hash() const { return fnv1a64(canonical_json()); }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

// Optimizer state (momentum buffers), keyed by parameter name.
using OptState = std::map<std::string, std::vector<float>>;

struct Capture {
  std::string site;
  Tensor before;  // input of the denoising operation
  Tensor after;   // output of the denoising operation
};
using CaptureSink = std::vector<Capture>;

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    spec_.validate();
    build();
    init_params();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  // Named learned parameters, in registration order.
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }

  Tensor* find_param(const std::string& name) {
    for (auto& [n, t] : params_)
      if (n == name) return &t;
    return nullptr;
  }

  // Named batch-norm states (running statistics live here).
  std::vector<std::pair<std::string, BatchNorm*>>& bn_states() { return bns_; }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void set_params_requires_grad(bool b) {
    for (auto& [name, t] : params_) t.set_requires_grad(b);
  }

  // Fingerprint over all learned state; identifies a trained model.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = fnv1a64(spec_.canonical_json().data(), spec_.canonical_json().size(), h);
    for (const auto& [name, t] : params_) {
      h = fnv1a64(name.data(), name.size(), h);
      h = fnv1a64(t.data().data(), t.data().size_bytes(), h);
    }
    for (const auto& [name, bn] : bns_) {
      h = fnv1a64(bn->running_mean.data(),
                  bn->running_mean.size() * sizeof(float), h);
      h = fnv1a64(bn->running_var.data(),
                  bn->running_var.size() * sizeof(float), h);
    }
    return h;
  }

  Tensor forward(const Tensor& x, Mode mode, CaptureSink* caps = nullptr) {
    if (x.ndim() != 4 || x.dim(1) != spec_.in_channels ||
        x.dim(2) != spec_.in_size || x.dim(3) != spec_.in_size)
      throw DataError("forward: input " + shape_str(x.shape()) +
                      " does not match spec (N," +
                      std::to_string(spec_.in_channels) + "," +
                      std::to_string(spec_.in_size) + "," +
                      std::to_string(spec_.in_size) + ")");

    // Pixels arrive on the 0..255 scale; normalization is part of the model
    // so attack budgets keep pixel units.
    Tensor h = scale(add_scalar(x, -127.5), 1.0 / 127.5);
    h = conv2d(h, stem_w_, 1, 1);

    for (std::size_t s = 0; s < stages_.size(); ++s) {
      auto& stage = stages_[s];
      for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        h = res_forward(stage.blocks[b], h, mode);
        if (stage.blocks[b].denoise)
          h = denoise_forward(*stage.blocks[b].denoise, h, caps);
      }
      if (stage.end_denoise) h = denoise_forward(*stage.end_denoise, h, caps);
    }

    h = relu(batch_norm(h, head_bn_, mode));
    return dense(avg_pool_global(h), fc_w_, fc_b_);
  }

 private:
  struct Conv {
    Tensor w;
    int stride = 1;
    int pad = 1;
  };
  struct DenoiseAttachment {
    std::string site;
    DenoiseBlockSpec spec;
    DenoiseBlockParams params;
  };
  struct ResBlock {
    BatchNorm bn1, bn2;
    Conv conv1, conv2;
    std::optional<Conv> proj;
    bool downsample = false;
    std::unique_ptr<DenoiseAttachment> denoise;  // all-blocks mode
  };
  struct Stage {
    std::vector<ResBlock> blocks;
    std::unique_ptr<DenoiseAttachment> end_denoise;
  };

  // Pre-activation residual block. Stage transitions downsample the
  // pre-activated features with a 2x2 max pool (keeping every convolution at
  // stride 1) and project the shortcut with a 1x1 convolution.
  Tensor res_forward(ResBlock& blk, const Tensor& x, Mode mode) {
    Tensor h = relu(batch_norm(x, blk.bn1, mode));
    if (blk.downsample) h = max_pool2d(h, 2, 2);
    Tensor shortcut = blk.proj ? conv2d(h, blk.proj->w, 1, 0)
                               : (blk.downsample ? h : x);
    Tensor t = conv2d(h, blk.conv1.w, 1, 1);
    t = relu(batch_norm(t, blk.bn2, mode));
    t = conv2d(t, blk.conv2.w, 1, 1);
    return add(t, shortcut);
  }

  Tensor denoise_forward(DenoiseAttachment& dn, const Tensor& x,
                         CaptureSink* caps) {
    Tensor op_out;
    Tensor y = denoise_block(x, dn.spec, dn.params, spec_.block_mode, &op_out);
    if (caps) caps->push_back({dn.site, x, op_out});
    return y;
  }

  std::unique_ptr<DenoiseAttachment> make_attachment(const std::string& site,
                                                     DenoiseBlockSpec spec,
                                                     int channels) {
    if (spec.channels == 0) spec.channels = channels;
    if (spec.channels != channels)
      throw ConfigError("denoise insertion at " + site + " expects " +
                        std::to_string(channels) + " channels, spec has " +
                        std::to_string(spec.channels));
    spec.validate();
    auto a = std::make_unique<DenoiseAttachment>();
    a->site = site;
    a->spec = spec;
    a->params = DenoiseBlockParams::zeros(spec);
    return a;
  }

  void build() {
    const int nstages = static_cast<int>(spec_.widths.size());
    stem_w_ = Tensor({spec_.widths[0], spec_.in_channels, 3, 3});

    int in_w = spec_.widths[0];
    for (int s = 0; s < nstages; ++s) {
      Stage stage;
      const int out_w = spec_.widths[static_cast<std::size_t>(s)];
      for (int b = 0; b < spec_.blocks_per_stage; ++b) {
        ResBlock blk;
        blk.downsample = s > 0 && b == 0;
        const int bin = b == 0 ? in_w : out_w;
        blk.bn1 = BatchNorm(bin);
        blk.conv1 = {Tensor({out_w, bin, 3, 3}), 1, 1};
        blk.bn2 = BatchNorm(out_w);
        blk.conv2 = {Tensor({out_w, out_w, 3, 3}), 1, 1};
        if (blk.downsample || bin != out_w)
          blk.proj = Conv{Tensor({out_w, bin, 1, 1}), 1, 0};
        if (spec_.denoise_after_every_block) {
          blk.denoise = make_attachment(
              "s" + std::to_string(s) + ".b" + std::to_string(b),
              spec_.every_block_spec, out_w);
        }
        stage.blocks.push_back(std::move(blk));
      }
      for (const auto& ins : spec_.insertions)
        if (ins.stage == s) {
          if (stage.end_denoise)
            throw ConfigError("model spec: duplicate insertion at stage " +
                              std::to_string(s));
          stage.end_denoise =
              make_attachment("s" + std::to_string(s) + ".end", ins.spec, out_w);
        }
      stages_.push_back(std::move(stage));
      in_w = out_w;
    }

    head_bn_ = BatchNorm(in_w);
    fc_w_ = Tensor({in_w, spec_.classes});
    fc_b_ = Tensor({spec_.classes});

    register_all();
  }

  void register_param(const std::string& name, Tensor& t) {
    params_.emplace_back(name, t);
    t.set_requires_grad(true);
  }
  void register_bn(const std::string& prefix, BatchNorm& bn) {
    register_param(prefix + ".gamma", bn.gamma);
    register_param(prefix + ".beta", bn.beta);
    bns_.emplace_back(prefix, &bn);
  }
  void register_denoise(DenoiseAttachment& dn) {
    const std::string p = dn.site + ".dn";
    register_param(p + ".conv.w", dn.params.conv_w);
    register_param(p + ".conv.b", dn.params.conv_b);
    if (dn.spec.embed) {
      register_param(p + ".theta.w", dn.params.theta_w);
      register_param(p + ".phi.w", dn.params.phi_w);
    }
  }

  void register_all() {
    register_param("stem.w", stem_w_);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
        auto& blk = stages_[s].blocks[b];
        const std::string p =
            "s" + std::to_string(s) + ".b" + std::to_string(b);
        register_bn(p + ".bn1", blk.bn1);
        register_param(p + ".conv1.w", blk.conv1.w);
        register_bn(p + ".bn2", blk.bn2);
        register_param(p + ".conv2.w", blk.conv2.w);
        if (blk.proj) register_param(p + ".proj.w", blk.proj->w);
        if (blk.denoise) register_denoise(*blk.denoise);
      }
      if (stages_[s].end_denoise) register_denoise(*stages_[s].end_denoise);
    }
    register_bn("head.bn", head_bn_);
    register_param("head.fc.w", fc_w_);
    register_param("head.fc.b", fc_b_);
  }

  // Each parameter draws from its own stream keyed by name, so models that
  // share layer names share initial values regardless of what else is in the
  // architecture.
  void init_params() {
    for (auto& [name, t] : params_) {
      Rng rng(splitmix64(seed_ ^ fnv1a64(name)));
      const bool is_conv_w = t.ndim() == 4 && name.find(".dn.") == std::string::npos;
      const bool is_fc_w = name == "head.fc.w";
      const bool is_embed = name.find(".theta.w") != std::string::npos ||
                            name.find(".phi.w") != std::string::npos;
      if (is_embed) {
        const double std = std::sqrt(1.0 / t.dim(1));
        for (auto& v : t.data()) v = static_cast<float>(rng.normal() * std);
      } else if (is_conv_w) {
        const double fan_in =
            static_cast<double>(t.dim(1)) * t.dim(2) * t.dim(3);
        const double std = std::sqrt(2.0 / fan_in);
        for (auto& v : t.data()) v = static_cast<float>(rng.normal() * std);
      } else if (is_fc_w) {
        const double std = std::sqrt(1.0 / t.dim(0));
        for (auto& v : t.data()) v = static_cast<float>(rng.normal() * std);
      }
      // bn gamma/beta and denoise 1x1 weights keep their constructed values
      // (1/0 and 0 respectively); the zero 1x1 makes every denoising block
      // start as the identity.
    }
  }

  ModelSpec spec_;
  std::uint64_t seed_;
  Tensor stem_w_;
  std::vector<Stage> stages_;
  BatchNorm head_bn_;
  Tensor fc_w_, fc_b_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, BatchNorm*>> bns_;
};

}  // namespace fdn
