#pragma once

#include <chrono>
#include <functional>
#include <mutex>
#include <thread>

#include <fdnet/attack.hpp>
#include <fdnet/dataset.hpp>

namespace fdn {

// One SGD update with classical momentum and L2 weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad,
              std::span<T> velocity, double lr, double momentum,
              double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw ConfigError("sgd_step: size mismatch");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = static_cast<T>(momentum * velocity[i] + grad[i] +
                                 weight_decay * param[i]);
    param[i] = static_cast<T>(param[i] - lr * velocity[i]);
  }
}

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double label_smoothing = 0.1;
  // x0.1 drops at these fractions of the total epoch budget (the 35/70/95 of
  // a 110-epoch schedule).
  std::vector<double> lr_drop_fracs = {35.0 / 110.0, 70.0 / 110.0, 95.0 / 110.0};
  bool adversarial = true;
  AttackSpec attack{.epsilon = 16.0,
                    .alpha = 4.0,
                    .iters = 5,
                    .init = AttackSpec::Init::Random,
                    .targeted = true,
                    .seed = 0};
  double clean_init_ratio = 0.2;  // fraction of batches with clean PGD init
  int shards = 1;
  std::uint64_t seed = 0;
  bool track_clean_val = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be positive");
    if (batch_size < 2) throw ConfigError("train: batch size must be >= 2");
    if (lr <= 0) throw ConfigError("train: learning rate must be positive");
    if (clean_init_ratio < 0 || clean_init_ratio > 1)
      throw ConfigError("train: clean_init_ratio must be in [0,1]");
    if (shards < 1) throw ConfigError("train: shards must be >= 1");
    double prev = 0;
    for (double f : lr_drop_fracs) {
      if (f <= prev || f >= 1)
        throw ConfigError("train: lr drop fractions must ascend within (0,1)");
      prev = f;
    }
    attack.validate();
  }

  double lr_at_epoch(int epoch) const {
    double v = lr;
    for (double f : lr_drop_fracs)
      if (epoch >= static_cast<int>(f * epochs)) v *= 0.1;
    return v;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  double adv_acc = 0;    // accuracy on the perturbed training batches
  double clean_acc = -1; // clean validation accuracy, -1 if not tracked
  double wall_time = 0;  // seconds

  json to_json() const {
    json j;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["loss"] = loss;
    j["adv_acc"] = adv_acc;
    j["clean_acc"] = clean_acc;
    j["wall_time"] = wall_time;
    return j;
  }
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  double clean_init_fraction = 0;  // observed share of clean-init batches
  std::int64_t batches = 0;
};

// Plain evaluation-mode accuracy, batched.
inline double eval_accuracy(Model& model, const Dataset& data,
                            int batch_size = 128) {
  std::int64_t correct = 0;
  const std::int64_t n = data.count();
  for (std::int64_t at = 0; at < n; at += batch_size) {
    const std::int64_t take = std::min<std::int64_t>(batch_size, n - at);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
    for (std::int64_t i = 0; i < take; ++i) idx[static_cast<std::size_t>(i)] = at + i;
    Tensor x = data.gather_images(idx);
    auto labels = data.gather_labels(idx);
    Tensor logits = model.forward(x, Mode::Eval);
    auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// Adversarial training: every optimizer step runs on attacker-generated
// examples only (clean batches never reach the update), with the PGD init
// mixed between clean and random starts. Deterministic given the config.
inline TrainResult train(Model& model, const Dataset& train_set,
                         const Dataset* val_set, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& sink = {},
                         OptState* opt_state = nullptr) {
  cfg.validate();
  train_set.validate();

  Rng shuffle_rng = Rng::derive(cfg.seed, "shuffle");
  Rng attack_rng = Rng::derive(cfg.seed, "attack");

  // Momentum buffers, keyed like the parameters.
  OptState velocity;
  if (opt_state && !opt_state->empty()) velocity = *opt_state;
  for (auto& [name, t] : model.params())
    if (velocity.find(name) == velocity.end())
      velocity[name].assign(static_cast<std::size_t>(t.numel()), 0.0f);

  TrainResult result;
  std::int64_t clean_init_batches = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cfg.lr_at_epoch(epoch);
    auto order = permutation(train_set.count(), shuffle_rng);

    double loss_sum = 0;
    std::int64_t loss_batches = 0;
    std::int64_t adv_correct = 0, adv_total = 0;

    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t take =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                order.size() - at);
      if (take < 2) continue;  // batch-norm needs two samples
      std::span<const std::int64_t> idx(order.data() + at, take);
      Tensor x = train_set.gather_images(idx);
      auto labels = train_set.gather_labels(idx);

      Tensor x_train = x;
      if (cfg.adversarial) {
        AttackSpec spec = cfg.attack;
        const bool clean_init = attack_rng.uniform01() < cfg.clean_init_ratio;
        spec.init = clean_init ? AttackSpec::Init::Clean
                               : AttackSpec::Init::Random;
        if (clean_init) ++clean_init_batches;
        const std::uint64_t batch_seed = attack_rng.bits();

        std::vector<int> targets;
        if (spec.targeted) {
          Rng trng = Rng::derive(batch_seed, "targets");
          targets = sample_targets(labels, model.spec().classes, trng);
        }

        const int nshards = std::min<int>(cfg.shards, static_cast<int>(take) / 2);
        if (nshards <= 1) {
          Rng arng = Rng::derive(batch_seed, "shard0");
          x_train = pgd_attack(model, x, labels, spec, arng,
                               spec.targeted ? &targets : nullptr);
        } else {
          // Shards attack disjoint slices concurrently against the frozen
          // read-only model; the weight update below stays single-writer.
          model.set_params_requires_grad(false);
          x_train = Tensor(x.shape());
          std::vector<std::thread> pool;
          const std::size_t per = (take + static_cast<std::size_t>(nshards) - 1) /
                                  static_cast<std::size_t>(nshards);
          const std::size_t stride = static_cast<std::size_t>(x.numel()) / take;
          std::exception_ptr err;
          std::mutex err_mu;
          for (int s = 0; s < nshards; ++s) {
            pool.emplace_back([&, s] {
              try {
                const std::size_t b0 = static_cast<std::size_t>(s) * per;
                if (b0 >= take) return;
                const std::size_t b1 = std::min(take, b0 + per);
                std::vector<std::int64_t> sub(b1 - b0);
                for (std::size_t i = 0; i < sub.size(); ++i)
                  sub[i] = static_cast<std::int64_t>(b0 + i);
                Tensor xs({static_cast<int>(sub.size()), x.dim(1), x.dim(2),
                           x.dim(3)});
                std::copy_n(x.data().data() + b0 * stride, sub.size() * stride,
                            xs.data().data());
                std::vector<int> ls(labels.begin() + static_cast<std::ptrdiff_t>(b0),
                                    labels.begin() + static_cast<std::ptrdiff_t>(b1));
                std::vector<int> ts;
                if (spec.targeted)
                  ts.assign(targets.begin() + static_cast<std::ptrdiff_t>(b0),
                            targets.begin() + static_cast<std::ptrdiff_t>(b1));
                Rng arng = Rng::derive(batch_seed, "shard" + std::to_string(s));
                Tensor adv = pgd_attack_frozen(model, xs, ls, spec, arng,
                                               spec.targeted ? &ts : nullptr);
                std::copy_n(adv.data().data(), adv.data().size(),
                            x_train.data().data() + b0 * stride);
              } catch (...) {
                std::lock_guard<std::mutex> g(err_mu);
                if (!err) err = std::current_exception();
              }
            });
          }
          for (auto& t : pool) t.join();
          model.set_params_requires_grad(true);
          if (err) std::rethrow_exception(err);
        }
        check_linf_budget(x_train, x, spec.epsilon);
      }

      // One SGD step on the (adversarial) batch with the true labels.
      Tape tape;
      float loss_val;
      {
        TapeScope scope(tape);
        Tensor logits = model.forward(x_train, Mode::Train);
        Tensor loss =
            cross_entropy_smoothed(logits, labels, cfg.label_smoothing);
        loss_val = loss.item();
        if (!is_finite_value(loss_val))
          throw DivergedError(
              "non-finite training loss at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(at / static_cast<std::size_t>(cfg.batch_size)) +
              " (lr=" + std::to_string(lr) + ")");
        tape.backward(loss);
        auto pred = argmax_rows(logits);
        for (std::size_t i = 0; i < pred.size(); ++i)
          if (pred[i] == labels[i]) ++adv_correct;
        adv_total += static_cast<std::int64_t>(pred.size());
      }
      for (auto& [name, t] : model.params()) {
        const int slot = tape.slot(t);
        if (slot < 0) continue;
        sgd_step<float>(t.data(), tape.grad(slot), velocity[name], lr,
                        cfg.momentum, cfg.weight_decay);
      }
      loss_sum += loss_val;
      ++loss_batches;
      ++result.batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    m.adv_acc = adv_total ? static_cast<double>(adv_correct) /
                                static_cast<double>(adv_total)
                          : 0.0;
    if (val_set && cfg.track_clean_val)
      m.clean_acc = eval_accuracy(model, *val_set);
    m.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (sink) sink(m);
    result.epochs.push_back(m);
  }

  result.clean_init_fraction =
      result.batches ? static_cast<double>(clean_init_batches) /
                           static_cast<double>(result.batches)
                     : 0.0;
  if (opt_state) *opt_state = std::move(velocity);
  return result;
}

}  // namespace fdn
