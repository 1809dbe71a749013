#pragma once

#include <limits>

#include <fdnet/model.hpp>

namespace fdn {

// ---------------------------------------------------------------------------
// L-infinity gradient attacks. Perturbations live on the 0..255 pixel scale;
// any normalization is a layer inside the model.
// ---------------------------------------------------------------------------

struct AttackSpec {
  double epsilon = 16.0;  // max per-pixel change, 0..255 scale
  double alpha = 1.0;     // step size, same units
  int iters = 30;
  enum class Init { Clean, Random } init = Init::Random;
  bool targeted = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
    if (iters < 0) throw ConfigError("attack: iteration count must be >= 0");
    if (iters > 0 && alpha <= 0)
      throw ConfigError("attack: step size must be > 0 when iterating");
  }

  std::string descriptor() const {
    std::ostringstream os;
    os << "pgd(eps=" << epsilon << ",alpha=" << alpha << ",n=" << iters
       << ",init=" << (init == Init::Clean ? "clean" : "random")
       << (targeted ? ",targeted" : ",untargeted") << ")";
    return os.str();
  }

  json to_json() const {
    return json{{"epsilon", epsilon},
                {"alpha", alpha},
                {"iters", iters},
                {"init", init == Init::Clean ? "clean" : "random"},
                {"targeted", targeted},
                {"seed", std::to_string(seed)}};
  }
};

namespace detail {

// Largest float <= v (v finite).
inline float float_floor(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafterf(f, -1e30f);
  return f;
}
// Smallest float >= v.
inline float float_ceil(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) < v) f = std::nextafterf(f, 1e30f);
  return f;
}

// Per-pixel feasible interval: the eps cube around the clean input
// intersected with the value domain, with float endpoints rounded inward so
// the budget holds exactly in double precision.
inline void feasible_bounds(const Tensor& x0, double eps, float domain_lo,
                            float domain_hi, std::vector<float>& lo,
                            std::vector<float>& hi) {
  auto xv = x0.data();
  lo.resize(xv.size());
  hi.resize(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double c = static_cast<double>(xv[i]);
    lo[i] = std::max(float_ceil(c - eps), domain_lo);
    hi[i] = std::min(float_floor(c + eps), domain_hi);
  }
}

}  // namespace detail

// Value domain the iterates must stay in. Pixel attacks use [0,255]; the
// generic core defaults to unbounded.
struct ValueDomain {
  float lo = -std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::max();
};
inline constexpr ValueDomain kPixelDomain{0.0f, 255.0f};
inline constexpr ValueDomain kUnboundedDomain{};

// Asserts the attack contract: max |x_adv - x_clean| <= eps and pixels in
// [0,255], elementwise, evaluated in double precision.
inline void check_linf_budget(const Tensor& x_adv, const Tensor& x_clean,
                              double eps) {
  if (!same_shape(x_adv.shape(), x_clean.shape()))
    throw ProtocolError("budget check: shape mismatch");
  auto a = x_adv.data();
  auto c = x_clean.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(c[i]);
    if (std::abs(d) > eps)
      throw ProtocolError("budget violation: |delta| = " + std::to_string(d) +
                          " > eps = " + std::to_string(eps) + " at element " +
                          std::to_string(i));
    if (a[i] < 0.0f || a[i] > 255.0f)
      throw ProtocolError("budget violation: pixel " + std::to_string(a[i]) +
                          " outside [0,255] at element " + std::to_string(i));
  }
}

// PGD core: gradient ascent on `objective` with signed steps of `alpha`,
// projecting each iterate onto the feasible cube. Returns the final iterate.
// `objective(x)` must return a scalar tensor recorded on the active tape.
template <typename Objective>
Tensor pgd_ascend(Objective objective, const Tensor& x0, const AttackSpec& spec,
                  Rng& rng, ValueDomain domain = kUnboundedDomain) {
  spec.validate();
  std::vector<float> lo, hi;
  detail::feasible_bounds(x0, spec.epsilon, domain.lo, domain.hi, lo, hi);

  Tensor x = x0.clone();
  auto xv = x.data();
  if (spec.init == AttackSpec::Init::Random) {
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const float v =
          xv[i] + static_cast<float>(rng.uniform(-spec.epsilon, spec.epsilon));
      xv[i] = std::min(std::max(v, lo[i]), hi[i]);
    }
  }

  const float step = static_cast<float>(spec.alpha);
  for (int it = 0; it < spec.iters; ++it) {
    Tape tape;
    TapeScope scope(tape);
    Tensor xi = x.clone();
    xi.set_requires_grad(true);
    Tensor loss = objective(xi);
    if (loss.numel() != 1)
      throw UsageError("pgd_ascend: objective is not scalar");
    tape.backward(loss);
    const auto& g = tape.grad(tape.slot(xi));
    for (std::size_t i = 0; i < xv.size(); ++i) {
      float v = xv[i];
      if (g[i] > 0) v += step;
      else if (g[i] < 0) v -= step;
      xv[i] = std::min(std::max(v, lo[i]), hi[i]);
    }
  }
  return x;
}

// Uniform target sampling over {0..K-1} minus the true class.
inline std::vector<int> sample_targets(const std::vector<int>& labels, int k,
                                       Rng& rng) {
  if (k < 2) throw ConfigError("sample_targets: need at least two classes");
  std::vector<int> t(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      throw DataError("sample_targets: label " + std::to_string(labels[i]) +
                      " out of range");
    int draw = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k - 1)));
    if (draw >= labels[i]) ++draw;
    t[i] = draw;
  }
  return t;
}

inline std::vector<int> sample_targets(const std::vector<int>& labels, int k,
                                       std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "targets");
  return sample_targets(labels, k, rng);
}

namespace detail {

// Freeze model parameters for the duration of an attack so the tape only
// tracks the pixel gradient.
class FreezeParams {
 public:
  explicit FreezeParams(Model& m) : m_(m) { m_.set_params_requires_grad(false); }
  ~FreezeParams() { m_.set_params_requires_grad(true); }

 private:
  Model& m_;
};

}  // namespace detail

// PGD body against a model whose parameters the caller already froze
// (requires_grad = false). Safe to run concurrently on disjoint batches.
inline Tensor pgd_attack_frozen(Model& model, const Tensor& x_clean,
                                const std::vector<int>& labels,
                                const AttackSpec& spec, Rng& rng,
                                const std::vector<int>* fixed_targets = nullptr,
                                std::vector<int>* targets_out = nullptr) {
  spec.validate();
  const int k = model.spec().classes;
  if (static_cast<int>(labels.size()) != x_clean.dim(0))
    throw DataError("pgd_attack: label count does not match batch");
  std::vector<int> targets;
  if (spec.targeted) {
    targets = fixed_targets ? *fixed_targets : sample_targets(labels, k, rng);
    if (targets_out) *targets_out = targets;
  }
  auto objective = [&](const Tensor& x) {
    Tensor logits = model.forward(x, Mode::Eval);
    if (spec.targeted)  // descend the target-class loss
      return scale(cross_entropy_smoothed(logits, targets, 0.0), -1.0);
    return cross_entropy_smoothed(logits, labels, 0.0);
  };
  Tensor x_adv = pgd_ascend(objective, x_clean, spec, rng, kPixelDomain);
  check_linf_budget(x_adv, x_clean, spec.epsilon);
  return x_adv;
}

// White-box PGD against a classifier. Untargeted mode ascends the true-class
// loss; targeted mode descends the loss of a uniformly drawn wrong class.
// The model runs in evaluation mode (frozen normalization statistics), so
// the attack is deterministic given (model, inputs, spec, seed).
inline Tensor pgd_attack(Model& model, const Tensor& x_clean,
                         const std::vector<int>& labels, const AttackSpec& spec,
                         Rng& rng, const std::vector<int>* fixed_targets = nullptr,
                         std::vector<int>* targets_out = nullptr) {
  detail::FreezeParams freeze(model);
  return pgd_attack_frozen(model, x_clean, labels, spec, rng, fixed_targets,
                           targets_out);
}

inline Tensor pgd_attack(Model& model, const Tensor& x_clean,
                         const std::vector<int>& labels,
                         const AttackSpec& spec) {
  Rng rng = Rng::derive(spec.seed, "pgd");
  return pgd_attack(model, x_clean, labels, spec, rng);
}

// Single-step attack: PGD with n = 1, alpha = eps, clean init, untargeted.
inline Tensor fgsm_attack(Model& model, const Tensor& x_clean,
                          const std::vector<int>& labels, double eps) {
  AttackSpec spec;
  spec.epsilon = eps;
  spec.alpha = eps > 0 ? eps : 1.0;
  spec.iters = eps > 0 ? 1 : 0;
  spec.init = AttackSpec::Init::Clean;
  spec.targeted = false;
  Rng rng = Rng::derive(spec.seed, "pgd");
  return pgd_attack(model, x_clean, labels, spec, rng);
}

}  // namespace fdn
