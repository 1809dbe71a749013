#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>

#include <fdnet/common.hpp>

namespace fdn {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <typename T>
class TapeT;

// Shared storage plus autograd attachment. The attachment is generation
// checked: clearing a tape invalidates every slot it handed out without
// touching the tensors themselves.
template <typename T>
struct TensorDataT {
  std::vector<T> v;
  bool requires_grad = false;
  TapeT<T>* tape = nullptr;
  std::uint64_t gen = 0;
  int grad_id = -1;
};

// Dense N-dimensional array of floats. NCHW for 4-D activations. Copies are
// shallow handles; values are treated as immutable once an op produced them
// (the optimizer mutates parameters only between tapes).
template <typename T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        d_(std::make_shared<TensorDataT<T>>()) {
    d_->v.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  TensorT(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        d_(std::make_shared<TensorDataT<T>>()) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_))
      throw ConfigError("tensor: " + std::to_string(values.size()) +
                        " values for shape " + shape_str(shape_));
    d_->v = std::move(values);
  }

  static TensorT scalar(T v) { return TensorT({1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return d_ ? static_cast<std::int64_t>(d_->v.size()) : 0; }

  std::span<T> data() { return {d_->v.data(), d_->v.size()}; }
  std::span<const T> data() const { return {d_->v.data(), d_->v.size()}; }
  T item() const {
    if (numel() != 1) throw UsageError("item(): tensor is not scalar");
    return d_->v[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  TensorT clone() const {
    TensorT out;
    out.shape_ = shape_;
    out.d_ = std::make_shared<TensorDataT<T>>();
    out.d_->v = d_->v;
    return out;
  }

  // Same storage, new shape. Element count must match.
  TensorT view(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ConfigError("view: cannot reshape " + shape_str(shape_) + " to " +
                        shape_str(shape));
    TensorT out;
    out.shape_ = std::move(shape);
    out.d_ = d_;
    return out;
  }

  std::shared_ptr<TensorDataT<T>> impl() const { return d_; }

 private:
  Shape shape_;
  std::shared_ptr<TensorDataT<T>> d_;
};

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (T v : t.data())
    if (!is_finite_value(v)) return false;
  return true;
}

// Ordered record of executed operations. Gradients live in per-slot buffers
// owned by the tape; backward() replays the record in reverse, summing the
// contribution of every consumer into its producers' slots.
template <typename T>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // Attach (or refresh) a gradient slot for `t` on this tape.
  int watch(const TensorT<T>& t) {
    auto d = t.impl();
    if (!d) throw UsageError("watch: undefined tensor");
    if (d->tape == this && d->gen == gen_) return d->grad_id;
    d->tape = this;
    d->gen = gen_;
    d->grad_id = static_cast<int>(grads_.size());
    grads_.emplace_back(d->v.size(), T(0));
    return d->grad_id;
  }

  // Slot id if `t` is attached to this tape's current generation, else -1.
  int slot(const TensorT<T>& t) const {
    auto d = t.impl();
    if (d && d->tape == this && d->gen == gen_) return d->grad_id;
    return -1;
  }

  std::vector<T>& grad(int id) { return grads_[static_cast<std::size_t>(id)]; }

  std::vector<T> grad_of(const TensorT<T>& t) const {
    int id = slot(t);
    if (id < 0) throw UsageError("grad_of: tensor not watched by this tape");
    return grads_[static_cast<std::size_t>(id)];
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  std::size_t size() const { return ops_.size(); }

  void backward(const TensorT<T>& loss) {
    if (ran_backward_)
      throw UsageError("backward: tape already replayed; clear() first");
    if (loss.numel() != 1) throw UsageError("backward: loss is not scalar");
    int id = slot(loss);
    if (id < 0)
      throw UsageError("backward: loss does not depend on any watched tensor");
    grads_[static_cast<std::size_t>(id)][0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ran_backward_ = true;
  }

  void clear() {
    ops_.clear();
    grads_.clear();
    gen_ = next_generation();
    ran_backward_ = false;
  }

  static TapeT*& active_slot() {
    thread_local TapeT* active = nullptr;
    return active;
  }
  static TapeT* active() { return active_slot(); }

 private:
  // Process-unique generation: a fresh tape at a reused address must not
  // validate attachments left behind by a destroyed one.
  static std::uint64_t next_generation() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::vector<std::function<void()>> ops_;
  std::vector<std::vector<T>> grads_;
  std::uint64_t gen_ = next_generation();
  bool ran_backward_ = false;
};

// RAII activation of a tape on the current thread.
template <typename T>
class TapeScopeT {
 public:
  explicit TapeScopeT(TapeT<T>& tape) : prev_(TapeT<T>::active_slot()) {
    TapeT<T>::active_slot() = &tape;
  }
  ~TapeScopeT() { TapeT<T>::active_slot() = prev_; }
  TapeScopeT(const TapeScopeT&) = delete;
  TapeScopeT& operator=(const TapeScopeT&) = delete;

 private:
  TapeT<T>* prev_;
};

namespace detail {

// An input participates in recording if it already has a slot on the tape or
// is a leaf marked requires_grad (watched lazily on first use).
template <typename T>
bool wants_grad(TapeT<T>& tape, const TensorT<T>& t) {
  return t.defined() && (tape.slot(t) >= 0 || t.requires_grad());
}

template <typename T, typename... Ts>
TapeT<T>* recording_tape(const Ts&... inputs) {
  TapeT<T>* tp = TapeT<T>::active();
  if (!tp) return nullptr;
  bool any = (wants_grad(*tp, inputs) || ...);
  return any ? tp : nullptr;
}

// Watch an input only if it participates; -1 tells closures to skip it.
template <typename T>
int watch_if_needed(TapeT<T>& tape, const TensorT<T>& t) {
  return wants_grad(tape, t) ? tape.watch(t) : -1;
}

}  // namespace detail

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using TapeScope = TapeScopeT<float>;

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
  std::vector<To> out(t.data().size());
  auto in = t.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<To>(in[i]);
  return TensorT<To>(t.shape(), std::move(out));
}

}  // namespace fdn
