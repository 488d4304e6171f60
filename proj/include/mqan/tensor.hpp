// Dense rank<=3 tensors with reverse-mode autodiff on an explicit tape.
//
// A Tensor is a cheap handle (shared_ptr) to a value buffer plus an optional
// gradient buffer of the same shape.  Operations live in ops.hpp; each op
// computes its result eagerly and, when the tape is recording and any input
// requires gradients, pushes a backward closure onto the tape.  Calling
// Tape::backward(loss) replays the closures in reverse, accumulating into
// the .grad buffers.  A graph and its tape are single-threaded by contract;
// read-only tensors may be shared across threads.

#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mqan {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

// ---------------------------------------------------------------------------
// Shape

class Shape {
 public:
  Shape() = default;
  explicit Shape(int a) : d_{a, 0, 0}, rank_(1) { check(a >= 0, "Shape: negative extent"); }
  Shape(int a, int b) : d_{a, b, 0}, rank_(2) { check(a >= 0 && b >= 0, "Shape: negative extent"); }
  Shape(int a, int b, int c) : d_{a, b, c}, rank_(3) {
    check(a >= 0 && b >= 0 && c >= 0, "Shape: negative extent");
  }

  int rank() const { return rank_; }
  int dim(int i) const { return i < rank_ ? d_[static_cast<std::size_t>(i)] : 1; }
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(d_[static_cast<std::size_t>(i)]);
    return rank_ == 0 ? 0 : n;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (d_[static_cast<std::size_t>(i)] != o.d_[static_cast<std::size_t>(i)]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string(d_[static_cast<std::size_t>(i)]);
    }
    return s + ")";
  }

 private:
  std::array<int, 3> d_{0, 0, 0};
  int rank_ = 0;
};

// ---------------------------------------------------------------------------
// Tensor

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until ensure_grad()
  bool requires_grad = false;
  std::uint64_t id = 0;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = s;
    t.impl_->value.assign(s.numel(), 0.0);
    t.impl_->requires_grad = requires_grad;
    t.impl_->id = next_tensor_id();
    if (requires_grad) t.impl_->ensure_grad();
    return t;
  }

  static Tensor full(Shape s, double v) {
    Tensor t = zeros(s);
    for (double& x : t.impl_->value) x = v;
    return t;
  }

  static Tensor of(Shape s, std::vector<double> data) {
    check(data.size() == s.numel(), "Tensor::of: data length " + std::to_string(data.size()) +
                                        " does not match shape " + s.str());
    Tensor t = zeros(s);
    t.impl_->value = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return of(Shape(1, 1), {v}); }

  static Tensor row(std::vector<double> data) {
    int n = static_cast<int>(data.size());
    return of(Shape(1, n), std::move(data));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return impl_->shape.rank(); }
  int rows() const { return impl_->shape.rows(); }
  int cols() const { return impl_->shape.cols(); }
  std::size_t numel() const { return impl_->value.size(); }
  std::uint64_t id() const { return impl_->id; }

  // Tensor is a handle; accessors are const even when they expose mutable
  // storage, the way a shared_ptr's operator* is.
  std::vector<double>& value() const { return impl_->value; }
  std::vector<double>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }

  double& at(int i, int j) const { return impl_->value[static_cast<std::size_t>(i) * cols() + j]; }
  double item() const {
    check(numel() == 1, "Tensor::item: not a scalar, shape " + shape().str());
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) const {
    impl_->requires_grad = b;
    if (b) impl_->ensure_grad();
  }

  bool all_finite() const {
    for (double v : impl_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape

struct TapeOp {
  const char* name;
  std::vector<std::uint64_t> inputs;
  std::vector<std::uint64_t> outputs;
  std::function<void()> backward;
};

class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }
  void set_enabled(bool b) { enabled_ = b; }

  void push(const char* name, std::initializer_list<Tensor> ins, std::initializer_list<Tensor> outs,
            std::function<void()> backward) {
    TapeOp op;
    op.name = name;
    for (const Tensor& t : ins) op.inputs.push_back(t.id());
    for (const Tensor& t : outs) op.outputs.push_back(t.id());
    op.backward = std::move(backward);
    ops_.push_back(std::move(op));
  }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded op in reverse.
  void backward(const Tensor& loss) {
    check(loss.numel() == 1, "Tape::backward: loss must be scalar");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
  }

  std::size_t size() const { return ops_.size(); }
  const std::vector<TapeOp>& ops() const { return ops_; }
  void clear() { ops_.clear(); }

 private:
  std::vector<TapeOp> ops_;
  bool enabled_ = true;
};

// Whether an op on these inputs should record a backward closure.
inline bool needs_grad(const Tape& tape, std::initializer_list<Tensor> ins) {
  if (!tape.enabled()) return false;
  for (const Tensor& t : ins)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Rng: deterministic across platforms (no std::*_distribution involved).

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    check(hi >= lo, "Rng::uniform_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next() % span);
  }

  // Derived deterministic stream.
  Rng fork(std::uint64_t stream) {
    return Rng(next() ^ (stream * 0x9e3779b97f4a7c15ull) ^ 0x853c49e6748fea9bull);
  }

 private:
  std::mt19937_64 gen_;
};

// Forward-pass context threaded through every module: the tape plus the
// dropout regime.  Evaluation passes use {tape_disabled, false, 0, nullptr}.
struct Ctx {
  Tape& tape;
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

}  // namespace mqan
