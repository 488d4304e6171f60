// Differentiable primitives over 2-D tensors: matmul, elementwise math,
// concat/slice, masked softmax, layer norm, dropout, gathers and scatters.
// Each op validates shapes, computes the forward value eagerly and records
// a backward closure when gradients are wanted.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mqan/tensor.hpp"

namespace mqan {

enum class Axis { Rows, Cols };

// Boolean keep-mask over a matrix; entries with keep == 0 are excluded.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> keep;

  bool at(int i, int j) const { return keep[static_cast<std::size_t>(i) * cols + j] != 0; }
};

// Lower-triangular keep-mask: row t attends to columns <= t.
inline Mask causal_mask(int n, int m) {
  Mask mk;
  mk.rows = n;
  mk.cols = m;
  mk.keep.assign(static_cast<std::size_t>(n) * m, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m && j <= i; ++j) mk.keep[static_cast<std::size_t>(i) * m + j] = 1;
  return mk;
}

namespace detail {

inline void check_matrix(const Tensor& t, const char* who) {
  check(t.defined() && t.rank() == 2, std::string(who) + ": expected a rank-2 tensor");
}

inline Tensor make_output(Tape& tape, Shape s, std::initializer_list<Tensor> ins) {
  Tensor out = Tensor::zeros(s);
  if (needs_grad(tape, ins)) out.set_requires_grad(true);
  return out;
}

// C += A * B  where A is (n x k), B is (k x m), all raw row-major buffers.
inline void gemm_acc(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B  where A is (k x n), B is (k x m).
inline void gemm_tn_acc(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int kk = 0; kk < k; ++kk) {
    const double* arow = a + static_cast<std::size_t>(kk) * n;
    const double* brow = b + static_cast<std::size_t>(kk) * m;
    for (int i = 0; i < n; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T  where A is (n x k), B is (m x k).
inline void gemm_nt_acc(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] += s;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  check(a.cols() == b.rows(), "matmul: inner dimensions disagree, " + a.shape().str() + " vs " +
                                  b.shape().str());
  int n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = detail::make_output(tape, Shape(n, m), {a, b});
  detail::gemm_acc(a.value().data(), b.value().data(), out.value().data(), n, k, m);
  if (out.requires_grad()) {
    tape.push("matmul", {a, b}, {out}, [a, b, out, n, k, m]() mutable {
      // dA += dC * B^T ; dB += A^T * dC
      if (a.requires_grad())
        detail::gemm_nt_acc(out.grad().data(), b.value().data(), a.grad().data(), n, m, k);
      if (b.requires_grad())
        detail::gemm_tn_acc(a.value().data(), out.grad().data(), b.grad().data(), k, n, m);
    });
  }
  return out;
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
  detail::check_matrix(x, "transpose");
  int n = x.rows(), m = x.cols();
  Tensor out = detail::make_output(tape, Shape(m, n), {x});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(j, i) = x.at(i, j);
  if (out.requires_grad()) {
    tape.push("transpose", {x}, {out}, [x, out, n, m]() mutable {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) x.grad()[static_cast<std::size_t>(i) * m + j] +=
            out.grad()[static_cast<std::size_t>(j) * n + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <class Fwd, class Bwd>
Tensor elementwise2(Tape& tape, const char* name, const Tensor& a, const Tensor& b, Fwd f, Bwd g) {
  check(a.shape() == b.shape(), std::string(name) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
  Tensor out = make_output(tape, a.shape(), {a, b});
  std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = f(a.value()[i], b.value()[i]);
  if (out.requires_grad()) {
    tape.push(name, {a, b}, {out}, [a, b, out, g, n]() mutable {
      for (std::size_t i = 0; i < n; ++i) {
        auto [da, db] = g(a.value()[i], b.value()[i]);
        if (a.requires_grad()) a.grad()[i] += da * out.grad()[i];
        if (b.requires_grad()) b.grad()[i] += db * out.grad()[i];
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise2(tape, "add", a, b, [](double x, double y) { return x + y; },
                              [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise2(tape, "sub", a, b, [](double x, double y) { return x - y; },
                              [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise2(tape, "mul", a, b, [](double x, double y) { return x * y; },
                              [](double x, double y) { return std::pair<double, double>{y, x}; });
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
  Tensor out = detail::make_output(tape, x.shape(), {x});
  std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = c * x.value()[i];
  if (out.requires_grad()) {
    tape.push("scale", {x}, {out}, [x, out, c, n]() mutable {
      for (std::size_t i = 0; i < n; ++i) x.grad()[i] += c * out.grad()[i];
    });
  }
  return out;
}

// X (n x d) + r broadcast over rows (1 x d).
inline Tensor add_rowvec(Tape& tape, const Tensor& x, const Tensor& r) {
  detail::check_matrix(x, "add_rowvec");
  check(r.rows() == 1 && r.cols() == x.cols(),
        "add_rowvec: row vector shape " + r.shape().str() + " incompatible with " + x.shape().str());
  Tensor out = detail::make_output(tape, x.shape(), {x, r});
  int n = x.rows(), d = x.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) + r.at(0, j);
  if (out.requires_grad()) {
    tape.push("add_rowvec", {x, r}, {out}, [x, r, out, n, d]() mutable {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          double g = out.grad()[static_cast<std::size_t>(i) * d + j];
          if (x.requires_grad()) x.grad()[static_cast<std::size_t>(i) * d + j] += g;
          if (r.requires_grad()) r.grad()[static_cast<std::size_t>(j)] += g;
        }
    });
  }
  return out;
}

namespace detail {

template <class Fwd, class Deriv>
Tensor unary(Tape& tape, const char* name, const Tensor& x, Fwd f, Deriv dfdy) {
  Tensor out = make_output(tape, x.shape(), {x});
  std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = f(x.value()[i]);
  if (out.requires_grad()) {
    tape.push(name, {x}, {out}, [x, out, dfdy, n]() mutable {
      for (std::size_t i = 0; i < n; ++i)
        x.grad()[i] += dfdy(x.value()[i], out.value()[i]) * out.grad()[i];
    });
  }
  return out;
}

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor relu(Tape& tape, const Tensor& x) {
  return detail::unary(tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(Tape& tape, const Tensor& x) {
  return detail::unary(tape, "tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  return detail::unary(tape, "sigmoid", x, detail::stable_sigmoid,
                       [](double, double y) { return y * (1.0 - y); });
}

// 1 - x elementwise; used for the (1 - gamma) and (1 - lambda) switch arms.
inline Tensor one_minus(Tape& tape, const Tensor& x) {
  return detail::unary(tape, "one_minus", x, [](double v) { return 1.0 - v; },
                       [](double, double) { return -1.0; });
}

// log(max(x, eps)); entries at or below eps get zero gradient.  The number of
// clamped entries is reported through *clamped when given.
inline Tensor clamped_log(Tape& tape, const Tensor& x, double eps, long* clamped = nullptr) {
  Tensor out = detail::make_output(tape, x.shape(), {x});
  std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    double v = x.value()[i];
    if (v < eps) {
      if (clamped) ++*clamped;
      v = eps;
    }
    out.value()[i] = std::log(v);
  }
  if (out.requires_grad()) {
    tape.push("clamped_log", {x}, {out}, [x, out, eps, n]() mutable {
      for (std::size_t i = 0; i < n; ++i) {
        double v = x.value()[i];
        if (v >= eps) x.grad()[i] += out.grad()[i] / v;
      }
    });
  }
  return out;
}

inline Tensor sum_all(Tape& tape, const Tensor& x) {
  Tensor out = detail::make_output(tape, Shape(1, 1), {x});
  double s = 0.0;
  for (double v : x.value()) s += v;
  out.value()[0] = s;
  if (out.requires_grad()) {
    std::size_t n = x.numel();
    tape.push("sum_all", {x}, {out}, [x, out, n]() mutable {
      double g = out.grad()[0];
      for (std::size_t i = 0; i < n; ++i) x.grad()[i] += g;
    });
  }
  return out;
}

// Column mean of X: (n x d) -> (1 x d).
inline Tensor mean_rows(Tape& tape, const Tensor& x) {
  detail::check_matrix(x, "mean_rows");
  check(x.rows() >= 1, "mean_rows: empty input");
  int n = x.rows(), d = x.cols();
  Tensor out = detail::make_output(tape, Shape(1, d), {x});
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x.at(i, j);
    out.value()[static_cast<std::size_t>(j)] = s / n;
  }
  if (out.requires_grad()) {
    tape.push("mean_rows", {x}, {out}, [x, out, n, d]() mutable {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          x.grad()[static_cast<std::size_t>(i) * d + j] += out.grad()[static_cast<std::size_t>(j)] / n;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation and slicing

inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  int d = parts[0].cols(), total = 0;
  for (const Tensor& p : parts) {
    detail::check_matrix(p, "concat_rows");
    check(p.cols() == d, "concat_rows: column count mismatch");
    total += p.rows();
  }
  bool grad = false;
  if (tape.enabled())
    for (const Tensor& p : parts)
      if (p.requires_grad()) grad = true;
  Tensor out = Tensor::zeros(Shape(total, d));
  if (grad) out.set_requires_grad(true);
  int r = 0;
  for (const Tensor& p : parts) {
    std::copy(p.value().begin(), p.value().end(),
              out.value().begin() + static_cast<std::ptrdiff_t>(r) * d);
    r += p.rows();
  }
  if (grad) {
    auto parts_copy = parts;
    tape.push("concat_rows", {}, {out}, [parts_copy, out, d]() mutable {
      int r = 0;
      for (Tensor& p : parts_copy) {
        if (p.requires_grad()) {
          std::size_t base = static_cast<std::size_t>(r) * d;
          for (std::size_t i = 0; i < p.numel(); ++i) p.grad()[i] += out.grad()[base + i];
        }
        r += p.rows();
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  int n = parts[0].rows(), total = 0;
  for (const Tensor& p : parts) {
    detail::check_matrix(p, "concat_cols");
    check(p.rows() == n, "concat_cols: row count mismatch");
    total += p.cols();
  }
  bool grad = false;
  if (tape.enabled())
    for (const Tensor& p : parts)
      if (p.requires_grad()) grad = true;
  Tensor out = Tensor::zeros(Shape(n, total));
  if (grad) out.set_requires_grad(true);
  int c = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, c + j) = p.at(i, j);
    c += p.cols();
  }
  if (grad) {
    auto parts_copy = parts;
    tape.push("concat_cols", {}, {out}, [parts_copy, out, n, total]() mutable {
      int c = 0;
      for (Tensor& p : parts_copy) {
        if (p.requires_grad()) {
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < p.cols(); ++j)
              p.grad()[static_cast<std::size_t>(i) * p.cols() + j] +=
                  out.grad()[static_cast<std::size_t>(i) * total + c + j];
        }
        c += p.cols();
      }
    });
  }
  return out;
}

inline Tensor slice_rows(Tape& tape, const Tensor& x, int start, int count) {
  detail::check_matrix(x, "slice_rows");
  check(start >= 0 && count >= 1 && start + count <= x.rows(), "slice_rows: range out of bounds");
  int d = x.cols();
  Tensor out = detail::make_output(tape, Shape(count, d), {x});
  std::copy(x.value().begin() + static_cast<std::ptrdiff_t>(start) * d,
            x.value().begin() + static_cast<std::ptrdiff_t>(start + count) * d, out.value().begin());
  if (out.requires_grad()) {
    tape.push("slice_rows", {x}, {out}, [x, out, start, count, d]() mutable {
      std::size_t base = static_cast<std::size_t>(start) * d;
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * d; ++i)
        x.grad()[base + i] += out.grad()[i];
    });
  }
  return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& x, int start, int count) {
  detail::check_matrix(x, "slice_cols");
  check(start >= 0 && count >= 1 && start + count <= x.cols(), "slice_cols: range out of bounds");
  int n = x.rows(), d = x.cols();
  Tensor out = detail::make_output(tape, Shape(n, count), {x});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < count; ++j) out.at(i, j) = x.at(i, start + j);
  if (out.requires_grad()) {
    tape.push("slice_cols", {x}, {out}, [x, out, start, count, n, d]() mutable {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < count; ++j)
          x.grad()[static_cast<std::size_t>(i) * d + start + j] +=
              out.grad()[static_cast<std::size_t>(i) * count + j];
    });
  }
  return out;
}

inline Tensor row_of(Tape& tape, const Tensor& x, int i) { return slice_rows(tape, x, i, 1); }

// ---------------------------------------------------------------------------
// Softmax with optional keep-mask.
//
// Masking adds kSoftmaxMaskValue to a logit, which underflows its exp term
// to 0.  We realize the same limit directly: masked entries are excluded
// from the max/sum and forced to exactly 0, so downstream values are
// bitwise independent of masked positions for any finite logits.

inline constexpr double kSoftmaxMaskValue = -1e9;

inline Tensor softmax(Tape& tape, const Tensor& x, Axis axis, const Mask* mask = nullptr) {
  detail::check_matrix(x, "softmax");
  if (mask)
    check(mask->rows == x.rows() && mask->cols == x.cols(), "softmax: mask shape mismatch");
  for (double v : x.value()) check(!std::isnan(v), "softmax: NaN input");

  int n = x.rows(), m = x.cols();
  Tensor out = detail::make_output(tape, x.shape(), {x});

  int slices = (axis == Axis::Rows) ? n : m;
  int len = (axis == Axis::Rows) ? m : n;
  auto idx = [&](int s, int t) {
    return axis == Axis::Rows ? static_cast<std::size_t>(s) * m + t
                              : static_cast<std::size_t>(t) * m + s;
  };
  auto keep = [&](int s, int t) {
    if (!mask) return true;
    return axis == Axis::Rows ? mask->at(s, t) : mask->at(t, s);
  };

  for (int s = 0; s < slices; ++s) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < len; ++t)
      if (keep(s, t)) mx = std::max(mx, x.value()[idx(s, t)]);
    check(std::isfinite(mx), "softmax: fully masked slice " + std::to_string(s));
    double sum = 0.0;
    for (int t = 0; t < len; ++t) {
      double e = keep(s, t) ? std::exp(x.value()[idx(s, t)] - mx) : 0.0;
      out.value()[idx(s, t)] = e;
      sum += e;
    }
    for (int t = 0; t < len; ++t) out.value()[idx(s, t)] /= sum;
  }

  if (out.requires_grad()) {
    // Masked entries have output 0, so they drop out of the Jacobian product
    // on their own.
    tape.push("softmax", {x}, {out}, [x, out, axis, m, slices, len]() mutable {
      auto idx = [&](int s, int t) {
        return axis == Axis::Rows ? static_cast<std::size_t>(s) * m + t
                                  : static_cast<std::size_t>(t) * m + s;
      };
      for (int s = 0; s < slices; ++s) {
        double dot = 0.0;
        for (int t = 0; t < len; ++t) dot += out.grad()[idx(s, t)] * out.value()[idx(s, t)];
        for (int t = 0; t < len; ++t) {
          std::size_t k = idx(s, t);
          x.grad()[k] += out.value()[k] * (out.grad()[k] - dot);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization.
//
// Per row: y = (x - mean) / max(std, eps) * gain + bias.  Using a floor
// rather than adding eps to the variance keeps the pre-affine variance at
// exactly 1 for non-degenerate rows while still mapping constant rows to
// zeros.

inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  detail::check_matrix(x, "layer_norm");
  int n = x.rows(), d = x.cols();
  check(d >= 2, "layer_norm: row length must be >= 2");
  check(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d,
        "layer_norm: gain/bias must be 1x" + std::to_string(d));

  Tensor out = detail::make_output(tape, x.shape(), {x, gain, bias});
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  std::vector<double> normed(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = x.at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    double denom = std::max(std::sqrt(var), eps);
    inv_std[static_cast<std::size_t>(i)] = 1.0 / denom;
    for (int j = 0; j < d; ++j) {
      double y = (x.at(i, j) - mean) / denom;
      normed[static_cast<std::size_t>(i) * d + j] = y;
      out.at(i, j) = y * gain.at(0, j) + bias.at(0, j);
    }
  }

  if (out.requires_grad()) {
    tape.push("layer_norm", {x, gain, bias}, {out},
              [x, gain, bias, out, inv_std, normed, n, d, eps]() mutable {
      for (int i = 0; i < n; ++i) {
        double is = inv_std[static_cast<std::size_t>(i)];
        bool floored = is >= 1.0 / eps;  // denom hit the eps floor
        double gdot = 0.0, gydot = 0.0;
        for (int j = 0; j < d; ++j) {
          std::size_t k = static_cast<std::size_t>(i) * d + j;
          double go = out.grad()[k];
          double y = normed[k];
          if (gain.requires_grad()) gain.grad()[static_cast<std::size_t>(j)] += go * y;
          if (bias.requires_grad()) bias.grad()[static_cast<std::size_t>(j)] += go;
          double gy = go * gain.at(0, j);
          gdot += gy;
          gydot += gy * y;
        }
        if (!x.requires_grad()) continue;
        for (int j = 0; j < d; ++j) {
          std::size_t k = static_cast<std::size_t>(i) * d + j;
          double gy = out.grad()[k] * gain.at(0, j);
          double y = normed[k];
          double gx = floored ? is * (gy - gdot / d)
                              : is * (gy - gdot / d - y * gydot / d);
          x.grad()[k] += gx;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inverted dropout: scales kept entries by 1/(1-rate) at train time so that
// evaluation is the identity.  rate 0 or eval mode returns the input handle
// unchanged (bitwise identity).

inline Tensor dropout(Ctx& ctx, const Tensor& x) {
  if (!ctx.training || ctx.dropout <= 0.0) return x;
  check(ctx.dropout < 1.0, "dropout: rate must be < 1");
  check(ctx.rng != nullptr, "dropout: missing rng in training mode");
  double keep = 1.0 - ctx.dropout;
  std::size_t n = x.numel();
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = (ctx.rng->uniform() < keep) ? 1.0 / keep : 0.0;
  Tensor out = detail::make_output(ctx.tape, x.shape(), {x});
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = x.value()[i] * m[i];
  if (out.requires_grad()) {
    ctx.tape.push("dropout", {x}, {out}, [x, out, m, n]() mutable {
      for (std::size_t i = 0; i < n; ++i) x.grad()[i] += m[i] * out.grad()[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gathers and scatters

// Rows of `table` selected by ids; id -1 yields a zero row with no gradient
// (the "missing word maps to the zero vector" rule).
inline Tensor gather_rows(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
  detail::check_matrix(table, "gather_rows");
  check(!ids.empty(), "gather_rows: empty id list");
  int d = table.cols(), rows = table.rows();
  Tensor out = detail::make_output(tape, Shape(static_cast<int>(ids.size()), d), {table});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0) continue;
    check(id < rows, "gather_rows: id out of range");
    std::copy(table.value().begin() + static_cast<std::ptrdiff_t>(id) * d,
              table.value().begin() + static_cast<std::ptrdiff_t>(id + 1) * d,
              out.value().begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  if (out.requires_grad()) {
    tape.push("gather_rows", {table}, {out}, [table, out, ids, d]() mutable {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0) continue;
        for (int j = 0; j < d; ++j)
          table.grad()[static_cast<std::size_t>(id) * d + j] +=
              out.grad()[i * static_cast<std::size_t>(d) + j];
      }
    });
  }
  return out;
}

// Scatter a 1 x k row into a 1 x out_size row: out[target[i]] += x[i].
// Repeated targets accumulate, which is exactly the pointer-sum rule.
inline Tensor scatter_cols(Tape& tape, const Tensor& x, const std::vector<int>& target,
                           int out_size) {
  check(x.rows() == 1, "scatter_cols: expected a row vector");
  check(static_cast<int>(target.size()) == x.cols(), "scatter_cols: target size mismatch");
  Tensor out = detail::make_output(tape, Shape(1, out_size), {x});
  for (std::size_t i = 0; i < target.size(); ++i) {
    check(target[i] >= 0 && target[i] < out_size, "scatter_cols: target out of range");
    out.value()[static_cast<std::size_t>(target[i])] += x.value()[i];
  }
  if (out.requires_grad()) {
    tape.push("scatter_cols", {x}, {out}, [x, out, target]() mutable {
      for (std::size_t i = 0; i < target.size(); ++i)
        x.grad()[i] += out.grad()[static_cast<std::size_t>(target[i])];
    });
  }
  return out;
}

// x * s where s is a 1x1 tensor (scalar switch); both sides receive grads.
inline Tensor scale_by(Tape& tape, const Tensor& x, const Tensor& s) {
  check(s.numel() == 1, "scale_by: scale must be a 1x1 tensor");
  Tensor out = detail::make_output(tape, x.shape(), {x, s});
  double sv = s.value()[0];
  std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = sv * x.value()[i];
  if (out.requires_grad()) {
    tape.push("scale_by", {x, s}, {out}, [x, s, out, n]() mutable {
      double sv = s.value()[0];
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double g = out.grad()[i];
        if (x.requires_grad()) x.grad()[i] += sv * g;
        acc += g * x.value()[i];
      }
      if (s.requires_grad()) s.grad()[0] += acc;
    });
  }
  return out;
}

// Single entry of a row vector as a 1x1 tensor.
inline Tensor pick(Tape& tape, const Tensor& x, int index) {
  check(x.rows() == 1 && index >= 0 && index < x.cols(), "pick: index out of range");
  Tensor out = detail::make_output(tape, Shape(1, 1), {x});
  out.value()[0] = x.value()[static_cast<std::size_t>(index)];
  if (out.requires_grad()) {
    tape.push("pick", {x}, {out}, [x, out, index]() mutable {
      x.grad()[static_cast<std::size_t>(index)] += out.grad()[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention: softmax(X Y^T / sqrt(d)) Z, row-wise softmax
// so each output row is a convex combination of rows of Z.  Attention weight
// dropout sits right before the multiplication by Z.

inline Tensor scaled_dot_attention(Ctx& ctx, const Tensor& x, const Tensor& y, const Tensor& z,
                                   const Mask* mask = nullptr) {
  detail::check_matrix(x, "scaled_dot_attention");
  detail::check_matrix(y, "scaled_dot_attention");
  detail::check_matrix(z, "scaled_dot_attention");
  check(x.cols() == y.cols(), "scaled_dot_attention: query/key dims disagree");
  check(y.rows() == z.rows(), "scaled_dot_attention: key/value row counts disagree");
  check(x.cols() >= 1, "scaled_dot_attention: d must be >= 1");
  Tensor scores = matmul(ctx.tape, x, transpose(ctx.tape, y));
  scores = scale(ctx.tape, scores, 1.0 / std::sqrt(static_cast<double>(x.cols())));
  Tensor w = softmax(ctx.tape, scores, Axis::Rows, mask);
  w = dropout(ctx, w);
  return matmul(ctx.tape, w, z);
}

}  // namespace mqan
