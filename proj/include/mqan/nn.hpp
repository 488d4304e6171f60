// Neural building blocks shared by the encoder and decoder: a named
// parameter registry, fan-scaled initialization, a fused LSTM cell with
// hand-written backward, bidirectional sequence encoding, multi-head
// scaled dot-product attention, the residual feedforward block, and a
// central-difference gradient checker.

#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mqan/ops.hpp"
#include "mqan/tensor.hpp"

namespace mqan {

// ---------------------------------------------------------------------------
// ParamSet: ordered name -> Tensor registry.  Order is insertion order so
// checkpoints and optimizer state are stable across runs.

class ParamSet {
 public:
  // Uniform fan-based init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  Tensor add_weight(const std::string& name, Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
    double fan_in = shape.rank() >= 2 ? shape.rows() : shape.numel();
    double fan_out = shape.rank() >= 2 ? shape.cols() : shape.numel();
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.value()) v = rng.uniform(-a, a);
    insert(name, t);
    return t;
  }

  Tensor add_zeros(const std::string& name, Shape shape) {
    Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
    insert(name, t);
    return t;
  }

  Tensor add_full(const std::string& name, Shape shape, double v) {
    Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
    std::fill(t.value().begin(), t.value().end(), v);
    insert(name, t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "ParamSet: unknown parameter " + name);
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::size_t count() const { return items_.size(); }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items_) std::fill(t.grad().begin(), t.grad().end(), 0.0);
  }

 private:
  void insert(const std::string& name, Tensor t) {
    check(index_.emplace(name, items_.size()).second, "ParamSet: duplicate parameter " + name);
    items_.emplace_back(name, std::move(t));
  }

  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// LSTM.  Standard non-peephole cell, gate order [input; forget; cand; output]
// along the 4h axis, forget-gate bias initialized to 1.

struct LstmParams {
  Tensor w_x;  // in x 4h
  Tensor w_h;  // h x 4h
  Tensor b;    // 1 x 4h
  int hidden = 0;

  static LstmParams create(ParamSet& ps, const std::string& prefix, int in_dim, int hidden,
                           Rng& rng) {
    LstmParams p;
    p.hidden = hidden;
    p.w_x = ps.add_weight(prefix + ".w_x", Shape(in_dim, 4 * hidden), rng);
    p.w_h = ps.add_weight(prefix + ".w_h", Shape(hidden, 4 * hidden), rng);
    p.b = ps.add_zeros(prefix + ".b", Shape(1, 4 * hidden));
    for (int j = 0; j < hidden; ++j) p.b.value()[static_cast<std::size_t>(hidden + j)] = 1.0;
    return p;
  }
};

struct LstmState {
  Tensor h;  // 1 x h
  Tensor c;  // 1 x h

  static LstmState zeros(int hidden) {
    return LstmState{Tensor::zeros(Shape(1, hidden)), Tensor::zeros(Shape(1, hidden))};
  }
};

// One fused step.  x is 1 x in.  Forward caches the gate activations; the
// closure implements the full cell backward in one pass.
inline LstmState lstm_step(Tape& tape, const Tensor& x, const LstmState& state,
                           const LstmParams& p) {
  int h = p.hidden;
  check(x.rows() == 1 && x.cols() == p.w_x.rows(), "lstm_step: input shape mismatch");
  check(state.h.cols() == h && state.c.cols() == h, "lstm_step: state shape mismatch");

  std::vector<double> gates(static_cast<std::size_t>(4) * h);
  for (int j = 0; j < 4 * h; ++j) gates[static_cast<std::size_t>(j)] = p.b.value()[static_cast<std::size_t>(j)];
  detail::gemm_acc(x.value().data(), p.w_x.value().data(), gates.data(), 1, x.cols(), 4 * h);
  detail::gemm_acc(state.h.value().data(), p.w_h.value().data(), gates.data(), 1, h, 4 * h);

  std::vector<double> ig(h), fg(h), cand(h), og(h), tanh_c(h);
  Tensor hn = Tensor::zeros(Shape(1, h));
  Tensor cn = Tensor::zeros(Shape(1, h));
  for (int j = 0; j < h; ++j) {
    ig[static_cast<std::size_t>(j)] = detail::stable_sigmoid(gates[static_cast<std::size_t>(j)]);
    fg[static_cast<std::size_t>(j)] = detail::stable_sigmoid(gates[static_cast<std::size_t>(h + j)]);
    cand[static_cast<std::size_t>(j)] = std::tanh(gates[static_cast<std::size_t>(2 * h + j)]);
    og[static_cast<std::size_t>(j)] = detail::stable_sigmoid(gates[static_cast<std::size_t>(3 * h + j)]);
    double c = fg[static_cast<std::size_t>(j)] * state.c.value()[static_cast<std::size_t>(j)] +
               ig[static_cast<std::size_t>(j)] * cand[static_cast<std::size_t>(j)];
    cn.value()[static_cast<std::size_t>(j)] = c;
    tanh_c[static_cast<std::size_t>(j)] = std::tanh(c);
    hn.value()[static_cast<std::size_t>(j)] = og[static_cast<std::size_t>(j)] * tanh_c[static_cast<std::size_t>(j)];
  }

  if (needs_grad(tape, {x, state.h, state.c, p.w_x, p.w_h, p.b})) {
    hn.set_requires_grad(true);
    cn.set_requires_grad(true);
    Tensor xc = x, hc = state.h, cc = state.c, wx = p.w_x, wh = p.w_h, bc = p.b;
    tape.push("lstm_step", {x, state.h, state.c, p.w_x, p.w_h, p.b}, {hn, cn},
              [xc, hc, cc, wx, wh, bc, hn, cn, ig, fg, cand, og, tanh_c, h]() mutable {
      std::vector<double> dgates(static_cast<std::size_t>(4) * h, 0.0);
      for (int j = 0; j < h; ++j) {
        std::size_t js = static_cast<std::size_t>(j);
        double dh = hn.grad()[js];
        double dc = cn.grad()[js] + dh * og[js] * (1.0 - tanh_c[js] * tanh_c[js]);
        dgates[js] = dc * cand[js] * ig[js] * (1.0 - ig[js]);
        dgates[static_cast<std::size_t>(h) + js] = dc * cc.value()[js] * fg[js] * (1.0 - fg[js]);
        dgates[static_cast<std::size_t>(2 * h) + js] = dc * ig[js] * (1.0 - cand[js] * cand[js]);
        dgates[static_cast<std::size_t>(3 * h) + js] = dh * tanh_c[js] * og[js] * (1.0 - og[js]);
        if (cc.requires_grad()) cc.grad()[js] += dc * fg[js];
      }
      if (xc.requires_grad())
        detail::gemm_nt_acc(dgates.data(), wx.value().data(), xc.grad().data(), 1, 4 * h, xc.cols());
      if (wx.requires_grad())
        detail::gemm_tn_acc(xc.value().data(), dgates.data(), wx.grad().data(), xc.cols(), 1, 4 * h);
      if (hc.requires_grad())
        detail::gemm_nt_acc(dgates.data(), wh.value().data(), hc.grad().data(), 1, 4 * h, h);
      if (wh.requires_grad())
        detail::gemm_tn_acc(hc.value().data(), dgates.data(), wh.grad().data(), h, 1, 4 * h);
      if (bc.requires_grad())
        for (int j = 0; j < 4 * h; ++j) bc.grad()[static_cast<std::size_t>(j)] += dgates[static_cast<std::size_t>(j)];
    });
  }
  return LstmState{hn, cn};
}

// ---------------------------------------------------------------------------
// BiLSTM over a T x in sequence.  Row t of the output is [h_fwd(t); h_bwd(t)],
// so the output width is 2 * hidden.  Dropout is applied once to the input
// sequence ("dropout on inputs to LSTMs").

struct BiLstmParams {
  LstmParams fwd;
  LstmParams bwd;

  static BiLstmParams create(ParamSet& ps, const std::string& prefix, int in_dim, int hidden,
                             Rng& rng) {
    return BiLstmParams{LstmParams::create(ps, prefix + ".fwd", in_dim, hidden, rng),
                        LstmParams::create(ps, prefix + ".bwd", in_dim, hidden, rng)};
  }
};

inline Tensor bilstm_encode(Ctx& ctx, const Tensor& x, const BiLstmParams& p) {
  detail::check_matrix(x, "bilstm_encode");
  int t_len = x.rows();
  check(t_len >= 1, "bilstm_encode: empty sequence");

  Tensor xd = dropout(ctx, x);
  std::vector<Tensor> rows(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t) rows[static_cast<std::size_t>(t)] = row_of(ctx.tape, xd, t);

  std::vector<Tensor> fwd(static_cast<std::size_t>(t_len)), bwd(static_cast<std::size_t>(t_len));
  LstmState s = LstmState::zeros(p.fwd.hidden);
  for (int t = 0; t < t_len; ++t) {
    s = lstm_step(ctx.tape, rows[static_cast<std::size_t>(t)], s, p.fwd);
    fwd[static_cast<std::size_t>(t)] = s.h;
  }
  s = LstmState::zeros(p.bwd.hidden);
  for (int t = t_len - 1; t >= 0; --t) {
    s = lstm_step(ctx.tape, rows[static_cast<std::size_t>(t)], s, p.bwd);
    bwd[static_cast<std::size_t>(t)] = s.h;
  }

  std::vector<Tensor> out_rows(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t)
    out_rows[static_cast<std::size_t>(t)] =
        concat_cols(ctx.tape, {fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]});
  return concat_rows(ctx.tape, out_rows);
}

// ---------------------------------------------------------------------------
// Multi-head attention.  Every per-head projection maps to the full model
// dimension d and the output projection is (p*d) x d.

struct MultiHeadParams {
  std::vector<Tensor> w_x, w_y, w_z;  // p tensors of d x d each
  Tensor w_o;                         // (p*d) x d

  static MultiHeadParams create(ParamSet& ps, const std::string& prefix, int d, int heads,
                                Rng& rng) {
    check(heads >= 1, "multi_head_attention: head count must be >= 1");
    MultiHeadParams p;
    for (int j = 0; j < heads; ++j) {
      std::string h = prefix + ".h" + std::to_string(j);
      p.w_x.push_back(ps.add_weight(h + ".w_x", Shape(d, d), rng));
      p.w_y.push_back(ps.add_weight(h + ".w_y", Shape(d, d), rng));
      p.w_z.push_back(ps.add_weight(h + ".w_z", Shape(d, d), rng));
    }
    p.w_o = ps.add_weight(prefix + ".w_o", Shape(heads * d, d), rng);
    return p;
  }

  int heads() const { return static_cast<int>(w_x.size()); }
};

inline Tensor multi_head_attention(Ctx& ctx, const Tensor& x, const Tensor& y, const Tensor& z,
                                   const MultiHeadParams& p, bool causal = false) {
  check(p.heads() >= 1, "multi_head_attention: head count must be >= 1");
  Mask mask;
  if (causal) mask = causal_mask(x.rows(), y.rows());
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(p.heads()));
  for (int j = 0; j < p.heads(); ++j) {
    Tensor xj = matmul(ctx.tape, x, p.w_x[static_cast<std::size_t>(j)]);
    Tensor yj = matmul(ctx.tape, y, p.w_y[static_cast<std::size_t>(j)]);
    Tensor zj = matmul(ctx.tape, z, p.w_z[static_cast<std::size_t>(j)]);
    heads.push_back(scaled_dot_attention(ctx, xj, yj, zj, causal ? &mask : nullptr));
  }
  Tensor cat = heads.size() == 1 ? heads[0] : concat_cols(ctx.tape, heads);
  return matmul(ctx.tape, cat, p.w_o);
}

// ---------------------------------------------------------------------------
// Residual feedforward block: relu(LN_in(X) U) V + X, then LN on the sum.
// Layer normalization "on the inputs and outputs" is read as normalizing the
// block input and the residual sum.  Dropout sits on the branch before the
// residual add.

struct FfnParams {
  Tensor u;  // d x f
  Tensor v;  // f x d
  Tensor ln_in_g, ln_in_b;
  Tensor ln_out_g, ln_out_b;

  static FfnParams create(ParamSet& ps, const std::string& prefix, int d, int f, Rng& rng) {
    FfnParams p;
    p.u = ps.add_weight(prefix + ".u", Shape(d, f), rng);
    p.v = ps.add_weight(prefix + ".v", Shape(f, d), rng);
    p.ln_in_g = ps.add_full(prefix + ".ln_in.gain", Shape(1, d), 1.0);
    p.ln_in_b = ps.add_zeros(prefix + ".ln_in.bias", Shape(1, d));
    p.ln_out_g = ps.add_full(prefix + ".ln_out.gain", Shape(1, d), 1.0);
    p.ln_out_b = ps.add_zeros(prefix + ".ln_out.bias", Shape(1, d));
    return p;
  }
};

inline Tensor residual_ffn(Ctx& ctx, const Tensor& x, const FfnParams& p) {
  check(x.cols() == p.u.rows(), "residual_ffn: input width does not match U");
  Tensor normed = layer_norm(ctx.tape, x, p.ln_in_g, p.ln_in_b);
  Tensor branch = matmul(ctx.tape, relu(ctx.tape, matmul(ctx.tape, normed, p.u)), p.v);
  branch = dropout(ctx, branch);
  Tensor sum = add(ctx.tape, branch, x);
  return layer_norm(ctx.tape, sum, p.ln_out_g, p.ln_out_b);
}

// ---------------------------------------------------------------------------
// Gradient check.  fn must rebuild the same scalar-valued forward pass on the
// tape it is given (deterministically: no dropout).  Returns the maximum over
// all parameter entries of |analytic - central| / max(1, |central|).

namespace gradcheck_detail {

// One analytic pass: zero the persistent gradient buffers of the tensors
// under check (they outlive individual tapes and would otherwise accumulate
// across repeated checks), run forward and backward once, and snapshot the
// analytic gradients.
inline std::vector<std::vector<double>> analytic_grads(const std::function<Tensor(Tape&)>& fn,
                                                       const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    Tensor t = p;
    std::fill(t.grad().begin(), t.grad().end(), 0.0);
  }
  Tape tape;
  Tensor loss = fn(tape);
  check(loss.numel() == 1, "grad_check: fn must return a scalar");
  check(std::isfinite(loss.item()), "grad_check: non-finite loss");
  tape.backward(loss);
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(Tensor(p).grad());
  return out;
}

inline double numeric_vs_analytic(const std::function<Tensor(Tape&)>& fn, Tensor p,
                                  const std::vector<double>& analytic, double h) {
  auto eval = [&](std::size_t i, double v) {
    double saved = p.value()[i];
    p.value()[i] = v;
    Tape quiet(false);
    double out = fn(quiet).item();
    check(std::isfinite(out), "grad_check: non-finite loss during perturbation");
    p.value()[i] = saved;
    return out;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    double v = p.value()[i];
    double num = (eval(i, v + h) - eval(i, v - h)) / (2.0 * h);
    double rel = std::abs(analytic[i] - num) / std::max(1.0, std::abs(num));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace gradcheck_detail

inline double grad_check(const std::function<Tensor(Tape&)>& fn, const std::vector<Tensor>& params,
                         double h = 1e-6) {
  std::vector<std::vector<double>> analytic = gradcheck_detail::analytic_grads(fn, params);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    worst = std::max(worst,
                     gradcheck_detail::numeric_vs_analytic(fn, params[pi], analytic[pi], h));
  return worst;
}

// Per-parameter variant: the maximum relative error for each named tensor.
inline std::vector<std::pair<std::string, double>> grad_check_by_param(
    const std::function<Tensor(Tape&)>& fn,
    const std::vector<std::pair<std::string, Tensor>>& named, double h = 1e-6) {
  std::vector<Tensor> params;
  for (const auto& [name, tensor] : named) params.push_back(tensor);
  std::vector<std::vector<double>> analytic = gradcheck_detail::analytic_grads(fn, params);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t pi = 0; pi < named.size(); ++pi)
    out.emplace_back(named[pi].first,
                     gradcheck_detail::numeric_vs_analytic(fn, params[pi], analytic[pi], h));
  return out;
}

}  // namespace mqan
