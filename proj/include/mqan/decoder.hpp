// Answer decoder: projected answer embeddings plus positional encodings,
// causal multi-head self-attention interleaved with attention over the
// encoded context, an attentional LSTM state, pointer distributions over
// context and question, a generative vocabulary head, and the two-switch
// mixture that produces the final distribution over the extended vocabulary.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mqan/data.hpp"
#include "mqan/encoder.hpp"
#include "mqan/nn.hpp"
#include "mqan/ops.hpp"

namespace mqan {

struct DecoderConfig {
  int d_emb = 400;
  int d = 200;
  int f = 150;
  int heads = 3;
  int layers = 2;
  int vocab = 50000;  // generative vocabulary size (includes reserved ids)
  int max_len = 120;
};

struct DecoderBlockParams {
  MultiHeadParams self_mha;  // causal over the answer prefix
  MultiHeadParams ctx_mha;   // attention over C_fin
  FfnParams ffn;

  static DecoderBlockParams create(ParamSet& ps, const std::string& prefix, int d, int f,
                                   int heads, Rng& rng) {
    return DecoderBlockParams{MultiHeadParams::create(ps, prefix + ".self", d, heads, rng),
                              MultiHeadParams::create(ps, prefix + ".ctx", d, heads, rng),
                              FfnParams::create(ps, prefix + ".ffn", d, f, rng)};
  }
};

struct DecoderParams {
  Tensor w2_proj;  // d_emb x d answer projection (distinct from the attention score matrix)
  std::vector<DecoderBlockParams> blocks;
  LstmParams lstm;        // input [prev; c_tilde] of width 2d, hidden d
  Tensor w2_att, w3;      // d x d attention score matrices for context / question
  Tensor w4, w5;          // 2d x d combiners for the recurrent context / question state
  Tensor w_v;             // d x v vocabulary head (used as c_tilde . w_v)
  Tensor w_pv, w_cq;      // 3d x 1 switch weights
  Tensor init_emb;        // 1 x d_emb initialization-token embedding

  static DecoderParams create(ParamSet& ps, const DecoderConfig& cfg, Rng& rng) {
    check(cfg.vocab >= 1, "decoder: vocabulary must be nonempty");
    check(cfg.layers >= 1, "decoder: need at least one block");
    DecoderParams p;
    p.w2_proj = ps.add_weight("dec.w2_proj", Shape(cfg.d_emb, cfg.d), rng);
    for (int layer = 0; layer < cfg.layers; ++layer)
      p.blocks.push_back(DecoderBlockParams::create(ps, "dec.block." + std::to_string(layer),
                                                    cfg.d, cfg.f, cfg.heads, rng));
    p.lstm = LstmParams::create(ps, "dec.lstm", 2 * cfg.d, cfg.d, rng);
    p.w2_att = ps.add_weight("dec.w2_att", Shape(cfg.d, cfg.d), rng);
    p.w3 = ps.add_weight("dec.w3", Shape(cfg.d, cfg.d), rng);
    p.w4 = ps.add_weight("dec.w4", Shape(2 * cfg.d, cfg.d), rng);
    p.w5 = ps.add_weight("dec.w5", Shape(2 * cfg.d, cfg.d), rng);
    p.w_v = ps.add_weight("dec.w_v", Shape(cfg.d, cfg.vocab), rng);
    p.w_pv = ps.add_weight("dec.w_pv", Shape(3 * cfg.d, 1), rng);
    p.w_cq = ps.add_weight("dec.w_cq", Shape(3 * cfg.d, 1), rng);
    p.init_emb = ps.add_weight("dec.init_emb", Shape(1, cfg.d_emb), rng);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Positional encodings: PE[t, k] = sin(t / 10000^(k/d)) for even k and
// cos(t / 10000^((k-1)/d)) for odd k (paired sin/cos frequencies).

inline Tensor positional_encoding(int n, int d) {
  check(n >= 1 && d >= 1, "positional_encoding: n and d must be >= 1");
  Tensor pe = Tensor::zeros(Shape(n, d));
  for (int t = 0; t < n; ++t)
    for (int k = 0; k < d; ++k) {
      int base = k % 2 == 0 ? k : k - 1;
      double angle = t / std::pow(10000.0, static_cast<double>(base) / d);
      pe.at(t, k) = k % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

// A_ppr = A W2_proj + PE
inline Tensor embed_answer(Tape& tape, const Tensor& a_emb, const Tensor& w2_proj) {
  check(a_emb.cols() == w2_proj.rows(), "embed_answer: embedding dim does not match projection");
  Tensor proj = matmul(tape, a_emb, w2_proj);
  return add(tape, proj, positional_encoding(proj.rows(), proj.cols()));
}

// Per layer: A_mha = causal MultiHead(X, X, X); A_ac = MultiHead(A_mha + X,
// C_fin, C_fin); X <- FFN(A_ac + A_mha + X).  Dropout on each layer input.
inline Tensor decoder_self_attention(Ctx& ctx, Tensor x, const Tensor& c_fin,
                                     const std::vector<DecoderBlockParams>& blocks) {
  check(!blocks.empty(), "decoder_self_attention: need at least one layer");
  for (const DecoderBlockParams& block : blocks) {
    x = dropout(ctx, x);
    Tensor mha = multi_head_attention(ctx, x, x, x, block.self_mha, /*causal=*/true);
    Tensor ac = multi_head_attention(ctx, add(ctx.tape, mha, x), c_fin, c_fin, block.ctx_mha);
    x = residual_ffn(ctx, add(ctx.tape, ac, add(ctx.tape, mha, x)), block.ffn);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Step state and outputs

struct DecoderState {
  LstmState lstm;   // h_{t-1} and cell
  Tensor c_tilde;   // recurrent context state, 1 x d

  static DecoderState initial(int d) {
    return DecoderState{LstmState::zeros(d), Tensor::zeros(Shape(1, d))};
  }
};

struct OutputDistribution {
  Tensor probs;        // 1 x ext_size, sums to 1
  Tensor gamma;        // 1 x 1 in [0, 1], weight on the generative vocabulary
  Tensor lambda;       // 1 x 1 in [0, 1], context-vs-question split
};

// The two-switch mixture over the extended id space:
//   p = gamma * p_v + (1 - gamma) * (lambda * p_c + (1 - lambda) * p_q)
// where p_c / p_q scatter attention mass by token identity (repeated words
// accumulate) and p_v scatters vocabulary probabilities.  Missing entries of
// each component are zero.
inline Tensor mix_distributions(Tape& tape, const Tensor& p_v, const Tensor& alpha_c,
                                const Tensor& alpha_q, const Tensor& gamma, const Tensor& lambda,
                                const ExtVocab& ext) {
  int e = ext.size();
  Tensor ext_pv = scatter_cols(tape, p_v, ext.vocab_to_ext, e);
  Tensor ext_pc = scatter_cols(tape, alpha_c, ext.context_ext, e);
  Tensor ext_pq = scatter_cols(tape, alpha_q, ext.question_ext, e);
  Tensor inv_gamma = one_minus(tape, gamma);
  Tensor inv_lambda = one_minus(tape, lambda);
  Tensor pointer = add(tape, scale_by(tape, ext_pc, lambda), scale_by(tape, ext_pq, inv_lambda));
  return add(tape, scale_by(tape, ext_pv, gamma), scale_by(tape, pointer, inv_gamma));
}

// One decoding step.  prev is the self-attended representation of the
// previous answer token (1 x d).
inline OutputDistribution decode_step(Ctx& ctx, const Tensor& prev, DecoderState& state,
                                      const EncodedPair& enc, const DecoderParams& p,
                                      const ExtVocab& ext) {
  Tape& tape = ctx.tape;
  check(enc.c_fin.rows() >= 1, "decode_step: empty context");
  check(enc.q_fin.rows() >= 1, "decode_step: empty question");

  // h_t = LSTM([prev; c_tilde_{t-1}], h_{t-1})
  Tensor lstm_in = concat_cols(tape, {prev, state.c_tilde});
  state.lstm = lstm_step(tape, lstm_in, state.lstm, p.lstm);
  Tensor h = state.lstm.h;  // 1 x d

  // Attention over the encoded context and question: softmax(C_fin W h).
  Tensor hc = matmul(tape, h, p.w2_att);  // 1 x d
  Tensor alpha_c = softmax(tape, matmul(tape, enc.c_fin, transpose(tape, hc)), Axis::Cols);  // l x 1
  Tensor hq = matmul(tape, h, p.w3);
  Tensor alpha_q = softmax(tape, matmul(tape, enc.q_fin, transpose(tape, hq)), Axis::Cols);  // m x 1

  // Recurrent context / question states from the attention-weighted reads.
  Tensor alpha_c_row = transpose(tape, alpha_c);             // 1 x l
  Tensor alpha_q_row = transpose(tape, alpha_q);             // 1 x m
  Tensor c_read = matmul(tape, alpha_c_row, enc.c_fin);      // 1 x d
  Tensor q_read = matmul(tape, alpha_q_row, enc.q_fin);      // 1 x d
  state.c_tilde = tanh(tape, matmul(tape, concat_cols(tape, {c_read, h}), p.w4));
  Tensor q_tilde = tanh(tape, matmul(tape, concat_cols(tape, {q_read, h}), p.w5));

  // Distributions and switches.
  Tensor p_v = softmax(tape, matmul(tape, state.c_tilde, p.w_v), Axis::Rows);  // 1 x v
  Tensor switch_in_v = concat_cols(tape, {state.c_tilde, h, prev});
  Tensor gamma = sigmoid(tape, matmul(tape, switch_in_v, p.w_pv));
  Tensor switch_in_q = concat_cols(tape, {q_tilde, h, prev});
  Tensor lambda = sigmoid(tape, matmul(tape, switch_in_q, p.w_cq));

  OutputDistribution out;
  out.gamma = gamma;
  out.lambda = lambda;
  out.probs = mix_distributions(tape, p_v, alpha_c_row, alpha_q_row, gamma, lambda, ext);
  return out;
}

// ---------------------------------------------------------------------------
// Loss: token-level negative log-likelihood summed over steps.  Gold
// probabilities below the clamp are floored at 1e-12; the clamp count is
// surfaced so training can flag it.

inline constexpr double kProbClamp = 1e-12;

inline Tensor nll_loss(Tape& tape, const std::vector<OutputDistribution>& steps,
                       const std::vector<int>& gold_ext_ids, long* clamped = nullptr) {
  check(steps.size() == gold_ext_ids.size(), "nll_loss: step/gold count mismatch");
  check(!steps.empty(), "nll_loss: no steps");
  std::vector<Tensor> terms;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    check(gold_ext_ids[t] >= 0 && gold_ext_ids[t] < steps[t].probs.cols(),
          "nll_loss: gold id outside the extended space at step " + std::to_string(t));
    Tensor pt = pick(tape, steps[t].probs, gold_ext_ids[t]);
    terms.push_back(clamped_log(tape, pt, kProbClamp, clamped));
  }
  Tensor total = terms[0];
  for (std::size_t t = 1; t < terms.size(); ++t) total = add(tape, total, terms[t]);
  return scale(tape, total, -1.0);
}

// ---------------------------------------------------------------------------
// Pointer usage: mean generation, context-pointer, and question-pointer
// weights over decoded steps.  The three means sum to 1.

struct PointerUsage {
  double generation = 0.0;  // mean gamma
  double context = 0.0;     // mean (1 - gamma) * lambda
  double question = 0.0;    // mean (1 - gamma) * (1 - lambda)
  long steps = 0;
};

inline PointerUsage pointer_usage_stats(const std::vector<std::pair<double, double>>& gl_steps) {
  check(!gl_steps.empty(), "pointer_usage_stats: no decoded steps");
  PointerUsage u;
  for (const auto& [gamma, lambda] : gl_steps) {
    u.generation += gamma;
    u.context += (1.0 - gamma) * lambda;
    u.question += (1.0 - gamma) * (1.0 - lambda);
  }
  double n = static_cast<double>(gl_steps.size());
  u.generation /= n;
  u.context /= n;
  u.question /= n;
  u.steps = static_cast<long>(gl_steps.size());
  return u;
}

}  // namespace mqan
