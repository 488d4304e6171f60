// Sequence encoder: shared projection, shared BiLSTM, dummy-token alignment,
// dual coattention, compression BiLSTMs over the concatenated views, stacked
// multi-head self-attention with residual FFN blocks, and final BiLSTMs
// producing C_fin (l x d) and Q_fin (m x d).

#pragma once

#include <string>
#include <vector>

#include "mqan/nn.hpp"
#include "mqan/ops.hpp"

namespace mqan {

struct EncoderConfig {
  int d_emb = 400;
  int d = 200;   // internal model dimension, must be even (d/2 per direction)
  int f = 150;   // FFN hidden dimension
  int heads = 3;
  int layers = 2;  // stacked self-attention blocks
};

struct SelfAttnBlockParams {
  MultiHeadParams mha;
  FfnParams ffn;

  static SelfAttnBlockParams create(ParamSet& ps, const std::string& prefix, int d, int f,
                                    int heads, Rng& rng) {
    return SelfAttnBlockParams{MultiHeadParams::create(ps, prefix + ".mha", d, heads, rng),
                               FfnParams::create(ps, prefix + ".ffn", d, f, rng)};
  }
};

struct EncoderParams {
  Tensor w1;  // d_emb x d, shared between context and question
  BiLstmParams ind;
  Tensor dummy_c, dummy_q;  // trained 1 x d rows prepended after the shared BiLSTM
  BiLstmParams com_c, com_q;
  std::vector<SelfAttnBlockParams> self_c, self_q;
  BiLstmParams fin_c, fin_q;

  static EncoderParams create(ParamSet& ps, const EncoderConfig& cfg, Rng& rng) {
    check(cfg.d % 2 == 0, "encoder: d must be even (d/2 per BiLSTM direction)");
    check(cfg.layers >= 1, "encoder: need at least one self-attention layer");
    EncoderParams p;
    int half = cfg.d / 2;
    p.w1 = ps.add_weight("enc.w1", Shape(cfg.d_emb, cfg.d), rng);
    p.ind = BiLstmParams::create(ps, "enc.ind", cfg.d, half, rng);
    p.dummy_c = ps.add_weight("enc.dummy_c", Shape(1, cfg.d), rng);
    p.dummy_q = ps.add_weight("enc.dummy_q", Shape(1, cfg.d), rng);
    p.com_c = BiLstmParams::create(ps, "enc.com_c", 4 * cfg.d, half, rng);
    p.com_q = BiLstmParams::create(ps, "enc.com_q", 4 * cfg.d, half, rng);
    for (int layer = 0; layer < cfg.layers; ++layer) {
      std::string tag = std::to_string(layer);
      p.self_c.push_back(
          SelfAttnBlockParams::create(ps, "enc.self_c." + tag, cfg.d, cfg.f, cfg.heads, rng));
      p.self_q.push_back(
          SelfAttnBlockParams::create(ps, "enc.self_q." + tag, cfg.d, cfg.f, cfg.heads, rng));
    }
    p.fin_c = BiLstmParams::create(ps, "enc.fin_c", cfg.d, half, rng);
    p.fin_q = BiLstmParams::create(ps, "enc.fin_q", cfg.d, half, rng);
    return p;
  }
};

struct EncodedPair {
  Tensor c_fin;  // l x d
  Tensor q_fin;  // m x d
};

// ---------------------------------------------------------------------------
// Pipeline stages

inline std::pair<Tensor, Tensor> project_inputs(Tape& tape, const Tensor& c_emb,
                                                const Tensor& q_emb, const Tensor& w1) {
  check(c_emb.cols() == w1.rows() && q_emb.cols() == w1.rows(),
        "project_inputs: embedding dim does not match W1");
  return {matmul(tape, c_emb, w1), matmul(tape, q_emb, w1)};
}

inline std::pair<Tensor, Tensor> independent_encode(Ctx& ctx, const Tensor& c_proj,
                                                    const Tensor& q_proj, const BiLstmParams& ind) {
  return {bilstm_encode(ctx, c_proj, ind), bilstm_encode(ctx, q_proj, ind)};
}

// Dummy rows prepended at index 0, then column-normalized dot-product
// alignment in both directions.
struct AlignResult {
  Tensor c_aug;  // (l+1) x d
  Tensor q_aug;  // (m+1) x d
  Tensor s_cq;   // (l+1) x (m+1), columns sum to 1
  Tensor s_qc;   // (m+1) x (l+1), columns sum to 1
};

inline AlignResult align(Tape& tape, const Tensor& c_ind, const Tensor& q_ind,
                         const Tensor& dummy_c, const Tensor& dummy_q) {
  AlignResult r;
  r.c_aug = concat_rows(tape, {dummy_c, c_ind});
  r.q_aug = concat_rows(tape, {dummy_q, q_ind});
  r.s_cq = softmax(tape, matmul(tape, r.c_aug, transpose(tape, r.q_aug)), Axis::Cols);
  r.s_qc = softmax(tape, matmul(tape, r.q_aug, transpose(tape, r.c_aug)), Axis::Cols);
  return r;
}

// Weighted summaries and coattended representations, dummy position dropped
// from every output.  q_sum (l rows) feeds the context-side concatenation and
// c_sum (m rows) the question side.
struct CoattendResult {
  Tensor c_sum;  // m x d
  Tensor q_sum;  // l x d
  Tensor c_coa;  // l x d
  Tensor q_coa;  // m x d
};

inline CoattendResult coattend(Ctx& ctx, const AlignResult& a) {
  Tape& tape = ctx.tape;
  Tensor s_cq_t = transpose(tape, a.s_cq);  // (m+1) x (l+1)
  Tensor s_qc_t = transpose(tape, a.s_qc);  // (l+1) x (m+1)
  Tensor c_sum = matmul(tape, s_cq_t, a.c_aug);  // (m+1) x d
  Tensor q_sum = matmul(tape, s_qc_t, a.q_aug);  // (l+1) x d
  Tensor c_coa = matmul(tape, s_qc_t, c_sum);    // (l+1) x d
  Tensor q_coa = matmul(tape, s_cq_t, q_sum);    // (m+1) x d
  CoattendResult r;
  r.c_sum = dropout(ctx, slice_rows(tape, c_sum, 1, c_sum.rows() - 1));
  r.q_sum = dropout(ctx, slice_rows(tape, q_sum, 1, q_sum.rows() - 1));
  r.c_coa = dropout(ctx, slice_rows(tape, c_coa, 1, c_coa.rows() - 1));
  r.q_coa = dropout(ctx, slice_rows(tape, q_coa, 1, q_coa.rows() - 1));
  return r;
}

// Concatenation order is [proj; ind; other-side sum; coa] along the feature
// axis.
inline Tensor compress_concat(Tape& tape, const Tensor& proj, const Tensor& ind,
                              const Tensor& other_sum, const Tensor& coa) {
  check(proj.rows() == ind.rows() && ind.rows() == other_sum.rows() &&
            other_sum.rows() == coa.rows(),
        "compress: row-count mismatch across representations");
  return concat_cols(tape, {proj, ind, other_sum, coa});
}

inline std::pair<Tensor, Tensor> compress(Ctx& ctx, const Tensor& concat_c,
                                          const Tensor& concat_q, const BiLstmParams& com_c,
                                          const BiLstmParams& com_q) {
  return {bilstm_encode(ctx, concat_c, com_c), bilstm_encode(ctx, concat_q, com_q)};
}

// Per layer: X <- FFN(X + MultiHead(X, X, X)).
inline Tensor self_attend(Ctx& ctx, Tensor x, const std::vector<SelfAttnBlockParams>& blocks) {
  check(!blocks.empty(), "self_attend: need at least one layer");
  for (const SelfAttnBlockParams& block : blocks) {
    Tensor mha = multi_head_attention(ctx, x, x, x, block.mha);
    x = residual_ffn(ctx, add(ctx.tape, x, mha), block.ffn);
  }
  return x;
}

// Full pipeline over embedded sequences.
inline EncodedPair encode(Ctx& ctx, const Tensor& c_emb, const Tensor& q_emb,
                          const EncoderParams& p) {
  check(c_emb.rows() >= 1 && q_emb.rows() >= 1, "encode: empty sequence");
  auto [c_proj, q_proj] = project_inputs(ctx.tape, c_emb, q_emb, p.w1);
  auto [c_ind, q_ind] = independent_encode(ctx, c_proj, q_proj, p.ind);
  AlignResult aligned = align(ctx.tape, c_ind, q_ind, p.dummy_c, p.dummy_q);
  CoattendResult coa = coattend(ctx, aligned);
  Tensor concat_c = compress_concat(ctx.tape, c_proj, c_ind, coa.q_sum, coa.c_coa);
  Tensor concat_q = compress_concat(ctx.tape, q_proj, q_ind, coa.c_sum, coa.q_coa);
  auto [c_com, q_com] = compress(ctx, concat_c, concat_q, p.com_c, p.com_q);
  Tensor c_self = self_attend(ctx, c_com, p.self_c);
  Tensor q_self = self_attend(ctx, q_com, p.self_q);
  EncodedPair out;
  out.c_fin = bilstm_encode(ctx, c_self, p.fin_c);
  out.q_fin = bilstm_encode(ctx, q_self, p.fin_q);
  return out;
}

}  // namespace mqan
