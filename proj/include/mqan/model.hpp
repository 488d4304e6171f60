// Full model: embedding provider (word table plus hashed character-trigram
// features), encoder, decoder, teacher-forced loss, and greedy decoding over
// the extended vocabulary.

#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mqan/data.hpp"
#include "mqan/decoder.hpp"
#include "mqan/encoder.hpp"
#include "mqan/nn.hpp"

namespace mqan {

struct ModelConfig {
  int word_dim = 300;   // word-vector dimension (pretrained or trained)
  int char_dim = 100;   // hashed character-trigram dimension, 0 disables
  int char_buckets = 2048;
  int d = 200;
  int f = 150;
  int heads = 3;
  int enc_layers = 2;
  int dec_layers = 2;
  int vocab = 50000;    // generative vocabulary size including reserved ids
  int max_len = 120;
  double dropout = 0.2;

  int d_emb() const { return word_dim + char_dim; }
};

// ---------------------------------------------------------------------------
// Embeddings.  The word side is either a trained table over the generative
// vocabulary (out-of-vocabulary words get the zero vector) or frozen
// pretrained vectors loaded from file (missing words get the zero vector).
// The character side hashes boundary-padded trigrams into a trained table
// and averages the hit rows, so unseen words still get a signal.

class EmbeddingProvider {
 public:
  EmbeddingProvider() = default;

  EmbeddingProvider(ParamSet& ps, const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng,
                    const std::unordered_map<std::string, std::vector<double>>* pretrained) {
    word_dim_ = cfg.word_dim;
    char_dim_ = cfg.char_dim;
    char_buckets_ = cfg.char_buckets;
    vocab_ = &vocab;
    if (pretrained) {
      frozen_ = pretrained;
    } else {
      word_table_ = ps.add_weight("emb.word", Shape(vocab.size(), cfg.word_dim), rng);
    }
    if (char_dim_ > 0)
      char_table_ = ps.add_weight("emb.char", Shape(cfg.char_buckets, cfg.char_dim), rng);
  }

  // n x d_emb matrix for lowercased token texts.
  Tensor embed_tokens(Ctx& ctx, const std::vector<std::string>& tokens) const {
    check(!tokens.empty(), "embed_tokens: empty sequence");
    std::vector<Tensor> parts;
    parts.push_back(word_part(ctx, tokens));
    if (char_dim_ > 0) parts.push_back(char_part(ctx, tokens));
    return parts.size() == 1 ? parts[0] : concat_cols(ctx.tape, parts);
  }

  static std::uint64_t trigram_bucket(const std::string& trigram, int buckets) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : trigram) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h % static_cast<std::uint64_t>(buckets);
  }

 private:
  Tensor word_part(Ctx& ctx, const std::vector<std::string>& tokens) const {
    if (frozen_) {
      Tensor out = Tensor::zeros(Shape(static_cast<int>(tokens.size()), word_dim_));
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto it = frozen_->find(ascii_lower(tokens[i]));
        if (it == frozen_->end()) continue;  // zero vector for missing words
        check(static_cast<int>(it->second.size()) == word_dim_,
              "embeddings: vector width mismatch for " + tokens[i]);
        for (int j = 0; j < word_dim_; ++j) out.at(static_cast<int>(i), j) = it->second[static_cast<std::size_t>(j)];
      }
      return out;
    }
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const std::string& t : tokens) {
      std::string w = ascii_lower(t);
      ids.push_back(vocab_->contains(w) ? vocab_->id(w) : -1);  // -1 -> zero row
    }
    return gather_rows(ctx.tape, word_table_, ids);
  }

  Tensor char_part(Ctx& ctx, const std::vector<std::string>& tokens) const {
    std::vector<Tensor> rows;
    rows.reserve(tokens.size());
    for (const std::string& t : tokens) {
      std::string padded = "^" + ascii_lower(t) + "$";
      std::vector<int> buckets;
      for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
        buckets.push_back(static_cast<int>(trigram_bucket(padded.substr(i, 3), char_buckets_)));
      rows.push_back(mean_rows(ctx.tape, gather_rows(ctx.tape, char_table_, buckets)));
    }
    return concat_rows(ctx.tape, rows);
  }

  int word_dim_ = 0;
  int char_dim_ = 0;
  int char_buckets_ = 0;
  const Vocabulary* vocab_ = nullptr;
  Tensor word_table_;
  Tensor char_table_;
  const std::unordered_map<std::string, std::vector<double>>* frozen_ = nullptr;
};

// ---------------------------------------------------------------------------
// Model

struct DecodeResult {
  std::vector<std::string> tokens;                  // surface words, EOS excluded
  std::vector<int> ext_ids;
  std::vector<std::pair<double, double>> switches;  // per emitted step (gamma, lambda)
};

// Greedy pick with exact ties broken toward the lowest id (context ids come
// before question ids before vocabulary ids in the extended layout).
inline int argmax_lowest(const std::vector<double>& probs) {
  check(!probs.empty(), "argmax_lowest: empty distribution");
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i)
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  return best;
}

class MqanModel {
 public:
  MqanModel(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed,
            const std::unordered_map<std::string, std::vector<double>>* pretrained = nullptr)
      : cfg_(cfg), vocab_(std::move(vocab)), pretrained_(pretrained) {
    check(cfg_.vocab == vocab_.size(),
          "model: configured vocabulary size " + std::to_string(cfg_.vocab) +
              " does not match built vocabulary " + std::to_string(vocab_.size()));
    Rng rng(seed);
    emb_ = EmbeddingProvider(params_, cfg_, vocab_, rng, pretrained_);
    EncoderConfig ec{cfg_.d_emb(), cfg_.d, cfg_.f, cfg_.heads, cfg_.enc_layers};
    enc_ = EncoderParams::create(params_, ec, rng);
    DecoderConfig dc{cfg_.d_emb(), cfg_.d, cfg_.f, cfg_.heads, cfg_.dec_layers, cfg_.vocab,
                     cfg_.max_len};
    dec_ = DecoderParams::create(params_, dc, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const EncoderParams& encoder() const { return enc_; }
  const DecoderParams& decoder() const { return dec_; }
  const EmbeddingProvider& embeddings() const { return emb_; }

  ExtVocab ext_vocab(const Example& e) const {
    return ExtVocab::build(vocab_, lowered(e.context_words()), lowered(e.question_words()));
  }

  EncodedPair encode_example(Ctx& ctx, const Example& e) const {
    check(!e.context_tokens.empty(), "encode: empty context");
    check(!e.question_tokens.empty(), "encode: empty question");
    Tensor c_emb = emb_.embed_tokens(ctx, lowered(e.context_words()));
    Tensor q_emb = emb_.embed_tokens(ctx, lowered(e.question_words()));
    return encode(ctx, c_emb, q_emb, enc_);
  }

  // Teacher-forced step distributions.  Decoder inputs are [<init>, a_1 ...
  // a_n]; the target at step t is a_{t+1}, with <eos> as the final target.
  std::vector<OutputDistribution> teacher_forced_steps(Ctx& ctx, const Example& e,
                                                       const EncodedPair& enc,
                                                       const ExtVocab& ext) const {
    std::vector<std::string> answer = lowered(e.answer_words());
    std::vector<Tensor> emb_rows;
    emb_rows.push_back(dec_.init_emb);
    if (!answer.empty()) emb_rows.push_back(emb_.embed_tokens(ctx, answer));
    Tensor a_emb = emb_rows.size() == 1 ? emb_rows[0] : concat_rows(ctx.tape, emb_rows);
    Tensor a_ppr = embed_answer(ctx.tape, a_emb, dec_.w2_proj);
    Tensor a_self = decoder_self_attention(ctx, a_ppr, enc.c_fin, dec_.blocks);

    std::vector<OutputDistribution> steps;
    DecoderState state = DecoderState::initial(cfg_.d);
    for (int t = 0; t < a_self.rows(); ++t) {
      Tensor prev = row_of(ctx.tape, a_self, t);
      steps.push_back(decode_step(ctx, prev, state, enc, dec_, ext));
    }
    return steps;
  }

  std::vector<int> gold_ext_ids(const Example& e, const ExtVocab& ext) const {
    std::vector<int> ids;
    for (const std::string& w : lowered(e.answer_words())) ids.push_back(ext.ext_id(w));
    ids.push_back(ext.eos_ext_id());
    return ids;
  }

  Tensor example_loss(Ctx& ctx, const Example& e, long* clamped = nullptr) const {
    ExtVocab ext = ext_vocab(e);
    EncodedPair enc = encode_example(ctx, e);
    std::vector<OutputDistribution> steps = teacher_forced_steps(ctx, e, enc, ext);
    return nll_loss(ctx.tape, steps, gold_ext_ids(e, ext), clamped);
  }

  // Greedy decoding: argmax over the extended distribution at every step,
  // exact ties broken toward the lowest extended id, stopping at <eos> or
  // max_len.  The self-attention block is re-run over the growing prefix;
  // causal masking makes earlier rows invariant, so the recurrent state
  // carries across steps.
  DecodeResult decode_example(const Example& e, int max_len = -1) const {
    if (max_len < 0) max_len = cfg_.max_len;
    check(max_len >= 1, "decode: max_len must be >= 1");
    Tape tape(false);
    Ctx ctx{tape};
    ExtVocab ext = ext_vocab(e);
    EncodedPair enc = encode_example(ctx, e);

    DecodeResult out;
    std::vector<Tensor> emb_rows = {dec_.init_emb};
    DecoderState state = DecoderState::initial(cfg_.d);
    int eos = ext.eos_ext_id();
    for (int t = 0; t < max_len; ++t) {
      Tensor a_emb = emb_rows.size() == 1 ? emb_rows[0] : concat_rows(tape, emb_rows);
      Tensor a_ppr = embed_answer(tape, a_emb, dec_.w2_proj);
      Tensor a_self = decoder_self_attention(ctx, a_ppr, enc.c_fin, dec_.blocks);
      Tensor prev = row_of(tape, a_self, a_self.rows() - 1);
      OutputDistribution dist = decode_step(ctx, prev, state, enc, dec_, ext);

      int best = argmax_lowest(dist.probs.value());
      out.switches.emplace_back(dist.gamma.item(), dist.lambda.item());
      if (best == eos) break;
      std::string word = ext.word_of(best);
      out.ext_ids.push_back(best);
      out.tokens.push_back(word);
      emb_rows.push_back(emb_.embed_tokens(ctx, {word}));
    }
    return out;
  }

 private:
  static std::vector<std::string> lowered(std::vector<std::string> words) {
    for (std::string& w : words) w = ascii_lower(w);
    return words;
  }

  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamSet params_;
  EmbeddingProvider emb_;
  EncoderParams enc_;
  DecoderParams dec_;
  const std::unordered_map<std::string, std::vector<double>>* pretrained_ = nullptr;
};

}  // namespace mqan
