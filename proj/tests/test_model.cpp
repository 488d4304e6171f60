// Full-model tests: teacher-forcing causality, end-to-end gradients through
// embeddings, encoder and decoder, greedy decoding totality and tie-breaks,
// determinism, and independence from batch padding.

#include <gtest/gtest.h>

#include "mqan/model.hpp"

using namespace mqan;

namespace {

ModelConfig toy_config(int vocab_size) {
  ModelConfig cfg;
  cfg.word_dim = 3;
  cfg.char_dim = 2;
  cfg.char_buckets = 16;
  cfg.d = 4;
  cfg.f = 3;
  cfg.heads = 1;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.vocab = vocab_size;
  cfg.max_len = 12;
  cfg.dropout = 0.2;
  return cfg;
}

struct ModelFixture {
  Vocabulary vocab;
  MqanModel model;

  explicit ModelFixture(std::uint64_t seed = 0)
      : vocab(Vocabulary::build({{"a", "b", "c", "d", "e", "a", "b"}}, 8)),
        model(toy_config(vocab.size()), vocab, seed) {}
};

}  // namespace

TEST(Model, TeacherForcedCausalityBitwise) {
  ModelFixture fx;
  Example base = Example::make("t", "a b c", "copy b", "b c d");
  Example changed = Example::make("t", "a b c", "copy b", "b c e");  // gold differs at position 2

  auto run_steps = [&](const Example& e) {
    Tape tape;
    Ctx ctx{tape};
    ExtVocab ext = fx.model.ext_vocab(e);
    EncodedPair enc = fx.model.encode_example(ctx, e);
    return fx.model.teacher_forced_steps(ctx, e, enc, ext);
  };
  std::vector<OutputDistribution> s1 = run_steps(base);
  std::vector<OutputDistribution> s2 = run_steps(changed);
  ASSERT_EQ(s1.size(), s2.size());  // 3 tokens + eos target
  // Steps 0, 1 and 2 depend only on gold positions < t, so they are bitwise
  // identical; step 3 (predicting eos after the changed token) may differ.
  for (int t = 0; t <= 2; ++t) {
    ASSERT_EQ(s1[static_cast<std::size_t>(t)].probs.numel(), s2[static_cast<std::size_t>(t)].probs.numel());
    for (std::size_t i = 0; i < s1[static_cast<std::size_t>(t)].probs.numel(); ++i)
      EXPECT_EQ(s1[static_cast<std::size_t>(t)].probs.value()[i], s2[static_cast<std::size_t>(t)].probs.value()[i]);
  }
}

TEST(Model, FullModelGradCheck) {
  ModelFixture fx(3);
  Example e = Example::make("t", "a b", "c d", "b a");
  std::vector<Tensor> params;
  for (auto& [name, t] : fx.model.params().items()) params.push_back(t);
  double err = grad_check(
      [&](Tape& t) {
        Ctx ctx{t};
        return fx.model.example_loss(ctx, e);
      },
      params);
  EXPECT_LT(err, 1e-4);
}

TEST(Model, LossIsFiniteAndDeterministic) {
  ModelFixture fx(1);
  Example e = Example::make("t", "a b c", "copy span 1 2", "a b");
  auto loss_of = [&]() {
    Tape tape;
    Ctx ctx{tape};
    return fx.model.example_loss(ctx, e).item();
  };
  double l1 = loss_of(), l2 = loss_of();
  EXPECT_TRUE(std::isfinite(l1));
  EXPECT_EQ(l1, l2);

  // Identical seeds rebuild bitwise-identical models.
  ModelFixture fy(1);
  Tape tape;
  Ctx ctx{tape};
  EXPECT_EQ(fy.model.example_loss(ctx, e).item(), l1);
}

TEST(Model, EncodeDeterministicPair) {
  ModelFixture fx(5);
  Example e = Example::make("t", "a b c d e", "c b a", "a");
  Tape t1(false), t2(false);
  Ctx c1{t1}, c2{t2};
  EncodedPair p1 = fx.model.encode_example(c1, e);
  EncodedPair p2 = fx.model.encode_example(c2, e);
  EXPECT_EQ(p1.c_fin.rows(), 5);
  EXPECT_EQ(p1.q_fin.rows(), 3);
  for (std::size_t i = 0; i < p1.c_fin.numel(); ++i)
    EXPECT_EQ(p1.c_fin.value()[i], p2.c_fin.value()[i]);
}

TEST(Model, GreedyDecodeTotality) {
  ModelFixture fx(7);
  Example e = Example::make("t", "a b c", "copy span 1 2", "a b");
  DecodeResult r = fx.model.decode_example(e);
  EXPECT_LE(static_cast<int>(r.tokens.size()), fx.model.config().max_len);
  EXPECT_EQ(r.tokens.size(), r.ext_ids.size());
  // One switch record per decoding step (including the terminating one).
  EXPECT_GE(r.switches.size(), r.tokens.size());
  ExtVocab ext = fx.model.ext_vocab(e);
  for (std::size_t i = 0; i < r.tokens.size(); ++i)
    EXPECT_EQ(ext.word_of(r.ext_ids[i]), r.tokens[i]);
  for (const auto& [g, l] : r.switches) {
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
  }
}

TEST(Model, ArgmaxTieBreaksToLowestId) {
  EXPECT_EQ(argmax_lowest({0.1, 0.4, 0.4, 0.1}), 1);
  EXPECT_EQ(argmax_lowest({0.5, 0.5}), 0);
  EXPECT_EQ(argmax_lowest({0.0, 0.2, 0.8}), 2);
  EXPECT_THROW(argmax_lowest({}), Error);
}

TEST(Model, EmptyContextOrQuestionRejected) {
  ModelFixture fx;
  Tape tape;
  Ctx ctx{tape};
  Example no_ctx;
  no_ctx.task = "t";
  no_ctx.context = "";
  no_ctx.question = "q";
  no_ctx.answer = "a";
  no_ctx.retokenize();
  EXPECT_THROW(fx.model.encode_example(ctx, no_ctx), Error);
}

TEST(Model, PaddingDoesNotChangeEncoderOutput) {
  // Batch two examples of different lengths so the padded matrices contain
  // pad entries, then check the per-example encoder output matches encoding
  // the example alone (the length vectors are the mask).
  ModelFixture fx(11);
  std::vector<Example> owned = {Example::make("t", "a b c d e", "c b", "a"),
                                Example::make("t", "a b", "c", "b")};
  std::vector<const Example*> ptrs = {&owned[0], &owned[1]};
  std::vector<Batch> batches = make_batches(ptrs, 1000, fx.vocab);
  ASSERT_EQ(batches.size(), 1u);
  const Batch& b = batches[0];
  ASSERT_EQ(b.context_ids[1].size(), b.context_ids[0].size());  // padded rectangular
  EXPECT_EQ(b.context_ids[1][2], -1);                            // pad marker present

  for (const Example* e : b.examples) {
    Example alone = Example::make(e->task, e->context, e->question, e->answer);
    Tape t1(false), t2(false);
    Ctx c1{t1}, c2{t2};
    EncodedPair from_batch = fx.model.encode_example(c1, *e);
    EncodedPair direct = fx.model.encode_example(c2, alone);
    ASSERT_EQ(from_batch.c_fin.numel(), direct.c_fin.numel());
    for (std::size_t i = 0; i < from_batch.c_fin.numel(); ++i)
      EXPECT_EQ(from_batch.c_fin.value()[i], direct.c_fin.value()[i]);
  }
}

TEST(Model, UnknownWordsGetZeroWordVectors) {
  ModelFixture fx;
  Tape tape;
  Ctx ctx{tape};
  // "zzz" is out of vocabulary: its word block is zero, the char block is not.
  Tensor emb = fx.model.embeddings().embed_tokens(ctx, {"zzz", "a"});
  int word_dim = fx.model.config().word_dim;
  for (int j = 0; j < word_dim; ++j) EXPECT_EQ(emb.at(0, j), 0.0);
  double char_norm = 0.0;
  for (int j = word_dim; j < emb.cols(); ++j) char_norm += std::abs(emb.at(0, j));
  EXPECT_GT(char_norm, 0.0);
  double word_norm = 0.0;
  for (int j = 0; j < word_dim; ++j) word_norm += std::abs(emb.at(1, j));
  EXPECT_GT(word_norm, 0.0);
}

TEST(Model, MixtureSumsToOneThroughRealStep)  {
  ModelFixture fx(13);
  Example e = Example::make("t", "a b a", "b or c", "c");
  Tape tape;
  Ctx ctx{tape};
  ExtVocab ext = fx.model.ext_vocab(e);
  EncodedPair enc = fx.model.encode_example(ctx, e);
  std::vector<OutputDistribution> steps = fx.model.teacher_forced_steps(ctx, e, enc, ext);
  ASSERT_EQ(steps.size(), 2u);  // "c" + eos
  for (const OutputDistribution& s : steps) {
    double sum = 0.0;
    for (double v : s.probs.value()) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
  std::vector<int> gold = fx.model.gold_ext_ids(e, ext);
  ASSERT_EQ(gold.size(), 2u);
  EXPECT_EQ(gold[1], ext.eos_ext_id());
}
