// Config parsing: defaults, strict unknown-key rejection, validation
// messages that name the offending field, and the parse -> serialize ->
// parse round-trip.

#include <gtest/gtest.h>

#include "mqan/config.hpp"

using namespace mqan;
using nlohmann::json;

namespace {

json minimal_config() {
  return json::parse(R"({
    "data": {"datasets": [
      {"task": "copy_span",
       "synthetic": {"kind": "copy_span", "count": 100, "seed": 3, "alphabet": 12,
                      "min_ctx": 3, "max_ctx": 5, "max_span": 2},
       "val_count": 20}
    ]}
  })");
}

}  // namespace

TEST(Config, DefaultsMirrorFullScaleHyperparameters) {
  RunConfig cfg = parse_config(minimal_config());
  EXPECT_EQ(cfg.model.word_dim, 300);
  EXPECT_EQ(cfg.model.char_dim, 100);
  EXPECT_EQ(cfg.model.d_emb(), 400);
  EXPECT_EQ(cfg.model.d, 200);
  EXPECT_EQ(cfg.model.f, 150);
  EXPECT_EQ(cfg.model.heads, 3);
  EXPECT_EQ(cfg.model.enc_layers, 2);
  EXPECT_EQ(cfg.model.dec_layers, 2);
  EXPECT_EQ(cfg.model.vocab, 50000);
  EXPECT_DOUBLE_EQ(cfg.model.dropout, 0.2);
  EXPECT_EQ(cfg.model.max_len, 120);
  EXPECT_DOUBLE_EQ(cfg.schedule.peak, 2.5e-3);
  EXPECT_EQ(cfg.schedule.warmup, 800);
  EXPECT_DOUBLE_EQ(cfg.adam.beta1, 0.9);
  EXPECT_DOUBLE_EQ(cfg.adam.beta2, 0.98);
  EXPECT_DOUBLE_EQ(cfg.adam.eps, 1e-9);
  EXPECT_EQ(cfg.budget, 10000);
  EXPECT_EQ(cfg.curriculum.strategy, Strategy::FullyJoint);
  EXPECT_EQ(cfg.validate_every, 500);
  EXPECT_EQ(cfg.threads, 1);
}

TEST(Config, UnknownKeysAreErrors) {
  json j = minimal_config();
  j["mdoel"] = json::object();
  try {
    parse_config(j);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("mdoel"), std::string::npos);
  }

  json j2 = minimal_config();
  j2["model"] = {{"d", 16}, {"warmup", 10}};  // warmup belongs to schedule
  try {
    parse_config(j2);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("model.warmup"), std::string::npos);
  }

  json j3 = minimal_config();
  j3["data"]["datasets"][0]["tarin_path"] = "x.jsonl";
  EXPECT_THROW(parse_config(j3), Error);
}

TEST(Config, ValidationNamesMissingFields) {
  // File-backed dataset without a train_path.
  json j = minimal_config();
  j["data"]["datasets"][0] = {{"task", "sst"}};
  try {
    parse_config(j);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("train_path"), std::string::npos);
  }

  EXPECT_THROW(parse_config(json::parse("{}")), Error);  // no datasets at all

  json odd = minimal_config();
  odd["model"] = {{"d", 7}};
  EXPECT_THROW(parse_config(odd), Error);
}

TEST(Config, RoundTripIsIdentity) {
  json j = minimal_config();
  j["model"] = {{"word_dim", 24}, {"char_dim", 8}, {"d", 32}, {"f", 24}, {"heads", 2},
                {"vocab", 64},    {"dropout", 0.1}};
  j["schedule"] = {{"peak_lr", 4e-3}, {"warmup", 100}};
  j["curriculum"] = {{"strategy", "anti_squad"}, {"phase1", {"copy_span"}},
                     {"switch_iteration", 500}};
  j["train"] = {{"iterations", 250}, {"seed", 11}, {"threads", 2}};
  j["output_dir"] = "/tmp/somewhere";
  RunConfig a = parse_config(j);
  RunConfig b = parse_config(serialize_config(a));

  EXPECT_EQ(serialize_config(a), serialize_config(b));
  EXPECT_EQ(a.model.d, b.model.d);
  EXPECT_EQ(a.model.word_dim, b.model.word_dim);
  EXPECT_DOUBLE_EQ(a.schedule.peak, b.schedule.peak);
  EXPECT_EQ(a.curriculum.strategy, b.curriculum.strategy);
  EXPECT_EQ(a.curriculum.phase1, b.curriculum.phase1);
  EXPECT_EQ(a.curriculum.switch_iteration, b.curriculum.switch_iteration);
  EXPECT_EQ(a.datasets.size(), b.datasets.size());
  EXPECT_EQ(a.datasets[0].synth.kind, b.datasets[0].synth.kind);
  EXPECT_EQ(a.datasets[0].val_count, b.datasets[0].val_count);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.threads, b.threads);
  EXPECT_EQ(a.output_dir, b.output_dir);
}

TEST(Config, FileBackedEntriesAndStrategyNames) {
  json j = minimal_config();
  j["data"]["datasets"].push_back({{"task", "sst"}, {"train_path", "sst.jsonl"},
                                   {"val_path", "sst_val.jsonl"}});
  RunConfig cfg = parse_config(j);
  ASSERT_EQ(cfg.datasets.size(), 2u);
  EXPECT_FALSE(cfg.datasets[1].synthetic);
  EXPECT_EQ(cfg.datasets[1].train_path, "sst.jsonl");
  EXPECT_EQ(cfg.datasets[1].val_path, "sst_val.jsonl");

  for (const char* name : {"fully_joint", "curriculum", "anti_squad", "anti_squad_iwslt_cnndm",
                           "anti_plus_mnli"})
    EXPECT_EQ(strategy_name(strategy_from_name(name)), std::string(name));
  EXPECT_THROW(strategy_from_name("bogus"), Error);
}
