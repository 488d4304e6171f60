// Run configuration: a strict JSON file with typed scalars, lists and
// sections.  Unknown keys are errors.  Defaults mirror the full-scale
// hyperparameters; toy profiles override downward.

#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqan/data.hpp"
#include "mqan/model.hpp"
#include "mqan/optim.hpp"

namespace mqan {

struct DatasetEntry {
  std::string task;
  std::string train_path;  // JSONL file, empty when synthetic
  std::string val_path;    // optional JSONL file
  bool synthetic = false;
  SyntheticSpec synth;     // used when synthetic
  int val_count = 0;       // held-out tail of the synthetic stream
};

struct RunConfig {
  ModelConfig model;
  ScheduleSpec schedule;
  AdamConfig adam;
  CurriculumSpec curriculum;
  std::vector<DatasetEntry> datasets;
  long long budget = 10000;
  std::string embeddings_path;
  long long iterations = 0;
  std::uint64_t seed = 0;
  long long validate_every = 500;
  long long checkpoint_every = 500;
  int threads = 1;
  std::string output_dir = "out";
};

namespace config_detail {

using nlohmann::json;

inline void expect_keys(const json& j, const std::string& where,
                        const std::set<std::string>& allowed) {
  check(j.is_object(), "config: " + where + " must be an object");
  for (const auto& [key, value] : j.items())
    check(allowed.count(key) != 0, "config: unknown key " + where + "." + key);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw Error(std::string("config: bad value for ") + key);
  }
}

}  // namespace config_detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using config_detail::expect_keys;
  using config_detail::get_or;
  RunConfig cfg;
  expect_keys(j, "$", {"model", "schedule", "adam", "curriculum", "data", "train", "output_dir"});

  if (j.contains("model")) {
    const auto& m = j["model"];
    expect_keys(m, "model",
                {"word_dim", "char_dim", "char_buckets", "d", "f", "heads", "enc_layers",
                 "dec_layers", "vocab", "max_len", "dropout"});
    cfg.model.word_dim = get_or(m, "word_dim", cfg.model.word_dim);
    cfg.model.char_dim = get_or(m, "char_dim", cfg.model.char_dim);
    cfg.model.char_buckets = get_or(m, "char_buckets", cfg.model.char_buckets);
    cfg.model.d = get_or(m, "d", cfg.model.d);
    cfg.model.f = get_or(m, "f", cfg.model.f);
    cfg.model.heads = get_or(m, "heads", cfg.model.heads);
    cfg.model.enc_layers = get_or(m, "enc_layers", cfg.model.enc_layers);
    cfg.model.dec_layers = get_or(m, "dec_layers", cfg.model.dec_layers);
    cfg.model.vocab = get_or(m, "vocab", cfg.model.vocab);
    cfg.model.max_len = get_or(m, "max_len", cfg.model.max_len);
    cfg.model.dropout = get_or(m, "dropout", cfg.model.dropout);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    expect_keys(s, "schedule", {"peak_lr", "warmup"});
    cfg.schedule.peak = get_or(s, "peak_lr", cfg.schedule.peak);
    cfg.schedule.warmup = get_or(s, "warmup", cfg.schedule.warmup);
  }
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    expect_keys(a, "adam", {"beta1", "beta2", "eps"});
    cfg.adam.beta1 = get_or(a, "beta1", cfg.adam.beta1);
    cfg.adam.beta2 = get_or(a, "beta2", cfg.adam.beta2);
    cfg.adam.eps = get_or(a, "eps", cfg.adam.eps);
  }
  if (j.contains("curriculum")) {
    const auto& c = j["curriculum"];
    expect_keys(c, "curriculum", {"strategy", "phase1", "switch_iteration"});
    cfg.curriculum.strategy = strategy_from_name(get_or<std::string>(c, "strategy", "fully_joint"));
    cfg.curriculum.phase1 = get_or(c, "phase1", std::vector<std::string>{});
    cfg.curriculum.switch_iteration = get_or<long long>(c, "switch_iteration", 0);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    expect_keys(d, "data", {"budget", "embeddings_path", "datasets"});
    cfg.budget = get_or<long long>(d, "budget", cfg.budget);
    cfg.embeddings_path = get_or<std::string>(d, "embeddings_path", "");
    check(d.contains("datasets") && d["datasets"].is_array() && !d["datasets"].empty(),
          "config: data.datasets must be a nonempty array");
    int idx = 0;
    for (const auto& e : d["datasets"]) {
      std::string where = "data.datasets[" + std::to_string(idx) + "]";
      expect_keys(e, where, {"task", "train_path", "val_path", "synthetic", "val_count"});
      DatasetEntry entry;
      check(e.contains("task") && e["task"].is_string(), "config: missing field " + where + ".task");
      entry.task = e["task"].get<std::string>();
      if (e.contains("synthetic")) {
        const auto& s = e["synthetic"];
        expect_keys(s, where + ".synthetic",
                    {"kind", "count", "seed", "alphabet", "min_ctx", "max_ctx", "max_span"});
        entry.synthetic = true;
        entry.synth.kind = get_or<std::string>(s, "kind", entry.task);
        entry.synth.count = get_or(s, "count", 1000);
        entry.synth.seed = get_or<std::uint64_t>(s, "seed", 1);
        entry.synth.alphabet = get_or(s, "alphabet", 20);
        entry.synth.min_ctx = get_or(s, "min_ctx", 3);
        entry.synth.max_ctx = get_or(s, "max_ctx", 7);
        entry.synth.max_span = get_or(s, "max_span", 3);
        entry.val_count = get_or(e, "val_count", 0);
      } else {
        check(e.contains("train_path") && e["train_path"].is_string(),
              "config: missing field " + where + ".train_path");
        entry.train_path = e["train_path"].get<std::string>();
        entry.val_path = get_or<std::string>(e, "val_path", "");
      }
      cfg.datasets.push_back(std::move(entry));
      ++idx;
    }
  } else {
    throw Error("config: missing field data.datasets");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    expect_keys(t, "train",
                {"iterations", "seed", "validate_every", "checkpoint_every", "threads"});
    cfg.iterations = get_or<long long>(t, "iterations", 0);
    cfg.seed = get_or<std::uint64_t>(t, "seed", 0);
    cfg.validate_every = get_or<long long>(t, "validate_every", cfg.validate_every);
    cfg.checkpoint_every = get_or<long long>(t, "checkpoint_every", cfg.checkpoint_every);
    cfg.threads = get_or(t, "threads", 1);
  }
  cfg.output_dir = config_detail::get_or<std::string>(j, "output_dir", cfg.output_dir);

  check(cfg.model.d % 2 == 0, "config: model.d must be even");
  check(cfg.model.vocab >= 4, "config: model.vocab must be at least 4");
  check(cfg.budget >= 1, "config: data.budget must be positive");
  check(cfg.iterations >= 0, "config: train.iterations must be >= 0");
  check(cfg.threads >= 1, "config: train.threads must be >= 1");
  return cfg;
}

inline nlohmann::json serialize_config(const RunConfig& cfg) {
  nlohmann::json j;
  j["model"] = {{"word_dim", cfg.model.word_dim},     {"char_dim", cfg.model.char_dim},
                {"char_buckets", cfg.model.char_buckets}, {"d", cfg.model.d},
                {"f", cfg.model.f},                   {"heads", cfg.model.heads},
                {"enc_layers", cfg.model.enc_layers}, {"dec_layers", cfg.model.dec_layers},
                {"vocab", cfg.model.vocab},           {"max_len", cfg.model.max_len},
                {"dropout", cfg.model.dropout}};
  j["schedule"] = {{"peak_lr", cfg.schedule.peak}, {"warmup", cfg.schedule.warmup}};
  j["adam"] = {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}};
  j["curriculum"] = {{"strategy", strategy_name(cfg.curriculum.strategy)},
                     {"phase1", cfg.curriculum.phase1},
                     {"switch_iteration", cfg.curriculum.switch_iteration}};
  nlohmann::json datasets = nlohmann::json::array();
  for (const DatasetEntry& e : cfg.datasets) {
    nlohmann::json entry;
    entry["task"] = e.task;
    if (e.synthetic) {
      entry["synthetic"] = {{"kind", e.synth.kind},       {"count", e.synth.count},
                            {"seed", e.synth.seed},       {"alphabet", e.synth.alphabet},
                            {"min_ctx", e.synth.min_ctx}, {"max_ctx", e.synth.max_ctx},
                            {"max_span", e.synth.max_span}};
      entry["val_count"] = e.val_count;
    } else {
      entry["train_path"] = e.train_path;
      if (!e.val_path.empty()) entry["val_path"] = e.val_path;
    }
    datasets.push_back(entry);
  }
  j["data"] = {{"budget", cfg.budget}, {"datasets", datasets}};
  if (!cfg.embeddings_path.empty()) j["data"]["embeddings_path"] = cfg.embeddings_path;
  j["train"] = {{"iterations", cfg.iterations},
                {"seed", cfg.seed},
                {"validate_every", cfg.validate_every},
                {"checkpoint_every", cfg.checkpoint_every},
                {"threads", cfg.threads}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "config: cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config: " + path + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace mqan
