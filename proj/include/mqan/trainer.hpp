// Training orchestration: dataset loading/generation, vocabulary and model
// construction, the multitask training loop (teacher forcing, Adam with the
// warmup schedule, round-robin task sampling), periodic validation through
// the metric suite, checkpointing, and the append-only JSONL training log.

#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mqan/config.hpp"
#include "mqan/io.hpp"
#include "mqan/metrics.hpp"
#include "mqan/model.hpp"
#include "mqan/optim.hpp"

namespace mqan {

// ---------------------------------------------------------------------------
// Metric dispatch over raw prediction/gold strings.

inline MetricValue evaluate_predictions(MetricKind kind, const std::vector<std::string>& preds,
                                        const std::vector<std::string>& golds) {
  check(preds.size() == golds.size(), "evaluate: prediction/gold count mismatch");
  check(!preds.empty(), "evaluate: nothing to evaluate");
  switch (kind) {
    case MetricKind::NF1: {
      std::vector<std::vector<std::string>> refs;
      for (const std::string& g : golds) refs.push_back({g});
      return nf1(preds, refs);
    }
    case MetricKind::EM: {
      std::vector<std::vector<std::string>> refs;
      for (const std::string& g : golds) refs.push_back({g});
      return em(preds, refs);
    }
    case MetricKind::BLEU:
      return corpus_bleu(preds, golds);
    case MetricKind::ROUGE:
      return rouge_avg(preds, golds);
    case MetricKind::CF1:
      return corpus_f1_zre(preds, golds);
    case MetricKind::LFEM:
      return lf_em(preds, golds);
    case MetricKind::DSEM: {
      // Each record is a single-turn dialogue; a prediction that fails to
      // parse as a belief state never matches.
      long matching = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        BeliefState gold = parse_belief_state(golds[i]);
        bool ok;
        try {
          ok = parse_belief_state(preds[i]) == gold;
        } catch (const Error&) {
          ok = false;
        }
        matching += ok ? 1 : 0;
      }
      return MetricValue{static_cast<double>(matching) / static_cast<double>(preds.size()) * 100.0,
                         MetricKind::DSEM, static_cast<int>(preds.size())};
    }
  }
  throw Error("evaluate: unhandled metric kind");
}

// ---------------------------------------------------------------------------
// Greedy decoding over a list of examples.  Worker threads share the
// immutable model; results are gathered in input order.

inline std::vector<DecodeResult> decode_many(const MqanModel& model,
                                             const std::vector<Example>& examples,
                                             int threads = 1) {
  std::vector<DecodeResult> out(examples.size());
  if (threads <= 1 || examples.size() < 2) {
    for (std::size_t i = 0; i < examples.size(); ++i) out[i] = model.decode_example(examples[i]);
    return out;
  }
  std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(threads), examples.size());
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&, w]() {
      for (std::size_t i = w; i < examples.size(); i += n_workers)
        out[i] = model.decode_example(examples[i]);
    });
  }
  for (std::thread& t : workers) t.join();
  return out;
}

inline std::vector<std::string> decoded_strings(const std::vector<DecodeResult>& results) {
  std::vector<std::string> out;
  out.reserve(results.size());
  for (const DecodeResult& r : results) out.push_back(join_tokens(r.tokens));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly

struct LoadedTask {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> val;
};

inline std::vector<LoadedTask> load_tasks(const RunConfig& cfg) {
  std::vector<LoadedTask> out;
  for (const DatasetEntry& entry : cfg.datasets) {
    LoadedTask lt;
    lt.spec = lookup_task(entry.task);
    std::vector<Example> raw_train, raw_val;
    if (entry.synthetic) {
      check(entry.synth.kind == entry.task,
            "config: synthetic kind " + entry.synth.kind + " does not match task " + entry.task);
      SyntheticSpec spec = entry.synth;
      spec.count = entry.synth.count + entry.val_count;
      std::vector<Example> all = generate_synthetic(spec);
      raw_train.assign(all.begin(), all.begin() + entry.synth.count);
      raw_val.assign(all.begin() + entry.synth.count, all.end());
    } else {
      check(!entry.train_path.empty(), "config: missing field train_path for task " + entry.task);
      raw_train = load_dataset(entry.train_path);
      if (!entry.val_path.empty()) raw_val = load_dataset(entry.val_path);
    }
    for (const Example& e : raw_train)
      if (auto p = preprocess(e, lt.spec)) lt.train.push_back(std::move(*p));
    for (const Example& e : raw_val)
      if (auto p = preprocess(e, lt.spec)) lt.val.push_back(std::move(*p));
    check(!lt.train.empty(), "config: task " + entry.task + " has no training examples");
    out.push_back(std::move(lt));
  }
  return out;
}

inline Vocabulary build_vocabulary(const std::vector<LoadedTask>& tasks, int v) {
  std::vector<std::vector<std::string>> streams;
  for (const LoadedTask& lt : tasks)
    for (const Example& e : lt.train) {
      streams.push_back(e.context_words());
      streams.push_back(e.question_words());
      streams.push_back(e.answer_words());
    }
  return Vocabulary::build(streams, v);
}

// ---------------------------------------------------------------------------
// Training

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& last_checkpoint)
      : Error("training diverged (non-finite loss); last good checkpoint: " +
              (last_checkpoint.empty() ? std::string("<none>") : last_checkpoint)),
        last_good(last_checkpoint) {}
  std::string last_good;
};

struct TrainResult {
  std::string output_dir;
  std::string init_checkpoint;
  std::string final_checkpoint;
  std::vector<double> batch_losses;  // one entry per iteration
  struct ValRecord {
    long long iter;
    std::string task;
    MetricValue value;
  };
  std::vector<ValRecord> validations;
  std::shared_ptr<MqanModel> model;
  std::shared_ptr<std::unordered_map<std::string, std::vector<double>>> pretrained;
  std::vector<LoadedTask> tasks;
};

namespace trainer_detail {

struct TaskTrainState {
  const LoadedTask* task = nullptr;
  std::vector<Batch> batches;
  std::size_t next = 0;
  std::uint64_t epoch = 0;
};

inline void rebuild_batches(TaskTrainState& st, const RunConfig& cfg, const Vocabulary& vocab) {
  std::vector<const Example*> order;
  order.reserve(st.task->train.size());
  for (const Example& e : st.task->train) order.push_back(&e);
  // Seeded shuffle, then greedy in-order packing.
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + st.epoch * 1000003ull +
          std::hash<std::string>{}(st.task->spec.name));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  st.batches = make_batches(order, cfg.budget, vocab);
  st.next = 0;
}

}  // namespace trainer_detail

inline TrainResult run_training(const RunConfig& cfg, std::ostream* console = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);

  TrainResult res;
  res.output_dir = cfg.output_dir;
  res.tasks = load_tasks(cfg);

  Vocabulary vocab = build_vocabulary(res.tasks, cfg.model.vocab);
  vocab.save((fs::path(cfg.output_dir) / "vocab.txt").string());

  if (!cfg.embeddings_path.empty())
    res.pretrained = std::make_shared<std::unordered_map<std::string, std::vector<double>>>(
        load_embeddings(cfg.embeddings_path, cfg.model.word_dim));

  ModelConfig mc = cfg.model;
  mc.vocab = vocab.size();  // the corpus may have fewer distinct words than requested
  res.model = std::make_shared<MqanModel>(mc, vocab, cfg.seed, res.pretrained.get());

  res.init_checkpoint = (fs::path(cfg.output_dir) / "checkpoint_init.bin").string();
  save_checkpoint(res.init_checkpoint, res.model->params());
  std::string last_good = res.init_checkpoint;

  std::ofstream log((fs::path(cfg.output_dir) / "log.jsonl").string(), std::ios::app);
  check(log.good(), "train: cannot open log file in " + cfg.output_dir);

  std::vector<std::string> task_order;
  std::vector<trainer_detail::TaskTrainState> states(res.tasks.size());
  for (std::size_t i = 0; i < res.tasks.size(); ++i) {
    task_order.push_back(res.tasks[i].spec.name);
    states[i].task = &res.tasks[i];
    trainer_detail::rebuild_batches(states[i], cfg, vocab);
  }

  Rng train_rng(cfg.seed ^ 0x5eedf00dull);
  Adam adam(res.model->params(), cfg.adam);

  auto validate = [&](long long iter) {
    for (const LoadedTask& lt : res.tasks) {
      if (lt.val.empty()) continue;
      std::vector<DecodeResult> decoded = decode_many(*res.model, lt.val, 1);
      std::vector<std::string> golds;
      for (const Example& e : lt.val) golds.push_back(e.answer);
      MetricValue mv = evaluate_predictions(lt.spec.metric, decoded_strings(decoded), golds);
      res.validations.push_back({iter, lt.spec.name, mv});
      nlohmann::json rec = {{"iter", iter},
                            {"task", lt.spec.name},
                            {"metric", metric_name(mv.kind)},
                            {"value", mv.value},
                            {"count", mv.count}};
      log << rec.dump() << "\n";
      log.flush();
      if (console)
        *console << "[validate] iter " << iter << " " << lt.spec.name << " "
                 << metric_name(mv.kind) << " = " << mv.value << "\n";
    }
  };

  // Numeric blowups inside the training step (overflowing activations show
  // up as NaN/non-finite errors from the ops) count as divergence.
  auto is_numeric_blowup = [&](const Error& e) {
    std::string msg = e.what();
    if (msg.find("NaN") != std::string::npos || msg.find("non-finite") != std::string::npos)
      return true;
    for (const auto& [name, t] : res.model->params().items())
      if (!t.all_finite()) return true;
    return false;
  };

  for (long long iter = 0; iter < cfg.iterations; ++iter) {
    std::string task = next_task(iter, cfg.curriculum, task_order);
    trainer_detail::TaskTrainState* st = nullptr;
    for (auto& s : states)
      if (s.task->spec.name == task) st = &s;
    check(st != nullptr, "train: scheduled task " + task + " has no dataset");
    if (st->next >= st->batches.size()) {
      ++st->epoch;
      trainer_detail::rebuild_batches(*st, cfg, vocab);
    }
    const Batch& batch = st->batches[st->next++];

    res.model->params().zero_grad();
    double batch_loss = 0.0;
    long tokens = 0, clamped = 0;
    double lr = lr_at(iter + 1, cfg.schedule);
    try {
      for (const Example* e : batch.examples) {
        Tape tape;
        Ctx ctx{tape, true, cfg.model.dropout, &train_rng};
        Tensor loss = res.model->example_loss(ctx, *e, &clamped);
        double lv = loss.item();
        if (!std::isfinite(lv)) throw DivergenceError(last_good);
        tape.backward(loss);
        batch_loss += lv;
        tokens += static_cast<long>(e->answer_tokens.size()) + 1;
      }
      adam.step(res.model->params(), lr);
    } catch (const DivergenceError&) {
      throw;
    } catch (const Error& e) {
      if (is_numeric_blowup(e)) throw DivergenceError(last_good);
      throw;
    }
    res.batch_losses.push_back(batch_loss);

    nlohmann::json rec = {{"iter", iter},          {"task", task},
                          {"loss", batch_loss},    {"loss_per_token", batch_loss / tokens},
                          {"lr", lr},              {"examples", batch.examples.size()}};
    if (clamped > 0) rec["clamped_probs"] = clamped;
    log << rec.dump() << "\n";
    if (console && (iter % 100 == 0 || iter + 1 == cfg.iterations))
      *console << "[train] iter " << iter << " task " << task << " loss/token "
               << batch_loss / tokens << " lr " << lr << "\n";

    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0) {
      std::string latest = (fs::path(cfg.output_dir) / "checkpoint_latest.bin").string();
      save_checkpoint(latest, res.model->params());
      last_good = latest;
    }
    if (cfg.validate_every > 0 && (iter + 1) % cfg.validate_every == 0) validate(iter);
  }

  // Zero iterations leaves only the initial checkpoint.
  if (cfg.iterations > 0) {
    res.final_checkpoint = (fs::path(cfg.output_dir) / "checkpoint_final.bin").string();
    save_checkpoint(res.final_checkpoint, res.model->params());
    bool validated_at_end = cfg.validate_every > 0 && cfg.iterations % cfg.validate_every == 0;
    if (!validated_at_end) validate(cfg.iterations - 1);
  }
  return res;
}

}  // namespace mqan
