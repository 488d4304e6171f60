// Command-line front end: train, evaluate, decode, gradcheck, and stats
// subcommands driven by a JSON config file.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mqan/config.hpp"
#include "mqan/io.hpp"
#include "mqan/model.hpp"
#include "mqan/optim.hpp"
#include "mqan/trainer.hpp"

namespace fs = std::filesystem;
using namespace mqan;

namespace {

struct GlobalOpts {
  std::string config_path;
  long long seed = -1;       // -1: keep the config's seed
  int threads = 0;           // 0: keep the config's thread count
  std::string output_dir;    // empty: keep the config's output dir
};

RunConfig load_run_config(const GlobalOpts& g) {
  check(!g.config_path.empty(), "missing required --config");
  RunConfig cfg = load_config(g.config_path);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  if (g.threads > 0) cfg.threads = g.threads;
  if (!g.output_dir.empty()) cfg.output_dir = g.output_dir;
  return cfg;
}

// Rebuild a model from config dims, the saved vocabulary, and a checkpoint.
struct LoadedModel {
  Vocabulary vocab;
  std::shared_ptr<std::unordered_map<std::string, std::vector<double>>> pretrained;
  std::unique_ptr<MqanModel> model;
};

LoadedModel restore_model(const RunConfig& cfg, const std::string& checkpoint,
                          const std::string& vocab_path) {
  LoadedModel lm;
  std::string vp = vocab_path;
  if (vp.empty()) vp = (fs::path(cfg.output_dir) / "vocab.txt").string();
  lm.vocab = Vocabulary::load(vp);
  if (!cfg.embeddings_path.empty())
    lm.pretrained = std::make_shared<std::unordered_map<std::string, std::vector<double>>>(
        load_embeddings(cfg.embeddings_path, cfg.model.word_dim));
  ModelConfig mc = cfg.model;
  mc.vocab = lm.vocab.size();
  lm.model = std::make_unique<MqanModel>(mc, lm.vocab, cfg.seed, lm.pretrained.get());
  load_checkpoint(checkpoint, lm.model->params());
  return lm;
}

std::vector<Example> load_task_examples(const std::string& path, const TaskSpec& spec) {
  std::vector<Example> out;
  for (const Example& e : load_dataset(path))
    if (auto p = preprocess(e, spec)) out.push_back(std::move(*p));
  check(!out.empty(), "dataset " + path + " has no usable examples");
  return out;
}

int cmd_train(const GlobalOpts& g, long long iterations_override) {
  RunConfig cfg = load_run_config(g);
  if (iterations_override >= 0) cfg.iterations = iterations_override;
  TrainResult res = run_training(cfg, &std::cout);
  std::cout << "initial checkpoint: " << res.init_checkpoint << "\n";
  if (!res.final_checkpoint.empty()) std::cout << "final checkpoint: " << res.final_checkpoint << "\n";
  return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& checkpoint, const std::string& dataset,
                 const std::string& task, const std::string& vocab_path, bool oracle,
                 const std::string& report_path, const std::vector<std::string>& merge) {
  if (!merge.empty()) {
    // Report-merge mode: ten per-task metric files reduce to the decaScore.
    std::vector<double> values;
    for (const std::string& path : merge) {
      MetricReport r = load_report(path);
      std::cout << std::left << std::setw(12) << r.task << " " << std::setw(6) << r.metric << " "
                << r.value << "\n";
      values.push_back(r.value);
    }
    double total = deca_score(values);
    std::cout << "decaScore: " << total << "\n";
    return 0;
  }

  RunConfig cfg = load_run_config(g);
  check(!dataset.empty(), "missing required --dataset");
  check(!task.empty(), "missing required --task");
  const TaskSpec& spec = lookup_task(task);
  std::vector<Example> examples = load_task_examples(dataset, spec);

  std::vector<std::string> golds;
  for (const Example& e : examples) golds.push_back(e.answer);

  std::vector<std::string> preds;
  if (oracle) {
    preds = golds;  // validates the metric plumbing end to end
  } else {
    check(!checkpoint.empty(), "missing required --checkpoint");
    LoadedModel lm = restore_model(cfg, checkpoint, vocab_path);
    preds = decoded_strings(decode_many(*lm.model, examples, cfg.threads));
  }
  MetricValue mv = evaluate_predictions(spec.metric, preds, golds);
  std::cout << "task: " << spec.name << "\n"
            << "metric: " << metric_name(mv.kind) << "\n"
            << "value: " << mv.value << "\n"
            << "count: " << mv.count << "\n";
  if (!report_path.empty()) {
    save_report(report_path, MetricReport{spec.name, metric_name(mv.kind), mv.value, mv.count});
    std::cout << "report: " << report_path << "\n";
  }
  return 0;
}

int cmd_decode(const GlobalOpts& g, const std::string& checkpoint, const std::string& vocab_path,
               const std::string& context, const std::string& question, bool show_switches) {
  RunConfig cfg = load_run_config(g);
  check(!checkpoint.empty(), "missing required --checkpoint");
  check(!context.empty(), "empty context");
  check(!question.empty(), "empty question");
  LoadedModel lm = restore_model(cfg, checkpoint, vocab_path);
  Example e = Example::make("adhoc", ascii_lower(context), ascii_lower(question), "-");
  DecodeResult r = lm.model->decode_example(e);
  std::cout << join_tokens(r.tokens) << "\n";
  if (show_switches) {
    for (std::size_t i = 0; i < r.tokens.size(); ++i)
      std::cout << r.tokens[i] << "\tgamma=" << r.switches[i].first
                << "\tlambda=" << r.switches[i].second << "\n";
  }
  return 0;
}

int cmd_gradcheck(const GlobalOpts& g, bool corrupt) {
  // Toy dimensions (d <= 8) keep the central differences fast and exact.
  std::uint64_t seed = g.seed >= 0 ? static_cast<std::uint64_t>(g.seed) : 0;
  ModelConfig mc;
  mc.word_dim = 3;
  mc.char_dim = 2;
  mc.char_buckets = 16;
  mc.d = 4;
  mc.f = 3;
  mc.heads = 1;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.max_len = 8;
  mc.dropout = 0.0;
  Vocabulary vocab = Vocabulary::build({{"a", "b", "c", "d", "e"}}, 8);
  mc.vocab = vocab.size();
  MqanModel model(mc, vocab, seed);
  Example e = Example::make("toy", "a b c", "copy b", "b c");

  auto fn = [&](Tape& tape) {
    Ctx ctx{tape};
    Tensor loss = model.example_loss(ctx, e);
    if (corrupt && !tape.enabled()) {
      // Test fixture: perturb the numeric path only, so the analytic and
      // central-difference gradients disagree and the check must fail.
      Tensor w = model.params().items().front().second;
      loss = add(tape, loss, scale(tape, pick(tape, row_of(tape, w, 0), 0), 0.01));
    }
    return loss;
  };

  std::vector<std::pair<std::string, double>> errors =
      grad_check_by_param(fn, model.params().items());
  std::map<std::string, double> group_max;
  double overall = 0.0;
  std::cout << std::left << std::setw(28) << "parameter" << "max_rel_error\n";
  for (const auto& [name, err] : errors) {
    std::cout << std::left << std::setw(28) << name << err << "\n";
    std::string group = name.substr(0, name.find('.'));
    group_max[group] = std::max(group_max[group], err);
    overall = std::max(overall, err);
  }
  std::cout << "\n";
  for (const auto& [group, err] : group_max)
    std::cout << "block " << std::left << std::setw(8) << group << " max " << err
              << (err <= 1e-4 ? "  ok" : "  FAIL") << "\n";
  std::cout << "overall max relative error: " << overall << "\n";
  return overall <= 1e-4 ? 0 : 1;
}

int cmd_stats(const GlobalOpts& g, const std::string& checkpoint, const std::string& dataset,
              const std::string& vocab_path) {
  RunConfig cfg = load_run_config(g);
  check(!checkpoint.empty(), "missing required --checkpoint");
  check(!dataset.empty(), "missing required --dataset");
  LoadedModel lm = restore_model(cfg, checkpoint, vocab_path);

  // Group examples by task, decode, and accumulate switch usage.
  std::vector<Example> all = load_dataset(dataset);
  std::map<std::string, std::vector<Example>> by_task;
  for (Example& e : all) {
    const TaskSpec& spec = lookup_task(e.task);
    if (auto p = preprocess(e, spec)) by_task[e.task].push_back(std::move(*p));
  }
  check(!by_task.empty(), "dataset " + dataset + " has no usable examples");

  std::cout << std::left << std::setw(12) << "task" << std::right << std::setw(12) << "generation"
            << std::setw(10) << "context" << std::setw(10) << "question" << std::setw(8) << "steps"
            << "\n";
  for (const auto& [task, examples] : by_task) {
    std::vector<std::pair<double, double>> switches;
    for (const DecodeResult& r : decode_many(*lm.model, examples, cfg.threads))
      switches.insert(switches.end(), r.switches.begin(), r.switches.end());
    PointerUsage u = pointer_usage_stats(switches);
    std::cout << std::left << std::setw(12) << task << std::right << std::fixed
              << std::setprecision(4) << std::setw(12) << u.generation << std::setw(10)
              << u.context << std::setw(10) << u.question << std::setw(8) << u.steps << "\n";
    std::cout.unsetf(std::ios::fixed);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multitask question answering: train, evaluate, decode, gradcheck, stats"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON run configuration")->envname("MQAN_CONFIG");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--threads", g.threads, "override the config thread count");
  app.add_option("--output-dir", g.output_dir, "override the config output directory");

  auto* train = app.add_subcommand("train", "train a model from a config");
  long long iterations_override = -1;
  train->add_option("--iterations", iterations_override, "override train.iterations");

  auto* evaluate = app.add_subcommand("evaluate", "greedy-decode a dataset and score it");
  std::string checkpoint, dataset, task, vocab_path, report_path;
  bool oracle = false;
  std::vector<std::string> merge;
  evaluate->add_option("--checkpoint", checkpoint, "model checkpoint");
  evaluate->add_option("--dataset", dataset, "JSONL dataset file");
  evaluate->add_option("--task", task, "registered task name");
  evaluate->add_option("--vocab", vocab_path, "vocabulary file (default: output_dir/vocab.txt)");
  evaluate->add_flag("--oracle", oracle, "score gold answers as predictions");
  evaluate->add_option("--report", report_path, "write a JSON metric report");
  evaluate->add_option("--merge", merge, "merge ten metric reports into the decaScore");

  auto* decode = app.add_subcommand("decode", "answer one context/question pair");
  std::string context, question;
  bool show_switches = false;
  decode->add_option("--checkpoint", checkpoint, "model checkpoint");
  decode->add_option("--vocab", vocab_path, "vocabulary file");
  decode->add_option("--context", context, "context text")->required();
  decode->add_option("--question", question, "question text")->required();
  decode->add_flag("--show-switches", show_switches, "print per-token (gamma, lambda)");

  auto* gradcheck = app.add_subcommand("gradcheck", "central-difference gradient check at toy dims");
  bool corrupt = false;
  gradcheck->add_flag("--corrupt", corrupt, "test fixture: inject a gradient error");

  auto* stats = app.add_subcommand("stats", "pointer-usage table over a dataset");
  stats->add_option("--checkpoint", checkpoint, "model checkpoint");
  stats->add_option("--dataset", dataset, "JSONL dataset file");
  stats->add_option("--vocab", vocab_path, "vocabulary file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(g, iterations_override);
    if (evaluate->parsed())
      return cmd_evaluate(g, checkpoint, dataset, task, vocab_path, oracle, report_path, merge);
    if (decode->parsed()) return cmd_decode(g, checkpoint, vocab_path, context, question, show_switches);
    if (gradcheck->parsed()) return cmd_gradcheck(g, corrupt);
    if (stats->parsed()) return cmd_stats(g, checkpoint, dataset, vocab_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
