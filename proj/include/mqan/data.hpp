// Data model: (context, question, answer) examples, a fully reversible
// tokenizer, vocabulary construction, embedding-file loading, the per-example
// extended vocabulary that the pointer mixture is defined over, token-budget
// batching, task registry with preprocessing rules, and synthetic task
// generators.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqan/metrics.hpp"  // MetricKind, ascii_lower, whitespace_split
#include "mqan/tensor.hpp"

namespace mqan {

// ---------------------------------------------------------------------------
// Reversible tokenizer.
//
// The input is split into word runs (ASCII alphanumerics and all bytes
// >= 0x80, so multi-byte UTF-8 sequences never split), single ASCII
// punctuation characters, and whitespace.  A single ' ' between tokens is
// recorded as a trailing-space flag on the previous token; any other
// whitespace run becomes its own token.  detokenize() is an exact inverse.

struct Token {
  std::string text;
  bool trail = false;  // followed by exactly one ' '
};

namespace tok_detail {

inline bool is_word_byte(unsigned char c) {
  return c >= 0x80 || std::isalnum(c);
}

inline bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace tok_detail

inline std::vector<Token> tokenize(const std::string& s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (tok_detail::is_space_byte(c)) {
      std::size_t j = i;
      while (j < s.size() && tok_detail::is_space_byte(static_cast<unsigned char>(s[j]))) ++j;
      if (j - i == 1 && s[i] == ' ' && !out.empty() && !out.back().trail) {
        out.back().trail = true;
      } else {
        out.push_back(Token{s.substr(i, j - i), false});
      }
      i = j;
    } else if (tok_detail::is_word_byte(c)) {
      std::size_t j = i;
      while (j < s.size() && tok_detail::is_word_byte(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back(Token{s.substr(i, j - i), false});
      i = j;
    } else {
      out.push_back(Token{s.substr(i, 1), false});
      ++i;
    }
  }
  return out;
}

inline std::string detokenize(const std::vector<Token>& tokens) {
  std::string out;
  for (const Token& t : tokens) {
    out += t.text;
    if (t.trail) out.push_back(' ');
  }
  return out;
}

inline std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back(t.text);
  return out;
}

// Surface form for generated token sequences (which carry no space flags).
inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Example

struct Example {
  std::string task;
  std::string context, question, answer;  // raw strings
  std::vector<Token> context_tokens, question_tokens, answer_tokens;

  static Example make(std::string task, std::string context, std::string question,
                      std::string answer) {
    check(!answer.empty(), "Example: answer must be nonempty");
    Example e;
    e.task = std::move(task);
    e.context = std::move(context);
    e.question = std::move(question);
    e.answer = std::move(answer);
    e.retokenize();
    return e;
  }

  void retokenize() {
    context_tokens = tokenize(context);
    question_tokens = tokenize(question);
    answer_tokens = tokenize(answer);
  }

  std::vector<std::string> context_words() const { return token_texts(context_tokens); }
  std::vector<std::string> question_words() const { return token_texts(question_tokens); }
  std::vector<std::string> answer_words() const { return token_texts(answer_tokens); }
};

// cost = l + m + 5n (context + question + 5 * answer token counts)
inline long long example_cost(const Example& e) {
  return static_cast<long long>(e.context_tokens.size()) +
         static_cast<long long>(e.question_tokens.size()) +
         5ll * static_cast<long long>(e.answer_tokens.size());
}

// ---------------------------------------------------------------------------
// Vocabulary.  v is the total generative vocabulary size including the three
// reserved entries; the word list keeps the (v - 3) most frequent corpus
// words, ties broken lexicographically.

class Vocabulary {
 public:
  static constexpr int kEos = 0;
  static constexpr int kInit = 1;
  static constexpr int kUnk = 2;
  static constexpr int kReserved = 3;

  static Vocabulary build(const std::vector<std::vector<std::string>>& streams, int v) {
    check(v >= 4, "Vocabulary: v must be at least 4 (3 reserved ids + 1 word)");
    std::map<std::string, long long> freq;
    long long total = 0;
    for (const auto& stream : streams)
      for (const std::string& w : stream) {
        ++freq[ascii_lower(w)];
        ++total;
      }
    check(total > 0, "Vocabulary: empty corpus");
    std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;  // lexicographic tie-break
    });
    Vocabulary vocab;
    int keep = std::min<int>(v - kReserved, static_cast<int>(ranked.size()));
    for (int i = 0; i < keep; ++i) vocab.push_word(ranked[static_cast<std::size_t>(i)].first);
    return vocab;
  }

  Vocabulary() {
    push_word("<eos>");
    push_word("<init>");
    push_word("<unk>");
    // push_word appended starting at 0; fix ids so reserved are 0..2.
  }

  int size() const { return static_cast<int>(words_.size()); }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  const std::string& word(int id) const {
    check(id >= 0 && id < size(), "Vocabulary: id out of range");
    return words_[static_cast<std::size_t>(id)];
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "Vocabulary: cannot write " + path);
    for (std::size_t i = kReserved; i < words_.size(); ++i) out << words_[i] << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "Vocabulary: cannot read " + path);
    Vocabulary vocab;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) vocab.push_word(line);
    return vocab;
  }

 private:
  void push_word(const std::string& w) {
    check(index_.emplace(w, static_cast<int>(words_.size())).second,
          "Vocabulary: duplicate word " + w);
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Extended vocabulary of one example: context token types first (in order of
// first occurrence), then new question token types, then the generative
// vocabulary.  A vocabulary word that also occurs in the context or question
// keeps its low id; its vocabulary slot stays at probability zero.  This
// ordering is what "lowest extended id" tie-breaking refers to.

struct ExtVocab {
  const Vocabulary* vocab = nullptr;
  std::vector<std::string> extra;                 // ctx/question types
  std::unordered_map<std::string, int> extra_id;  // word -> [0, extra)
  std::vector<int> context_ext, question_ext;     // per-position extended ids
  std::vector<int> vocab_to_ext;                  // vocab id -> extended id

  static ExtVocab build(const Vocabulary& vocab, const std::vector<std::string>& context_words,
                        const std::vector<std::string>& question_words) {
    ExtVocab ev;
    ev.vocab = &vocab;
    auto intern = [&ev](const std::string& w) {
      auto it = ev.extra_id.find(w);
      if (it != ev.extra_id.end()) return it->second;
      int id = static_cast<int>(ev.extra.size());
      ev.extra.push_back(w);
      ev.extra_id.emplace(w, id);
      return id;
    };
    for (const std::string& w : context_words) ev.context_ext.push_back(intern(ascii_lower(w)));
    for (const std::string& w : question_words) ev.question_ext.push_back(intern(ascii_lower(w)));
    ev.vocab_to_ext.resize(static_cast<std::size_t>(vocab.size()));
    for (int k = 0; k < vocab.size(); ++k) {
      auto it = ev.extra_id.find(vocab.word(k));
      ev.vocab_to_ext[static_cast<std::size_t>(k)] =
          it != ev.extra_id.end() ? it->second : static_cast<int>(ev.extra.size()) + k;
    }
    return ev;
  }

  int size() const { return static_cast<int>(extra.size()) + vocab->size(); }

  int eos_ext_id() const { return vocab_to_ext[static_cast<std::size_t>(Vocabulary::kEos)]; }

  // Extended id of a word; falls back to the vocabulary (then <unk>).
  int ext_id(const std::string& word) const {
    std::string w = ascii_lower(word);
    auto it = extra_id.find(w);
    if (it != extra_id.end()) return it->second;
    return vocab_to_ext[static_cast<std::size_t>(vocab->id(w))];
  }

  std::string word_of(int ext) const {
    check(ext >= 0 && ext < size(), "ExtVocab: id out of range");
    if (ext < static_cast<int>(extra.size())) return extra[static_cast<std::size_t>(ext)];
    return vocab->word(ext - static_cast<int>(extra.size()));
  }
};

// ---------------------------------------------------------------------------
// Embedding files: whitespace-separated "word v1 ... v_dim" lines.

inline std::unordered_map<std::string, std::vector<double>> load_embeddings(
    const std::string& path, int dim) {
  std::ifstream in(path);
  check(in.good(), "load_embeddings: cannot read " + path);
  std::unordered_map<std::string, std::vector<double>> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    check(!ss.fail() || ss.eof(),
          "load_embeddings: malformed value on line " + std::to_string(line_no));
    check(static_cast<int>(vec.size()) == dim,
          "load_embeddings: line " + std::to_string(line_no) + " has " +
              std::to_string(vec.size()) + " values, expected " + std::to_string(dim));
    out[word] = std::move(vec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batches: task-pure groups packed greedily in input order under the token
// budget.  The padded id matrices (pad value -1) and length vectors are the
// storage contract; the compute path reads per-example token slices, so
// encoder outputs never depend on pad positions.

struct Batch {
  std::string task;
  std::vector<const Example*> examples;
  std::vector<std::vector<int>> context_ids, question_ids, answer_ids;  // padded, -1 = pad
  std::vector<int> context_len, question_len, answer_len;
  long long cost = 0;
};

inline std::vector<Batch> make_batches(const std::vector<const Example*>& examples,
                                       long long budget, const Vocabulary& vocab) {
  std::vector<Batch> out;
  if (examples.empty()) return out;
  const std::string& task = examples.front()->task;

  auto finalize = [&vocab](Batch& b) {
    std::size_t max_c = 0, max_q = 0, max_a = 0;
    for (const Example* e : b.examples) {
      max_c = std::max(max_c, e->context_tokens.size());
      max_q = std::max(max_q, e->question_tokens.size());
      max_a = std::max(max_a, e->answer_tokens.size());
    }
    auto pad_ids = [&vocab](const std::vector<Token>& tokens, std::size_t width) {
      std::vector<int> row(width, -1);
      for (std::size_t i = 0; i < tokens.size(); ++i) row[i] = vocab.id(ascii_lower(tokens[i].text));
      return row;
    };
    for (const Example* e : b.examples) {
      b.context_ids.push_back(pad_ids(e->context_tokens, max_c));
      b.question_ids.push_back(pad_ids(e->question_tokens, max_q));
      b.answer_ids.push_back(pad_ids(e->answer_tokens, max_a));
      b.context_len.push_back(static_cast<int>(e->context_tokens.size()));
      b.question_len.push_back(static_cast<int>(e->question_tokens.size()));
      b.answer_len.push_back(static_cast<int>(e->answer_tokens.size()));
    }
  };

  Batch cur;
  cur.task = task;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example* e = examples[i];
    check(e->task == task, "make_batches: mixed tasks (" + e->task + " vs " + task + ")");
    long long cost = example_cost(*e);
    check(cost <= budget, "make_batches: example " + std::to_string(i) + " has cost " +
                              std::to_string(cost) + " exceeding budget " + std::to_string(budget));
    if (cur.cost + cost > budget) {
      finalize(cur);
      out.push_back(std::move(cur));
      cur = Batch{};
      cur.task = task;
    }
    cur.examples.push_back(e);
    cur.cost += cost;
  }
  if (!cur.examples.empty()) {
    finalize(cur);
    out.push_back(std::move(cur));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task registry and preprocessing

struct PreprocessRule {
  enum Kind { None, ExcludeOver, TruncateTo, DropLabel } kind = None;
  int limit = 0;
  std::string label;

  static PreprocessRule none() { return {}; }
  static PreprocessRule exclude_over(int l) { return {ExcludeOver, l, ""}; }
  static PreprocessRule truncate_to(int l) { return {TruncateTo, l, ""}; }
  static PreprocessRule drop_label(std::string s) { return {DropLabel, 0, std::move(s)}; }
};

struct TaskSpec {
  std::string name;
  MetricKind metric = MetricKind::EM;
  PreprocessRule rule;
  bool difficult = false;  // Appendix-style difficulty class for schedulers
};

// The ten benchmark tasks in their canonical order, with metric bindings and
// the per-task preprocessing rules.
inline const std::vector<TaskSpec>& deca_task_registry() {
  static const std::vector<TaskSpec> kTasks = {
      {"squad", MetricKind::NF1, PreprocessRule::exclude_over(400), true},
      {"iwslt", MetricKind::BLEU, PreprocessRule::none(), true},
      {"cnn_dm", MetricKind::ROUGE, PreprocessRule::truncate_to(400), true},
      {"mnli", MetricKind::EM, PreprocessRule::drop_label("-"), true},
      {"sst", MetricKind::EM, PreprocessRule::none(), false},
      {"qa_srl", MetricKind::NF1, PreprocessRule::none(), false},
      {"qa_zre", MetricKind::CF1, PreprocessRule::none(), false},
      {"woz", MetricKind::DSEM, PreprocessRule::none(), false},
      {"wikisql", MetricKind::LFEM, PreprocessRule::none(), false},
      {"mwsc", MetricKind::EM, PreprocessRule::none(), false},
  };
  return kTasks;
}

inline std::vector<std::string> easy_task_names() {
  std::vector<std::string> out;
  for (const TaskSpec& t : deca_task_registry())
    if (!t.difficult) out.push_back(t.name);
  return out;
}

// Synthetic desk-scale tasks (all EM, no preprocessing rule).
inline const std::vector<TaskSpec>& synthetic_task_registry() {
  static const std::vector<TaskSpec> kTasks = {
      {"copy_span", MetricKind::EM, PreprocessRule::none(), true},
      {"classify", MetricKind::EM, PreprocessRule::none(), false},
      {"generate", MetricKind::EM, PreprocessRule::none(), false},
  };
  return kTasks;
}

inline const TaskSpec& lookup_task(const std::string& name) {
  for (const TaskSpec& t : deca_task_registry())
    if (t.name == name) return t;
  for (const TaskSpec& t : synthetic_task_registry())
    if (t.name == name) return t;
  throw Error("unknown task: " + name);
}

// Applies the task rule, then lowercases every field.  Returns nothing when
// the rule excludes the example.
inline std::optional<Example> preprocess(const Example& e, const TaskSpec& spec) {
  Example out = e;
  switch (spec.rule.kind) {
    case PreprocessRule::None:
      break;
    case PreprocessRule::ExcludeOver:
      if (static_cast<int>(out.context_tokens.size()) > spec.rule.limit) return std::nullopt;
      break;
    case PreprocessRule::TruncateTo:
      if (static_cast<int>(out.context_tokens.size()) > spec.rule.limit) {
        out.context_tokens.resize(static_cast<std::size_t>(spec.rule.limit));
        out.context = detokenize(out.context_tokens);
      }
      break;
    case PreprocessRule::DropLabel:
      if (out.answer == spec.rule.label) return std::nullopt;
      break;
  }
  out.context = ascii_lower(out.context);
  out.question = ascii_lower(out.question);
  out.answer = ascii_lower(out.answer);
  out.retokenize();
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic tasks.  Three desk-scale analogs of the answer modes: copying a
// context span named by the question, picking one of two labels that appear
// only in the question, and emitting vocabulary-only codebook translations of
// the context.  "mixed" concatenates all three.

struct SyntheticSpec {
  std::string kind;       // copy_span | classify | generate | mixed
  int count = 0;
  std::uint64_t seed = 0;
  int alphabet = 20;      // base word inventory
  int min_ctx = 3;
  int max_ctx = 7;
  int max_span = 3;       // copy_span only
};

namespace synth_detail {

// "a".."z", "aa", "ab", ... deterministic word inventory.
inline std::vector<std::string> base_words(int count, char lead = 0) {
  std::vector<std::string> out;
  for (int i = 0; out.size() < static_cast<std::size_t>(count); ++i) {
    std::string w;
    int n = i;
    w.push_back(static_cast<char>('a' + n % 26));
    n /= 26;
    while (n > 0) {
      w.push_back(static_cast<char>('a' + (n - 1) % 26));
      n = (n - 1) / 26;
    }
    std::reverse(w.begin(), w.end());
    if (lead) w = std::string(1, lead) + w;
    out.push_back(w);
  }
  return out;
}

// Distinct sample without replacement.
inline std::vector<std::string> sample_distinct(const std::vector<std::string>& pool, int n,
                                                Rng& rng) {
  check(n <= static_cast<int>(pool.size()), "generate_synthetic: context larger than alphabet");
  std::vector<std::string> copy = pool;
  for (int i = 0; i < n; ++i) {
    int j = rng.uniform_int(i, static_cast<int>(copy.size()) - 1);
    std::swap(copy[static_cast<std::size_t>(i)], copy[static_cast<std::size_t>(j)]);
  }
  copy.resize(static_cast<std::size_t>(n));
  return copy;
}

}  // namespace synth_detail

inline std::vector<Example> generate_synthetic(const SyntheticSpec& spec) {
  check(spec.count >= 0, "generate_synthetic: negative count");
  check(spec.min_ctx >= 1 && spec.max_ctx >= spec.min_ctx, "generate_synthetic: inconsistent lens");
  check(spec.max_span >= 1, "generate_synthetic: inconsistent lens");

  if (spec.kind == "mixed") {
    std::vector<Example> out;
    for (const char* kind : {"copy_span", "classify", "generate"}) {
      SyntheticSpec sub = spec;
      sub.kind = kind;
      sub.count = spec.count / 3;
      sub.seed = spec.seed ^ std::hash<std::string>{}(kind);
      std::vector<Example> part = generate_synthetic(sub);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  Rng rng(spec.seed * 0x9e3779b97f4a7c15ull + 0x1234567ull);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(spec.count));

  if (spec.kind == "copy_span") {
    std::vector<std::string> words = synth_detail::base_words(spec.alphabet);
    for (int i = 0; i < spec.count; ++i) {
      int l = rng.uniform_int(spec.min_ctx, spec.max_ctx);
      std::vector<std::string> ctx = synth_detail::sample_distinct(words, l, rng);
      int start = rng.uniform_int(1, l);  // 1-based inclusive
      int max_len = std::min(spec.max_span, l - start + 1);
      int len = rng.uniform_int(1, max_len);
      int end = start + len - 1;
      std::vector<std::string> ans(ctx.begin() + start - 1, ctx.begin() + end);
      out.push_back(Example::make("copy_span", join_tokens(ctx),
                                  "copy span " + std::to_string(start) + " " + std::to_string(end),
                                  join_tokens(ans)));
    }
  } else if (spec.kind == "classify") {
    std::vector<std::string> fillers = synth_detail::base_words(spec.alphabet);
    std::vector<std::string> labels = synth_detail::base_words(std::max(8, spec.alphabet / 2), 'x');
    for (int i = 0; i < spec.count; ++i) {
      int l = rng.uniform_int(spec.min_ctx, spec.max_ctx);
      std::vector<std::string> ctx = synth_detail::sample_distinct(fillers, l, rng);
      bool first = rng.uniform() < 0.5;
      ctx[static_cast<std::size_t>(rng.uniform_int(0, l - 1))] = first ? "first" : "second";
      std::vector<std::string> two = synth_detail::sample_distinct(labels, 2, rng);
      out.push_back(Example::make("classify", join_tokens(ctx),
                                  "pick " + two[0] + " or " + two[1], first ? two[0] : two[1]));
    }
  } else if (spec.kind == "generate") {
    std::vector<std::string> source = synth_detail::base_words(spec.alphabet);
    std::vector<std::string> target = synth_detail::base_words(spec.alphabet, 'q');
    // Dataset-wide codebook: a seeded permutation pairing source to target.
    Rng code_rng(spec.seed ^ 0xc0debeefull);
    std::vector<std::string> shuffled = synth_detail::sample_distinct(target, spec.alphabet, code_rng);
    std::map<std::string, std::string> codebook;
    for (int i = 0; i < spec.alphabet; ++i)
      codebook[source[static_cast<std::size_t>(i)]] = shuffled[static_cast<std::size_t>(i)];
    for (int i = 0; i < spec.count; ++i) {
      int l = rng.uniform_int(spec.min_ctx, spec.max_ctx);
      std::vector<std::string> ctx = synth_detail::sample_distinct(source, l, rng);
      std::vector<std::string> ans;
      for (const std::string& w : ctx) ans.push_back(codebook.at(w));
      out.push_back(Example::make("generate", join_tokens(ctx), "translate the context",
                                  join_tokens(ans)));
    }
  } else {
    throw Error("generate_synthetic: unknown kind " + spec.kind);
  }
  return out;
}

}  // namespace mqan
