// Task metric suite: normalized token F1, exact match, corpus BLEU-4,
// averaged ROUGE, corpus-level F1 with unanswerable instances, dialogue
// state exact match, logical form exact match, and the additive ten-task
// aggregate.  Every metric is a case-insensitive scalar in [0, 100].

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mqan/tensor.hpp"  // Error / check

namespace mqan {

enum class MetricKind { NF1, EM, BLEU, ROUGE, CF1, DSEM, LFEM };

inline const char* metric_name(MetricKind k) {
  switch (k) {
    case MetricKind::NF1: return "nF1";
    case MetricKind::EM: return "EM";
    case MetricKind::BLEU: return "BLEU";
    case MetricKind::ROUGE: return "ROUGE";
    case MetricKind::CF1: return "cF1";
    case MetricKind::DSEM: return "dsEM";
    case MetricKind::LFEM: return "lfEM";
  }
  return "?";
}

inline MetricKind metric_from_name(const std::string& s) {
  if (s == "nF1" || s == "nf1") return MetricKind::NF1;
  if (s == "EM" || s == "em") return MetricKind::EM;
  if (s == "BLEU" || s == "bleu") return MetricKind::BLEU;
  if (s == "ROUGE" || s == "rouge") return MetricKind::ROUGE;
  if (s == "cF1" || s == "cf1") return MetricKind::CF1;
  if (s == "dsEM" || s == "dsem") return MetricKind::DSEM;
  if (s == "lfEM" || s == "lfem") return MetricKind::LFEM;
  throw Error("unknown metric name: " + s);
}

struct MetricValue {
  double value = 0.0;  // in [0, 100]
  MetricKind kind = MetricKind::EM;
  int count = 0;       // evaluated instances
};

// ---------------------------------------------------------------------------
// Text normalization: lowercase, strip punctuation characters, drop the
// articles {a, an, the}, collapse whitespace.

inline std::string ascii_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> whitespace_split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string normalize_text(const std::string& s) {
  std::string lowered = ascii_lower(s);
  std::string no_punct;
  no_punct.reserve(lowered.size());
  for (char c : lowered)
    if (!std::ispunct(static_cast<unsigned char>(c))) no_punct.push_back(c);
  std::vector<std::string> tokens = whitespace_split(no_punct);
  std::string out;
  for (const std::string& t : tokens) {
    if (t == "a" || t == "an" || t == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// nF1 and EM

namespace metric_detail {

inline double instance_nf1(const std::string& pred, const std::vector<std::string>& refs) {
  std::vector<std::string> p = whitespace_split(normalize_text(pred));
  double best = 0.0;
  for (const std::string& ref : refs) {
    std::vector<std::string> r = whitespace_split(normalize_text(ref));
    double f1;
    if (p.empty() || r.empty()) {
      f1 = (p == r) ? 1.0 : 0.0;
    } else {
      std::map<std::string, int> counts;
      for (const std::string& t : r) counts[t]++;
      int same = 0;
      for (const std::string& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
          --it->second;
          ++same;
        }
      }
      if (same == 0) {
        f1 = 0.0;
      } else {
        double precision = static_cast<double>(same) / static_cast<double>(p.size());
        double recall = static_cast<double>(same) / static_cast<double>(r.size());
        f1 = 2.0 * precision * recall / (precision + recall);
      }
    }
    best = std::max(best, f1);
  }
  return best;
}

inline bool instance_em(const std::string& pred, const std::vector<std::string>& refs) {
  std::string p = normalize_text(pred);
  for (const std::string& ref : refs)
    if (p == normalize_text(ref)) return true;
  return false;
}

}  // namespace metric_detail

inline MetricValue nf1(const std::vector<std::string>& preds,
                       const std::vector<std::vector<std::string>>& refs) {
  check(preds.size() == refs.size(), "nf1: prediction/reference count mismatch");
  check(!preds.empty(), "nf1: empty corpus");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check(!refs[i].empty(), "nf1: instance without references");
    acc += metric_detail::instance_nf1(preds[i], refs[i]);
  }
  return MetricValue{acc / static_cast<double>(preds.size()) * 100.0, MetricKind::NF1,
                     static_cast<int>(preds.size())};
}

inline MetricValue em(const std::vector<std::string>& preds,
                      const std::vector<std::vector<std::string>>& refs) {
  check(preds.size() == refs.size(), "em: prediction/reference count mismatch");
  check(!preds.empty(), "em: empty corpus");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check(!refs[i].empty(), "em: instance without references");
    acc += metric_detail::instance_em(preds[i], refs[i]) ? 1.0 : 0.0;
  }
  return MetricValue{acc / static_cast<double>(preds.size()) * 100.0, MetricKind::EM,
                     static_cast<int>(preds.size())};
}

// ---------------------------------------------------------------------------
// Corpus BLEU-4, case-insensitive, clipped counts, no smoothing.  The final
// combination is BP * exp(mean of the four log precisions).

inline MetricValue corpus_bleu(const std::vector<std::string>& preds,
                               const std::vector<std::string>& refs) {
  check(preds.size() == refs.size(), "corpus_bleu: prediction/reference count mismatch");
  check(!preds.empty(), "corpus_bleu: empty corpus");
  constexpr int kMaxOrder = 4;
  double matches[kMaxOrder] = {0, 0, 0, 0};
  double totals[kMaxOrder] = {0, 0, 0, 0};
  double pred_len = 0.0, ref_len = 0.0;

  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<std::string> p = whitespace_split(ascii_lower(preds[i]));
    std::vector<std::string> r = whitespace_split(ascii_lower(refs[i]));
    pred_len += static_cast<double>(p.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      if (static_cast<int>(p.size()) < n) continue;
      std::map<std::vector<std::string>, int> ref_counts;
      for (std::size_t j = 0; j + n <= r.size(); ++j)
        ref_counts[std::vector<std::string>(r.begin() + static_cast<std::ptrdiff_t>(j),
                                            r.begin() + static_cast<std::ptrdiff_t>(j + n))]++;
      std::map<std::vector<std::string>, int> pred_counts;
      for (std::size_t j = 0; j + n <= p.size(); ++j)
        pred_counts[std::vector<std::string>(p.begin() + static_cast<std::ptrdiff_t>(j),
                                             p.begin() + static_cast<std::ptrdiff_t>(j + n))]++;
      for (const auto& [gram, cnt] : pred_counts) {
        auto it = ref_counts.find(gram);
        matches[n - 1] += std::min(cnt, it == ref_counts.end() ? 0 : it->second);
        totals[n - 1] += cnt;
      }
    }
  }

  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (totals[n] <= 0.0 || matches[n] <= 0.0)
      return MetricValue{0.0, MetricKind::BLEU, static_cast<int>(preds.size())};
    log_sum += std::log(matches[n] / totals[n]);
  }
  double bp = pred_len > ref_len ? 1.0
              : pred_len <= 0.0 ? 0.0
                                : std::exp(1.0 - ref_len / pred_len);
  double score = bp * std::exp(log_sum / kMaxOrder) * 100.0;
  return MetricValue{score, MetricKind::BLEU, static_cast<int>(preds.size())};
}

// ---------------------------------------------------------------------------
// ROUGE: mean of ROUGE-1 F1, ROUGE-2 F1 and ROUGE-L F1, each averaged over
// instances.  Case-insensitive, no stemming.

namespace metric_detail {

inline double rouge_n_f1(const std::vector<std::string>& p, const std::vector<std::string>& r,
                         int n) {
  std::size_t np = p.size() >= static_cast<std::size_t>(n) ? p.size() - n + 1 : 0;
  std::size_t nr = r.size() >= static_cast<std::size_t>(n) ? r.size() - n + 1 : 0;
  if (np == 0 || nr == 0) return (p == r) ? 1.0 : 0.0;
  std::map<std::vector<std::string>, int> rc;
  for (std::size_t j = 0; j + n <= r.size(); ++j)
    rc[std::vector<std::string>(r.begin() + static_cast<std::ptrdiff_t>(j),
                                r.begin() + static_cast<std::ptrdiff_t>(j + n))]++;
  int match = 0;
  std::map<std::vector<std::string>, int> pc;
  for (std::size_t j = 0; j + n <= p.size(); ++j)
    pc[std::vector<std::string>(p.begin() + static_cast<std::ptrdiff_t>(j),
                                p.begin() + static_cast<std::ptrdiff_t>(j + n))]++;
  for (const auto& [gram, cnt] : pc) {
    auto it = rc.find(gram);
    if (it != rc.end()) match += std::min(cnt, it->second);
  }
  if (match == 0) return 0.0;
  double precision = static_cast<double>(match) / static_cast<double>(np);
  double recall = static_cast<double>(match) / static_cast<double>(nr);
  return 2.0 * precision * recall / (precision + recall);
}

inline double rouge_l_f1(const std::vector<std::string>& p, const std::vector<std::string>& r) {
  if (p.empty() || r.empty()) return (p == r) ? 1.0 : 0.0;
  std::vector<std::vector<int>> dp(p.size() + 1, std::vector<int>(r.size() + 1, 0));
  for (std::size_t i = 1; i <= p.size(); ++i)
    for (std::size_t j = 1; j <= r.size(); ++j)
      dp[i][j] = p[i - 1] == r[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
  int lcs = dp[p.size()][r.size()];
  if (lcs == 0) return 0.0;
  double precision = static_cast<double>(lcs) / static_cast<double>(p.size());
  double recall = static_cast<double>(lcs) / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace metric_detail

inline MetricValue rouge_avg(const std::vector<std::string>& preds,
                             const std::vector<std::string>& refs) {
  check(preds.size() == refs.size(), "rouge_avg: prediction/reference count mismatch");
  check(!preds.empty(), "rouge_avg: empty corpus");
  double r1 = 0.0, r2 = 0.0, rl = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<std::string> p = whitespace_split(ascii_lower(preds[i]));
    std::vector<std::string> r = whitespace_split(ascii_lower(refs[i]));
    r1 += metric_detail::rouge_n_f1(p, r, 1);
    r2 += metric_detail::rouge_n_f1(p, r, 2);
    rl += metric_detail::rouge_l_f1(p, r);
  }
  double n = static_cast<double>(preds.size());
  double score = (r1 / n * 100.0 + r2 / n * 100.0 + rl / n * 100.0) / 3.0;
  return MetricValue{score, MetricKind::ROUGE, static_cast<int>(preds.size())};
}

// ---------------------------------------------------------------------------
// Corpus-level F1 for tasks with unanswerable instances.  A prediction or
// gold equal to the reserved answer below counts as null.  Precision divides
// by the number of non-null system answers (0 if the system never answers),
// recall by the number of instances with an answer.

inline constexpr const char* kNullAnswer = "unanswerable";

inline MetricValue corpus_f1_zre(const std::vector<std::string>& preds,
                                 const std::vector<std::string>& golds) {
  check(preds.size() == golds.size(), "corpus_f1_zre: prediction/gold count mismatch");
  check(!preds.empty(), "corpus_f1_zre: empty corpus");
  long answered = 0, answerable = 0, true_pos = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    bool pred_null = normalize_text(preds[i]) == kNullAnswer;
    bool gold_null = normalize_text(golds[i]) == kNullAnswer;
    if (!pred_null) ++answered;
    if (!gold_null) ++answerable;
    if (!pred_null && !gold_null && normalize_text(preds[i]) == normalize_text(golds[i]))
      ++true_pos;
  }
  double precision = answered > 0 ? static_cast<double>(true_pos) / static_cast<double>(answered) : 0.0;
  double recall = answerable > 0 ? static_cast<double>(true_pos) / static_cast<double>(answerable) : 0.0;
  double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return MetricValue{f1 * 100.0, MetricKind::CF1, static_cast<int>(preds.size())};
}

// ---------------------------------------------------------------------------
// Dialogue state EM over cumulative belief states.  A BeliefState is the
// per-turn change: slot -> value with unique slots, requests modeled as an
// additional slot.  Later turns override earlier values slot by slot.

using BeliefState = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// "food=italian; area=north" -> {{"area","north"},{"food","italian"}}
inline BeliefState parse_belief_state(const std::string& s) {
  BeliefState out;
  std::string cur;
  auto flush = [&](const std::string& piece) {
    std::string t = trim(piece);
    if (t.empty()) return;
    std::size_t eq = t.find('=');
    check(eq != std::string::npos, "parse_belief_state: missing '=' in \"" + t + "\"");
    std::string slot = trim(ascii_lower(t.substr(0, eq)));
    std::string value = trim(ascii_lower(t.substr(eq + 1)));
    check(!slot.empty(), "parse_belief_state: empty slot in \"" + t + "\"");
    check(out.emplace(slot, value).second, "parse_belief_state: duplicate slot " + slot);
  };
  for (char c : s) {
    if (c == ';') {
      flush(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  flush(cur);
  return out;
}

inline MetricValue ds_em(const std::vector<BeliefState>& pred_turns,
                         const std::vector<BeliefState>& gold_turns) {
  check(pred_turns.size() == gold_turns.size(), "ds_em: turn count mismatch");
  check(!pred_turns.empty(), "ds_em: empty dialogue");
  BeliefState pred_cum, gold_cum;
  long matching = 0;
  for (std::size_t t = 0; t < pred_turns.size(); ++t) {
    for (const auto& [slot, value] : pred_turns[t]) pred_cum[slot] = value;
    for (const auto& [slot, value] : gold_turns[t]) gold_cum[slot] = value;
    if (pred_cum == gold_cum) ++matching;
  }
  return MetricValue{static_cast<double>(matching) / static_cast<double>(pred_turns.size()) * 100.0,
                     MetricKind::DSEM, static_cast<int>(pred_turns.size())};
}

// ---------------------------------------------------------------------------
// Logical form EM: whitespace-collapsed, case-insensitive string equality.
// No database execution.

namespace metric_detail {

inline std::string collapse_ws(const std::string& s) {
  std::vector<std::string> tokens = whitespace_split(s);
  std::string out;
  for (const std::string& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace metric_detail

inline MetricValue lf_em(const std::vector<std::string>& preds,
                         const std::vector<std::string>& golds) {
  check(preds.size() == golds.size(), "lf_em: prediction/gold count mismatch");
  check(!preds.empty(), "lf_em: empty corpus");
  long matching = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (metric_detail::collapse_ws(ascii_lower(preds[i])) ==
        metric_detail::collapse_ws(ascii_lower(golds[i])))
      ++matching;
  return MetricValue{static_cast<double>(matching) / static_cast<double>(preds.size()) * 100.0,
                     MetricKind::LFEM, static_cast<int>(preds.size())};
}

// ---------------------------------------------------------------------------
// Additive ten-task aggregate.

inline double deca_score(const std::vector<double>& task_values) {
  check(task_values.size() == 10, "deca_score: expected exactly ten task values, got " +
                                      std::to_string(task_values.size()));
  double sum = 0.0;
  for (double v : task_values) sum += v;
  return sum;
}

}  // namespace mqan
