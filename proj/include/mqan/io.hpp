// File formats: line-delimited JSON dataset records {context, question,
// answer, task}, metric report files, and the append-only training log.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqan/data.hpp"
#include "mqan/metrics.hpp"

namespace mqan {

inline std::vector<Example> load_dataset(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_dataset: cannot read " + path);
  std::vector<Example> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("load_dataset: " + path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    for (const char* field : {"context", "question", "answer", "task"})
      check(j.contains(field) && j[field].is_string(),
            "load_dataset: " + path + " line " + std::to_string(line_no) +
                ": missing string field '" + field + "'");
    out.push_back(Example::make(j["task"].get<std::string>(), j["context"].get<std::string>(),
                                j["question"].get<std::string>(), j["answer"].get<std::string>()));
  }
  return out;
}

inline void save_dataset(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  check(out.good(), "save_dataset: cannot write " + path);
  for (const Example& e : examples) {
    nlohmann::json j;
    j["context"] = e.context;
    j["question"] = e.question;
    j["answer"] = e.answer;
    j["task"] = e.task;
    out << j.dump() << "\n";
  }
}

// Per-task evaluation report.
struct MetricReport {
  std::string task;
  std::string metric;
  double value = 0.0;
  int count = 0;
};

inline void save_report(const std::string& path, const MetricReport& r) {
  std::ofstream out(path);
  check(out.good(), "save_report: cannot write " + path);
  nlohmann::json j;
  j["task"] = r.task;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["count"] = r.count;
  out << j.dump(2) << "\n";
}

inline MetricReport load_report(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_report: cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("load_report: " + path + ": " + e.what());
  }
  for (const char* field : {"task", "metric", "value"})
    check(j.contains(field), "load_report: " + path + ": missing field '" + field + "'");
  MetricReport r;
  r.task = j["task"].get<std::string>();
  r.metric = j["metric"].get<std::string>();
  r.value = j["value"].get<double>();
  r.count = j.value("count", 0);
  return r;
}

}  // namespace mqan
