// Optimization machinery: the warmup / inverse-square-root learning-rate
// schedule, bias-corrected Adam, round-robin multitask sampling with
// curriculum and anti-curriculum phases, and the binary checkpoint format.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mqan/data.hpp"
#include "mqan/nn.hpp"

namespace mqan {

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup from 0 to the peak over `warmup`
// iterations, then peak * sqrt(warmup / k).  The decay constant makes the
// curve continuous at the warmup boundary.

struct ScheduleSpec {
  double peak = 2.5e-3;
  long long warmup = 800;
};

inline double lr_at(long long k, const ScheduleSpec& spec) {
  check(k >= 1, "lr_at: iteration must be >= 1");
  check(spec.peak > 0 && spec.warmup >= 1, "lr_at: invalid schedule");
  if (k <= spec.warmup) return spec.peak * static_cast<double>(k) / static_cast<double>(spec.warmup);
  return spec.peak * std::sqrt(static_cast<double>(spec.warmup) / static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

class Adam {
 public:
  explicit Adam(const ParamSet& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto& [name, t] : params.items()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  long long iterations() const { return k_; }

  void step(ParamSet& params, double lr) {
    check(params.count() == m_.size(), "adam_step: parameter set changed size");
    ++k_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(k_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(k_));
    for (std::size_t pi = 0; pi < m_.size(); ++pi) {
      const auto& [name, t] = params.items()[pi];
      std::vector<double>& value = t.value();
      std::vector<double>& grad = t.grad();
      std::vector<double>& m = m_[pi];
      std::vector<double>& v = v_[pi];
      for (std::size_t i = 0; i < value.size(); ++i) {
        double g = grad[i];
        check(std::isfinite(g), "adam_step: non-finite gradient in parameter " + name);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        double mh = m[i] / bc1;
        double vh = v[i] / bc2;
        value[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  long long k_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Multitask sampling.  Phase 1 (before the switch iteration) cycles over the
// phase-1 subset in the given task order; afterwards every task joins the
// round-robin.  "fully_joint" has no phase 1.

enum class Strategy { FullyJoint, Curriculum, AntiSquad, AntiSquadIwsltCnnDm, AntiPlusMnli };

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "fully_joint") return Strategy::FullyJoint;
  if (s == "curriculum") return Strategy::Curriculum;
  if (s == "anti_squad") return Strategy::AntiSquad;
  if (s == "anti_squad_iwslt_cnndm") return Strategy::AntiSquadIwsltCnnDm;
  if (s == "anti_plus_mnli") return Strategy::AntiPlusMnli;
  throw Error("unknown curriculum strategy: " + s);
}

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::FullyJoint: return "fully_joint";
    case Strategy::Curriculum: return "curriculum";
    case Strategy::AntiSquad: return "anti_squad";
    case Strategy::AntiSquadIwsltCnnDm: return "anti_squad_iwslt_cnndm";
    case Strategy::AntiPlusMnli: return "anti_plus_mnli";
  }
  return "?";
}

// Benchmark-task phase-1 sets: the curriculum strategy takes the six easy
// tasks first; the anti-curriculum variants front-load the hard ones.
inline std::vector<std::string> default_phase1(Strategy s) {
  switch (s) {
    case Strategy::FullyJoint: return {};
    case Strategy::Curriculum: return {"sst", "qa_srl", "qa_zre", "woz", "wikisql", "mwsc"};
    case Strategy::AntiSquad: return {"squad"};
    case Strategy::AntiSquadIwsltCnnDm: return {"squad", "iwslt", "cnn_dm"};
    case Strategy::AntiPlusMnli: return {"squad", "iwslt", "cnn_dm", "mnli"};
  }
  return {};
}

struct CurriculumSpec {
  Strategy strategy = Strategy::FullyJoint;
  std::vector<std::string> phase1;  // defaults from the strategy; override for analogs
  long long switch_iteration = 0;

  std::vector<std::string> effective_phase1() const {
    return phase1.empty() ? default_phase1(strategy) : phase1;
  }
};

inline std::string next_task(long long iter, const CurriculumSpec& spec,
                             const std::vector<std::string>& task_order) {
  check(!task_order.empty(), "next_task: empty task order");
  check(iter >= 0, "next_task: negative iteration");
  if (spec.strategy == Strategy::FullyJoint || iter >= spec.switch_iteration)
    return task_order[static_cast<std::size_t>(
        (spec.strategy == Strategy::FullyJoint ? iter : iter - spec.switch_iteration) %
        static_cast<long long>(task_order.size()))];

  std::vector<std::string> phase1 = spec.effective_phase1();
  check(!phase1.empty(), "next_task: phase-1 set is empty for a staged strategy");
  std::vector<std::string> active;
  for (const std::string& t : task_order)
    if (std::find(phase1.begin(), phase1.end(), t) != phase1.end()) active.push_back(t);
  check(!active.empty(), "next_task: no phase-1 task present in the task order");
  return active[static_cast<std::size_t>(iter % static_cast<long long>(active.size()))];
}

// ---------------------------------------------------------------------------
// Checkpoints: "MQAN" magic, format version, parameter manifest (name,
// dtype, shape), then raw little-endian doubles.

namespace ckpt_detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(out, bits);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(in.good(), "checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  check(in.good(), "checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace ckpt_detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_checkpoint: cannot write " + path);
  out.write("MQAN", 4);
  ckpt_detail::write_u32(out, kCheckpointVersion);
  ckpt_detail::write_u64(out, params.count());
  for (const auto& [name, t] : params.items()) {
    ckpt_detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(0);  // dtype tag: f64
    ckpt_detail::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      ckpt_detail::write_u32(out, static_cast<std::uint32_t>(t.shape().dim(i)));
    for (double v : t.value()) ckpt_detail::write_f64(out, v);
  }
  check(out.good(), "save_checkpoint: write failure on " + path);
}

// Loads values into an existing parameter set.  Any name or shape
// discrepancy is an error listing every offending parameter.
inline void load_checkpoint(const std::string& path, ParamSet& params) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot read " + path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::string(magic, 4) == "MQAN", "load_checkpoint: bad magic in " + path);
  std::uint32_t version = ckpt_detail::read_u32(in);
  check(version == kCheckpointVersion,
        "load_checkpoint: unsupported version " + std::to_string(version));
  std::uint64_t count = ckpt_detail::read_u64(in);

  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> stored;
  for (std::uint64_t p = 0; p < count; ++p) {
    std::uint32_t name_len = ckpt_detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    int dtype = in.get();
    check(dtype == 0, "load_checkpoint: unknown dtype for " + name);
    std::uint32_t rank = ckpt_detail::read_u32(in);
    std::vector<int> dims;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      dims.push_back(static_cast<int>(ckpt_detail::read_u32(in)));
      numel *= static_cast<std::size_t>(dims.back());
    }
    std::vector<double> values(numel);
    for (double& v : values) v = ckpt_detail::read_f64(in);
    check(in.good(), "load_checkpoint: truncated values for " + name);
    stored.emplace(name, std::make_pair(std::move(dims), std::move(values)));
  }

  std::vector<std::string> offenders;
  for (const auto& [name, t] : params.items()) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      offenders.push_back(name + " (missing from checkpoint)");
      continue;
    }
    std::vector<int> want;
    for (int i = 0; i < t.rank(); ++i) want.push_back(t.shape().dim(i));
    if (it->second.first != want) offenders.push_back(name + " (shape mismatch)");
  }
  for (const auto& [name, entry] : stored)
    if (!params.has(name)) offenders.push_back(name + " (unexpected in checkpoint)");
  if (!offenders.empty()) {
    std::string msg = "load_checkpoint: manifest mismatch:";
    for (const std::string& o : offenders) msg += "\n  " + o;
    throw Error(msg);
  }

  for (auto& [name, t] : params.items()) t.value() = stored.at(name).second;
}

}  // namespace mqan
