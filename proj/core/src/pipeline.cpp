#include "effops/pipeline.hpp"

#include <algorithm>
#include <unistd.h>

#include "effops/error.hpp"
#include "effops/operators.hpp"

namespace effops {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

char op_letter(Op op) { return static_cast<char>(op); }

}  // namespace

bool is_group1(Op op) { return op == Op::D || op == Op::P || op == Op::E; }

PipelineSpec PipelineSpec::parse(const std::string& text) {
  if (text.empty()) throw ValidationError("pipeline: empty string (use \"O\" for the empty pipeline)");
  if (text == "O") return {};
  PipelineSpec spec;
  for (char c : text) {
    Op op;
    switch (c) {
      case 'D': op = Op::D; break;
      case 'P': op = Op::P; break;
      case 'E': op = Op::E; break;
      case 'L': op = Op::L; break;
      case 'Q': op = Op::Q; break;
      case 'O': throw ValidationError("pipeline \"" + text + "\": O cannot be combined with other operators");
      default: throw ValidationError("pipeline \"" + text + "\": unknown operator '" + std::string(1, c) + "'");
    }
    if (spec.contains(op)) {
      throw ValidationError("pipeline \"" + text + "\": operator " + std::string(1, c) + " repeated");
    }
    spec.ops.push_back(op);
  }
  return spec;
}

std::string PipelineSpec::to_string() const {
  if (ops.empty()) return "O";
  std::string s;
  for (Op op : ops) s.push_back(op_letter(op));
  return s;
}

bool PipelineSpec::contains(Op op) const { return std::find(ops.begin(), ops.end(), op) != ops.end(); }

PipelineSpec PipelineSpec::prefix(std::size_t n) const {
  PipelineSpec p;
  p.ops.assign(ops.begin(), ops.begin() + static_cast<std::ptrdiff_t>(std::min(n, ops.size())));
  return p;
}

std::vector<std::string> PipelineSpec::validate() const {
  std::vector<std::string> violations;
  bool seen_group2 = false, seen_p = false;
  for (Op op : ops) {
    const std::string name(1, op_letter(op));
    if (is_group1(op) && seen_group2) violations.push_back(name + " (Group I) after a Group II operator");
    if (op == Op::D && seen_p) violations.push_back("D after P");
    seen_group2 = seen_group2 || !is_group1(op);
    seen_p = seen_p || op == Op::P;
  }
  return violations;
}

Registry::Registry(fs::path root) : root_(std::move(root)) {}

fs::path Registry::location(const std::string& task, std::uint64_t seed, const std::string& pipeline) const {
  return root_ / task / std::to_string(seed) / pipeline;
}

bool Registry::contains(const std::string& task, std::uint64_t seed, const std::string& pipeline) const {
  return fs::exists(location(task, seed, pipeline) / "manifest.json");
}

ModelArtifact Registry::load(const std::string& task, std::uint64_t seed, const std::string& pipeline) const {
  return load_artifact(location(task, seed, pipeline));
}

void Registry::store(const ModelArtifact& artifact) const {
  const auto& p = artifact.provenance;
  const fs::path final_dir = location(p.task, p.seed, p.pipeline);
  fs::path tmp = final_dir;
  tmp += ".tmp" + std::to_string(::getpid());
  fs::remove_all(tmp);
  save_artifact(artifact, tmp);
  fs::remove_all(final_dir);
  fs::rename(tmp, final_dir);
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& pipeline) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : pipeline) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(seed ^ splitmix64(h));
}

namespace {

bool cached(const Registry* registry, const std::string& task, std::uint64_t seed, const std::string& pipeline,
            const std::string& fingerprint, ModelArtifact& out) {
  if (registry == nullptr || !registry->contains(task, seed, pipeline)) return false;
  ModelArtifact a = registry->load(task, seed, pipeline);
  if (a.provenance.config != fingerprint) return false;
  out = std::move(a);
  return true;
}

}  // namespace

ModelArtifact train_base(const RunConfig& config, const Dataset& data, std::uint64_t seed, Registry* registry,
                         ExecuteLog* log) {
  config.validate();
  const std::string task = config.task.id();
  const std::string fingerprint = config.training_fingerprint();
  ModelArtifact base;
  if (cached(registry, task, seed, "O", fingerprint, base)) {
    if (log != nullptr) log->reused.push_back("O");
    return base;
  }
  TrainConfig tcfg = config.train;
  tcfg.seed = stage_seed(seed, "O");
  base.model = fine_tune(init_model(config.model, seed), data.train, tcfg);
  base.provenance = Provenance{"O", seed, task, fingerprint};
  if (registry != nullptr) registry->store(base);
  if (log != nullptr) log->computed.push_back("O");
  return base;
}

ModelArtifact execute(const PipelineSpec& spec, const ModelArtifact& base, const Dataset& data,
                      const RunConfig& config, Registry* registry, ExecuteLog* log) {
  const std::string name = spec.to_string();
  if (const auto v = spec.validate(); !v.empty()) {
    std::string msg = "pipeline " + name + " is invalid:";
    for (const auto& s : v) msg += " " + s + ";";
    throw ValidationError(msg);
  }
  if (base.provenance.pipeline != "O" || base.l_flag) {
    throw MissingPrerequisite("execute: base artifact must be the fine-tuned O model, got " + base.provenance.pipeline);
  }
  const Provenance& root = base.provenance;

  ModelArtifact current = base;
  std::size_t start = 0;
  for (std::size_t n = spec.ops.size(); n >= 1; --n) {
    const std::string key = spec.prefix(n).to_string();
    if (cached(registry, root.task, root.seed, key, root.config, current)) {
      start = n;
      if (log != nullptr) log->reused.push_back(key);
      break;
    }
  }

  for (std::size_t i = start; i < spec.ops.size(); ++i) {
    const Op op = spec.ops[i];
    const std::string key = spec.prefix(i + 1).to_string();
    TrainConfig tcfg = config.train;
    tcfg.seed = stage_seed(root.seed, key);
    try {
      switch (op) {
        case Op::D:
          current.model = apply_distill(current.model, data.train, config.distill, tcfg);
          break;
        case Op::P: {
          const ImportanceScores scores = compute_importance(current.model, data.dev, config.train.batch_size);
          current.model =
              apply_prune(current.model, scores, config.resolved_prune(), data.train, config.distill, tcfg);
          break;
        }
        case Op::E:
          current.model = apply_early_exit(current.model, data.train, tcfg);
          break;
        case Op::L:
          current.l_flag = true;
          break;
        case Op::Q:
          current.model = apply_quantize(current.model);
          break;
      }
    } catch (const Error& e) {
      throw Error(e.exit_code(), "pipeline " + name + ", step " + std::to_string(i + 1) + " (" +
                                     std::string(1, op_letter(op)) + "): " + e.what());
    }
    current.provenance.pipeline = key;
    if (registry != nullptr) registry->store(current);
    if (log != nullptr) log->computed.push_back(key);
  }
  return current;
}

}  // namespace effops
