#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "effops/config.hpp"
#include "effops/model.hpp"
#include "effops/task.hpp"

namespace effops {

enum class Op : char { D = 'D', P = 'P', E = 'E', L = 'L', Q = 'Q' };

// Group I operators need training; Group II are inference-time only.
bool is_group1(Op op);

struct PipelineSpec {
  std::vector<Op> ops;  // empty for "O"

  static PipelineSpec parse(const std::string& text);
  std::string to_string() const;

  bool empty() const { return ops.empty(); }
  bool contains(Op op) const;
  PipelineSpec prefix(std::size_t n) const;

  // One message per broken ordering rule; empty when the pipeline is legal.
  std::vector<std::string> validate() const;
  bool valid() const { return validate().empty(); }

  bool operator==(const PipelineSpec&) const = default;
};

struct Provenance {
  std::string pipeline = "O";
  std::uint64_t seed = 0;
  std::string task;
  std::string config;  // training fingerprint JSON

  bool operator==(const Provenance&) const = default;
};

struct ModelArtifact {
  TransformerModel model;
  Provenance provenance;
  bool l_flag = false;
};

// Checkpoint directory: manifest.json + weights.bin.
void save_artifact(const ModelArtifact& artifact, const std::filesystem::path& dir);
ModelArtifact load_artifact(const std::filesystem::path& dir);

// Artifacts on disk under <root>/<task>/<seed>/<pipeline>/.
class Registry {
 public:
  explicit Registry(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path location(const std::string& task, std::uint64_t seed, const std::string& pipeline) const;
  bool contains(const std::string& task, std::uint64_t seed, const std::string& pipeline) const;
  ModelArtifact load(const std::string& task, std::uint64_t seed, const std::string& pipeline) const;
  // Replaces any artifact stored under the same key.
  void store(const ModelArtifact& artifact) const;

 private:
  std::filesystem::path root_;
};

// Training seed used for the operator that completes `pipeline`.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& pipeline);

struct ExecuteLog {
  std::vector<std::string> reused;   // pipelines loaded from the registry
  std::vector<std::string> computed;  // pipelines produced in this call
};

// Fine-tunes (or fetches) the base "O" artifact for config.task and seed.
ModelArtifact train_base(const RunConfig& config, const Dataset& data, std::uint64_t seed, Registry* registry,
                         ExecuteLog* log = nullptr);

// Applies spec to the base artifact left to right. Every prefix is looked up
// in / written to the registry when one is given.
ModelArtifact execute(const PipelineSpec& spec, const ModelArtifact& base, const Dataset& data,
                      const RunConfig& config, Registry* registry, ExecuteLog* log = nullptr);

}  // namespace effops
