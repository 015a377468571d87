#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "effops/cost.hpp"
#include "effops/model.hpp"
#include "effops/operators.hpp"
#include "effops/task.hpp"
#include "effops/train.hpp"

namespace effops {

std::vector<float> default_thresholds();

// One configuration shared by every pipeline of an experiment.
struct RunConfig {
  SyntheticTask task;
  ModelConfig model;
  TrainConfig train;
  DistillConfig distill;
  std::optional<PruneConfig> prune;  // absent: PruneConfig::toy_default(model)
  CostModel cost;
  std::vector<float> thresholds = default_thresholds();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int eval_batch = 8;
  std::string output_dir = "out";

  void validate() const;
  PruneConfig resolved_prune() const;

  std::string to_json() const;
  // Fields missing from the document keep the values in `defaults`.
  static RunConfig from_json(const std::string& text, const RunConfig& defaults);
  static RunConfig from_json(const std::string& text);

  // Canonical JSON of everything that influences trained weights; two runs
  // with equal fingerprints can share cached artifacts.
  std::string training_fingerprint() const;
};

RunConfig load_run_config(const std::string& path, const RunConfig& defaults);

}  // namespace effops
