#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "effops/model.hpp"
#include "effops/task.hpp"
#include "effops/train.hpp"

namespace effops {

struct DistillConfig {
  std::array<double, 3> loss_weights{1.0, 1.0, 1.0};  // soft CE, embedding MSE, final-layer MSE
  int layer_map_stride = 2;
  int student_depth = 0;  // 0: teacher depth / stride

  void validate(int teacher_depth) const;
  int resolved_student_depth(int teacher_depth) const;
};

struct PruneConfig {
  int heads_keep = 0;  // per layer
  int ff_keep = 0;     // per layer

  // Keeps 2/3 of the heads (rounded) and 1/2 of the FFN units.
  static PruneConfig toy_default(const ModelConfig& config);
};

// Per-layer first-order importance of every attention head and FFN unit.
struct ImportanceScores {
  std::vector<std::vector<double>> heads;
  std::vector<std::vector<double>> ffn;
};

// Plain fine-tuning of the main classifier (cross-entropy); produces the "O" model.
TransformerModel fine_tune(const TransformerModel& model, std::span<const Example> train, const TrainConfig& config);

// Student exit i is supervised by teacher exit pair.second for each pair in
// exit_map (1-based layers); with an empty map only the final logits are matched.
//   w0 * softCE(teacher || student) + w1 * MSE(embeddings) + w2 * MSE(final hidden)
// Hidden-state MSE runs over non-pad positions.
Tensor distill_loss(const Trace& teacher, const Trace& student, const std::array<double, 3>& weights,
                    std::span<const std::pair<int, int>> exit_map = {});

TransformerModel apply_distill(const TransformerModel& teacher, std::span<const Example> train,
                               const DistillConfig& dcfg, const TrainConfig& tcfg);

ImportanceScores compute_importance(const TransformerModel& model, std::span<const Example> dev, int batch_size = 8);

// Structural part of pruning: keeps the highest-scoring heads/units per layer
// (ties to the lower index) and rewires the weights.
TransformerModel prune_structure(const TransformerModel& model, const ImportanceScores& scores, const PruneConfig& pcfg);

// prune_structure followed by same-depth distillation from the unpruned model.
TransformerModel apply_prune(const TransformerModel& model, const ImportanceScores& scores, const PruneConfig& pcfg,
                             std::span<const Example> train, const DistillConfig& dcfg, const TrainConfig& tcfg);

// Sum of exit cross-entropies, the objective of early-exit training.
Tensor exit_loss(const Trace& trace, std::span<const int> labels);

TransformerModel apply_early_exit(const TransformerModel& model, std::span<const Example> train,
                                  const TrainConfig& tcfg, std::vector<double>* epoch_losses = nullptr);

TransformerModel apply_quantize(const TransformerModel& model);

}  // namespace effops
