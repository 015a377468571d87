#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "effops/model.hpp"

namespace effops {

enum class TaskKind { Parity, Majority, PatternContainment };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

// Desk-scale sequence classification task. Sequence lengths count the leading
// CLS token. Token ids: 0 = PAD, 1 = CLS, 2.. = content.
//  - parity: label = (number of marked tokens) mod 2; token 2 is the mark,
//    and a sequence carries at most max_marked of them.
//  - majority: content tokens fall into n_classes groups by (id - 2) mod
//    n_classes; label = the group with the strictly largest count.
//  - pattern: label 1 iff the bigram (2, 3) occurs contiguously.
struct SyntheticTask {
  TaskKind kind = TaskKind::Parity;
  int vocab_size = 16;
  int min_len = 4;
  int max_len = 32;
  int n_classes = 2;
  int max_marked = 2;
  int train_size = 1000;
  int dev_size = 200;
  int test_size = 400;
  std::uint64_t seed = 1;

  void validate() const;
  std::string id() const { return to_string(kind); }
};

struct Example {
  std::vector<std::int32_t> tokens;
  int label = 0;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

// Deterministic in the task (including its seed). Labels are exactly balanced
// up to rounding and no token sequence appears twice across the three splits.
Dataset gen_task(const SyntheticTask& task);

// The labelling rule applied to a token sequence.
int label_of(const SyntheticTask& task, std::span<const std::int32_t> tokens);

// Pads to pad_to, or to the longest selected sequence when absent.
TokenBatch batch_examples(std::span<const Example> examples, std::span<const std::size_t> indices,
                          std::optional<std::size_t> pad_to = std::nullopt);

std::vector<int> labels_of(std::span<const Example> examples, std::span<const std::size_t> indices);

// Plain-text dataset file: one example per line, "label<TAB>tok tok ...".
void write_examples(const std::string& path, std::span<const Example> examples);
std::vector<Example> read_examples(const std::string& path);

}  // namespace effops
