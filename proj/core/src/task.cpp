#include "effops/task.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "effops/error.hpp"

namespace effops {

namespace {

constexpr std::int32_t kMark = 2;
constexpr std::int32_t kPatternFirst = 2;
constexpr std::int32_t kPatternSecond = 3;
constexpr int kMaxAttempts = 100000;

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

bool contains_pattern(std::span<const std::int32_t> tokens) {
  for (std::size_t i = 1; i + 1 < tokens.size(); ++i)
    if (tokens[i] == kPatternFirst && tokens[i + 1] == kPatternSecond) return true;
  return false;
}

std::vector<std::int32_t> random_content(const SyntheticTask& task, std::mt19937_64& rng, int content_len) {
  std::vector<std::int32_t> tokens{kClsToken};
  for (int i = 0; i < content_len; ++i) tokens.push_back(uniform_int(rng, 2, task.vocab_size - 1));
  return tokens;
}

std::vector<std::int32_t> sample_parity(const SyntheticTask& task, std::mt19937_64& rng, int label, int content_len) {
  const int limit = std::min(task.max_marked, content_len);
  std::vector<int> counts;
  for (int c = label; c <= limit; c += 2) counts.push_back(c);
  if (counts.empty()) return {};
  const int marks = counts[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(counts.size()) - 1))];
  std::vector<std::int32_t> tokens{kClsToken};
  for (int i = 0; i < content_len; ++i) tokens.push_back(uniform_int(rng, kMark + 1, task.vocab_size - 1));
  std::vector<std::size_t> positions(static_cast<std::size_t>(content_len));
  std::iota(positions.begin(), positions.end(), 1);
  std::shuffle(positions.begin(), positions.end(), rng);
  for (int m = 0; m < marks; ++m) tokens[positions[static_cast<std::size_t>(m)]] = kMark;
  return tokens;
}

std::vector<std::int32_t> sample_pattern(const SyntheticTask& task, std::mt19937_64& rng, int label, int content_len) {
  auto tokens = random_content(task, rng, content_len);
  if (label == 1) {
    if (content_len < 2) return {};
    const auto at = static_cast<std::size_t>(uniform_int(rng, 1, content_len - 1));
    tokens[at] = kPatternFirst;
    tokens[at + 1] = kPatternSecond;
  }
  return contains_pattern(tokens) == (label == 1) ? tokens : std::vector<std::int32_t>{};
}

std::vector<std::int32_t> sample_majority(const SyntheticTask& task, std::mt19937_64& rng, int label, int content_len) {
  auto tokens = random_content(task, rng, content_len);
  return label_of(task, tokens) == label ? tokens : std::vector<std::int32_t>{};
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Parity: return "parity";
    case TaskKind::Majority: return "majority";
    case TaskKind::PatternContainment: return "pattern";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "parity") return TaskKind::Parity;
  if (name == "majority") return TaskKind::Majority;
  if (name == "pattern" || name == "pattern-containment") return TaskKind::PatternContainment;
  throw UsageError("unknown task kind '" + name + "' (expected parity, majority or pattern)");
}

void SyntheticTask::validate() const {
  if (min_len < 2 || max_len < min_len) throw ValidationError("task: need 2 <= min_len <= max_len");
  if (train_size < 1 || dev_size < 1 || test_size < 1) throw ValidationError("task: split sizes must be positive");
  if (n_classes < 2) throw ValidationError("task: need at least two classes");
  if (kind != TaskKind::Majority && n_classes != 2) throw ValidationError("task: parity and pattern tasks are binary");
  if (vocab_size < 2 + std::max(2, n_classes)) throw ValidationError("task: vocab too small for the task");
  if (kind == TaskKind::Parity && max_marked < 1) throw ValidationError("task: max_marked must be positive");
  if (kind == TaskKind::PatternContainment && min_len < 3) throw ValidationError("task: pattern needs min_len >= 3");
  if (min_len == max_len) throw ValidationError("task: lengths must vary (min_len < max_len)");
}

int label_of(const SyntheticTask& task, std::span<const std::int32_t> tokens) {
  switch (task.kind) {
    case TaskKind::Parity:
      return static_cast<int>(std::count(tokens.begin(), tokens.end(), kMark) % 2);
    case TaskKind::PatternContainment:
      return contains_pattern(tokens) ? 1 : 0;
    case TaskKind::Majority: {
      std::vector<int> counts(static_cast<std::size_t>(task.n_classes), 0);
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (tokens[i] >= 2) ++counts[static_cast<std::size_t>((tokens[i] - 2) % task.n_classes)];
      }
      const auto best = std::max_element(counts.begin(), counts.end());
      if (std::count(counts.begin(), counts.end(), *best) > 1) return -1;
      return static_cast<int>(best - counts.begin());
    }
  }
  return -1;
}

Dataset gen_task(const SyntheticTask& task) {
  task.validate();
  std::mt19937_64 rng(task.seed);
  std::set<std::vector<std::int32_t>> seen;
  auto make_split = [&](int size) {
    std::vector<Example> split;
    split.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
      const int label = i % task.n_classes;
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxAttempts) throw ValidationError("task: cannot sample distinct examples; spec is degenerate");
        const int content_len = uniform_int(rng, task.min_len - 1, task.max_len - 1);
        std::vector<std::int32_t> tokens;
        switch (task.kind) {
          case TaskKind::Parity: tokens = sample_parity(task, rng, label, content_len); break;
          case TaskKind::PatternContainment: tokens = sample_pattern(task, rng, label, content_len); break;
          case TaskKind::Majority: tokens = sample_majority(task, rng, label, content_len); break;
        }
        if (tokens.empty() || !seen.insert(tokens).second) continue;
        split.push_back({std::move(tokens), label});
        break;
      }
    }
    std::shuffle(split.begin(), split.end(), rng);
    return split;
  };
  Dataset data;
  data.train = make_split(task.train_size);
  data.dev = make_split(task.dev_size);
  data.test = make_split(task.test_size);
  return data;
}

TokenBatch batch_examples(std::span<const Example> examples, std::span<const std::size_t> indices,
                          std::optional<std::size_t> pad_to) {
  std::vector<const std::vector<std::int32_t>*> seqs;
  std::size_t longest = 0;
  for (auto i : indices) {
    seqs.push_back(&examples[i].tokens);
    longest = std::max(longest, examples[i].tokens.size());
  }
  return make_batch(seqs, pad_to.value_or(longest));
}

std::vector<int> labels_of(std::span<const Example> examples, std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (auto i : indices) labels.push_back(examples[i].label);
  return labels;
}

void write_examples(const std::string& path, std::span<const Example> examples) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  for (const auto& ex : examples) {
    out << ex.label << '\t';
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) out << (i ? " " : "") << ex.tokens[i];
    out << '\n';
  }
}

std::vector<Example> read_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot read " + path);
  std::vector<Example> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("malformed example line in " + path);
    Example ex;
    ex.label = std::stoi(line.substr(0, tab));
    std::istringstream toks(line.substr(tab + 1));
    for (std::int32_t t; toks >> t;) ex.tokens.push_back(t);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace effops
