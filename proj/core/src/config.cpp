#include "effops/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "effops/error.hpp"
#include "json.hpp"

namespace effops {

using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

json task_json(const SyntheticTask& t) {
  return {{"kind", to_string(t.kind)}, {"vocab_size", t.vocab_size}, {"min_len", t.min_len},
          {"max_len", t.max_len},      {"n_classes", t.n_classes},   {"max_marked", t.max_marked},
          {"train_size", t.train_size}, {"dev_size", t.dev_size},    {"test_size", t.test_size},
          {"seed", t.seed}};
}

void read_task(const json& j, SyntheticTask& t) {
  if (j.contains("kind")) t.kind = task_kind_from_string(j.at("kind").get<std::string>());
  read_field(j, "vocab_size", t.vocab_size);
  read_field(j, "min_len", t.min_len);
  read_field(j, "max_len", t.max_len);
  read_field(j, "n_classes", t.n_classes);
  read_field(j, "max_marked", t.max_marked);
  read_field(j, "train_size", t.train_size);
  read_field(j, "dev_size", t.dev_size);
  read_field(j, "test_size", t.test_size);
  read_field(j, "seed", t.seed);
}

json model_json(const ModelConfig& m) {
  return {{"n_layers", m.n_layers}, {"d_model", m.d_model},       {"n_heads", m.n_heads},
          {"d_head", m.d_head},     {"d_ff", m.d_ff},             {"vocab_size", m.vocab_size},
          {"max_len", m.max_len},   {"n_classes", m.n_classes}};
}

void read_model(const json& j, ModelConfig& m) {
  read_field(j, "n_layers", m.n_layers);
  read_field(j, "d_model", m.d_model);
  read_field(j, "n_heads", m.n_heads);
  read_field(j, "d_head", m.d_head);
  read_field(j, "d_ff", m.d_ff);
  read_field(j, "vocab_size", m.vocab_size);
  read_field(j, "max_len", m.max_len);
  read_field(j, "n_classes", m.n_classes);
}

json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs}, {"batch_size", t.batch_size}};
}

void read_train(const json& j, TrainConfig& t) {
  read_field(j, "learning_rate", t.learning_rate);
  read_field(j, "epochs", t.epochs);
  read_field(j, "batch_size", t.batch_size);
}

json distill_json(const DistillConfig& d) {
  return {{"loss_weights", d.loss_weights},
          {"layer_map_stride", d.layer_map_stride},
          {"student_depth", d.student_depth}};
}

void read_distill(const json& j, DistillConfig& d) {
  read_field(j, "loss_weights", d.loss_weights);
  read_field(j, "layer_map_stride", d.layer_map_stride);
  read_field(j, "student_depth", d.student_depth);
}

}  // namespace

std::vector<float> default_thresholds() { return {0.0f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f, 0.95f, 0.99f, 1.01f}; }

void RunConfig::validate() const {
  task.validate();
  model.validate();
  train.validate();
  distill.validate(model.n_layers);
  cost.validate();
  if (task.vocab_size > model.vocab_size) throw ValidationError("config: task vocabulary exceeds model vocabulary");
  if (task.max_len > model.max_len) throw ValidationError("config: task max_len exceeds model max_len");
  if (task.n_classes != model.n_classes) throw ValidationError("config: task and model disagree on n_classes");
  const PruneConfig p = resolved_prune();
  if (p.heads_keep < 1 || p.heads_keep > model.n_heads || p.ff_keep < 1 || p.ff_keep > model.d_ff) {
    throw ValidationError("config: prune keep counts out of range");
  }
  if (thresholds.empty()) throw ValidationError("config: threshold grid is empty");
  if (seeds.empty()) throw ValidationError("config: at least one seed is required");
  if (eval_batch < 1) throw ValidationError("config: eval_batch must be positive");
}

PruneConfig RunConfig::resolved_prune() const { return prune ? *prune : PruneConfig::toy_default(model); }

std::string RunConfig::to_json() const {
  const PruneConfig p = resolved_prune();
  // 6 decimals print 0.6f as 0.6 and still parse back to the same float
  std::vector<double> grid;
  for (float t : thresholds) grid.push_back(std::round(static_cast<double>(t) * 1e6) / 1e6);
  json j{{"task", task_json(task)},
         {"model", model_json(model)},
         {"train", train_json(train)},
         {"distill", distill_json(distill)},
         {"prune", {{"heads_keep", p.heads_keep}, {"ff_keep", p.ff_keep}}},
         {"cost", {{"kappa_weight_matmul", cost.kappa_weight_matmul},
                   {"kappa_attention_matmul", cost.kappa_attention_matmul}}},
         {"thresholds", grid},
         {"seeds", seeds},
         {"eval_batch", eval_batch},
         {"output_dir", output_dir}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text, const RunConfig& defaults) {
  RunConfig c = defaults;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw FormatError("config: top level must be a JSON object");
    if (j.contains("task")) read_task(j.at("task"), c.task);
    if (j.contains("model")) read_model(j.at("model"), c.model);
    if (j.contains("train")) read_train(j.at("train"), c.train);
    if (j.contains("distill")) read_distill(j.at("distill"), c.distill);
    if (j.contains("prune")) {
      PruneConfig p = c.resolved_prune();
      read_field(j.at("prune"), "heads_keep", p.heads_keep);
      read_field(j.at("prune"), "ff_keep", p.ff_keep);
      c.prune = p;
    }
    if (j.contains("cost")) {
      read_field(j.at("cost"), "kappa_weight_matmul", c.cost.kappa_weight_matmul);
      read_field(j.at("cost"), "kappa_attention_matmul", c.cost.kappa_attention_matmul);
    }
    read_field(j, "thresholds", c.thresholds);
    read_field(j, "seeds", c.seeds);
    read_field(j, "eval_batch", c.eval_batch);
    read_field(j, "output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::from_json(const std::string& text) { return from_json(text, RunConfig{}); }

std::string RunConfig::training_fingerprint() const {
  const PruneConfig p = resolved_prune();
  json j{{"task", task_json(task)},
         {"model", model_json(model)},
         {"train", train_json(train)},
         {"distill", distill_json(distill)},
         {"prune", {{"heads_keep", p.heads_keep}, {"ff_keep", p.ff_keep}}}};
  return j.dump();
}

RunConfig load_run_config(const std::string& path, const RunConfig& defaults) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("config: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return RunConfig::from_json(ss.str(), defaults);
}

}  // namespace effops
