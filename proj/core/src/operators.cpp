#include "effops/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "effops/error.hpp"
#include "effops/ops.hpp"

namespace effops {

namespace {

std::vector<std::size_t> valid_rows(const Trace& trace) {
  const std::size_t batch = trace.lengths.size();
  const std::size_t seq = trace.embedding.dim(0) / batch;
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < static_cast<std::size_t>(trace.lengths[b]); ++i) rows.push_back(b * seq + i);
  return rows;
}

Tensor accumulate(const Tensor& total, const Tensor& term) { return total.defined() ? ops::add(total, term) : term; }

TransformerModel distill_train(const TransformerModel& teacher, TransformerModel student, std::span<const Example> train,
                               const std::array<double, 3>& weights, const std::vector<std::pair<int, int>>& exit_map,
                               const TrainConfig& tcfg) {
  train_loop(student.parameters(), train, tcfg, [&](const TokenBatch& batch, std::span<const int>) {
    Trace teacher_trace;
    {
      NoGradScope no_grad;
      teacher_trace = trace_forward(teacher, batch);
    }
    const Trace student_trace = trace_forward(student, batch);
    return distill_loss(teacher_trace, student_trace, weights, exit_map);
  });
  return student;
}

TransformerModel frozen_copy(const TransformerModel& model) {
  TransformerModel copy = model.clone();
  for (auto& p : copy.parameters()) p.set_requires_grad(false);
  return copy;
}

std::vector<std::size_t> top_k(const std::vector<double>& scores, int k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Keeps the listed row blocks of a [rows, cols] matrix (block = `block` rows).
Tensor keep_rows(const Tensor& w, const std::vector<std::size_t>& keep, std::size_t block) {
  const std::size_t cols = w.rank() == 2 ? w.dim(1) : 1;
  Shape shape = w.shape();
  shape[0] = keep.size() * block;
  Tensor out(shape);
  auto src = w.data();
  auto dst = out.data();
  std::size_t r = 0;
  for (auto k : keep)
    for (std::size_t i = 0; i < block; ++i, ++r)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((k * block + i) * cols), cols,
                  dst.begin() + static_cast<std::ptrdiff_t>(r * cols));
  return out.set_requires_grad(true);
}

Tensor keep_cols(const Tensor& w, const std::vector<std::size_t>& keep, std::size_t block) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  const std::size_t new_cols = keep.size() * block;
  Tensor out({rows, new_cols});
  auto src = w.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t c = 0;
    for (auto k : keep)
      for (std::size_t i = 0; i < block; ++i, ++c) dst[r * new_cols + c] = src[r * cols + k * block + i];
  }
  return out.set_requires_grad(true);
}

}  // namespace

void DistillConfig::validate(int teacher_depth) const {
  for (double w : loss_weights) {
    if (!(w >= 0.0)) throw ValidationError("distill: loss weights must be non-negative");
  }
  if (layer_map_stride < 1) throw ValidationError("distill: stride must be positive");
  const int depth = resolved_student_depth(teacher_depth);
  if (depth < 1 || depth * layer_map_stride != teacher_depth) {
    throw ValidationError("distill: student depth " + std::to_string(depth) + " x stride " +
                          std::to_string(layer_map_stride) + " must equal teacher depth " + std::to_string(teacher_depth));
  }
}

int DistillConfig::resolved_student_depth(int teacher_depth) const {
  return student_depth > 0 ? student_depth : teacher_depth / layer_map_stride;
}

PruneConfig PruneConfig::toy_default(const ModelConfig& config) {
  return PruneConfig{std::max(1, static_cast<int>(std::lround(config.n_heads * 2.0 / 3.0))), std::max(1, config.d_ff / 2)};
}

TransformerModel fine_tune(const TransformerModel& model, std::span<const Example> train, const TrainConfig& config) {
  if (model.quantized()) throw ValidationError("cannot train a quantized model");
  TransformerModel out = model.clone();
  train_loop(out.parameters(), train, config, [&out](const TokenBatch& batch, std::span<const int> labels) {
    return ops::cross_entropy(trace_forward(out, batch).final_logits(), labels);
  });
  return out;
}

Tensor distill_loss(const Trace& teacher, const Trace& student, const std::array<double, 3>& weights,
                    std::span<const std::pair<int, int>> exit_map) {
  if (teacher.embedding.shape() != student.embedding.shape() || teacher.lengths != student.lengths) {
    throw ValidationError("distill_loss: teacher and student saw different batches or widths");
  }
  Tensor total;
  if (weights[0] != 0.0) {
    Tensor soft;
    if (exit_map.empty()) {
      soft = ops::soft_cross_entropy(student.final_logits(), teacher.final_logits());
    } else {
      for (auto [s, t] : exit_map) {
        const auto& sl = student.logits.at(static_cast<std::size_t>(s - 1));
        const auto& tl = teacher.logits.at(static_cast<std::size_t>(t - 1));
        soft = accumulate(soft, ops::soft_cross_entropy(sl, tl));
      }
    }
    total = accumulate(total, ops::scale(soft, static_cast<float>(weights[0])));
  }
  const auto rows = valid_rows(student);
  if (weights[1] != 0.0) {
    Tensor emb = ops::mse(ops::select_rows(student.embedding, rows), ops::select_rows(teacher.embedding, rows));
    total = accumulate(total, ops::scale(emb, static_cast<float>(weights[1])));
  }
  if (weights[2] != 0.0) {
    Tensor fin = ops::mse(ops::select_rows(student.hidden.back(), rows), ops::select_rows(teacher.hidden.back(), rows));
    total = accumulate(total, ops::scale(fin, static_cast<float>(weights[2])));
  }
  if (!total.defined()) total = Tensor::scalar(0.0f);
  return total;
}

TransformerModel apply_distill(const TransformerModel& teacher, std::span<const Example> train,
                               const DistillConfig& dcfg, const TrainConfig& tcfg) {
  if (teacher.quantized()) throw ValidationError("distill: teacher is quantized");
  dcfg.validate(teacher.depth());
  const int depth = dcfg.resolved_student_depth(teacher.depth());
  const int stride = dcfg.layer_map_stride;

  TransformerModel student;
  student.config = teacher.config;
  student.config.n_layers = depth;
  student.token_embedding = teacher.token_embedding.clone();
  student.position_embedding = teacher.position_embedding.clone();
  student.emb_ln_gamma = teacher.emb_ln_gamma.clone();
  student.emb_ln_beta = teacher.emb_ln_beta.clone();
  for (int i = 1; i <= depth; ++i) student.layers.push_back(teacher.layers[static_cast<std::size_t>(i * stride - 1)].clone());
  student.classifier = teacher.classifier.clone();
  std::vector<std::pair<int, int>> exit_map;
  if (teacher.has_exits()) {
    for (int i = 1; i < depth; ++i) student.exits.push_back(teacher.exit_classifier(i * stride).clone());
    for (int i = 1; i <= depth; ++i) exit_map.emplace_back(i, i * stride);
  }
  return distill_train(teacher, std::move(student), train, dcfg.loss_weights, exit_map, tcfg);
}

Tensor exit_loss(const Trace& trace, std::span<const int> labels) {
  Tensor total;
  for (const auto& logits : trace.logits) total = accumulate(total, ops::cross_entropy(logits, labels));
  return total;
}

ImportanceScores compute_importance(const TransformerModel& model, std::span<const Example> dev, int batch_size) {
  if (dev.empty()) throw ValidationError("importance: dev set is empty");
  if (batch_size < 1) throw ValidationError("importance: batch size must be positive");
  const TransformerModel frozen = frozen_copy(model);
  ImportanceScores scores;
  for (const auto& layer : frozen.layers) {
    scores.heads.emplace_back(static_cast<std::size_t>(layer.heads), 0.0);
    scores.ffn.emplace_back(static_cast<std::size_t>(layer.ff), 0.0);
  }
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < dev.size(); start += bs) {
    std::vector<std::size_t> idx(std::min(bs, dev.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const TokenBatch batch = batch_examples(dev, idx);
    const auto labels = labels_of(dev, idx);
    Gates gates;
    for (const auto& layer : frozen.layers) {
      gates.heads.push_back(Tensor({idx.size(), static_cast<std::size_t>(layer.heads)}, 1.0f).set_requires_grad(true));
      gates.ffn.push_back(Tensor({idx.size(), static_cast<std::size_t>(layer.ff)}, 1.0f).set_requires_grad(true));
    }
    Tape tape;
    TapeScope scope(tape);
    const Trace trace = trace_forward(frozen, batch, &gates);
    // Per-example losses are summed so each gate row receives its own example's gradient.
    Tensor loss;
    for (const auto& logits : trace.logits) loss = accumulate(loss, ops::cross_entropy(logits, labels, ops::Reduction::Sum));
    tape.backward(loss);
    for (std::size_t l = 0; l < frozen.layers.size(); ++l) {
      auto accumulate_abs = [&idx](Tensor& gate, std::vector<double>& into) {
        if (!gate.has_grad()) return;
        auto g = gate.grad();
        const std::size_t width = into.size();
        for (std::size_t e = 0; e < idx.size(); ++e)
          for (std::size_t u = 0; u < width; ++u) into[u] += std::fabs(static_cast<double>(g[e * width + u]));
      };
      accumulate_abs(gates.heads[l], scores.heads[l]);
      accumulate_abs(gates.ffn[l], scores.ffn[l]);
    }
  }
  return scores;
}

TransformerModel prune_structure(const TransformerModel& model, const ImportanceScores& scores, const PruneConfig& pcfg) {
  if (model.quantized()) throw ValidationError("prune: model is quantized");
  if (scores.heads.size() != model.layers.size() || scores.ffn.size() != model.layers.size()) {
    throw ValidationError("prune: importance scores do not match the model depth");
  }
  if (pcfg.heads_keep < 1 || pcfg.ff_keep < 1) throw ValidationError("prune: keep counts must be positive");
  TransformerModel out = model.clone();
  const auto dh = static_cast<std::size_t>(model.config.d_head);
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& layer = out.layers[l];
    if (scores.heads[l].size() != static_cast<std::size_t>(layer.heads) ||
        scores.ffn[l].size() != static_cast<std::size_t>(layer.ff)) {
      throw ValidationError("prune: importance scores do not match layer " + std::to_string(l + 1) + " widths");
    }
    if (pcfg.heads_keep > layer.heads || pcfg.ff_keep > layer.ff) {
      throw ValidationError("prune: keep counts (" + std::to_string(pcfg.heads_keep) + ", " +
                            std::to_string(pcfg.ff_keep) + ") exceed layer " + std::to_string(l + 1) + " widths (" +
                            std::to_string(layer.heads) + ", " + std::to_string(layer.ff) + ")");
    }
    if (pcfg.heads_keep < layer.heads) {
      const auto keep = top_k(scores.heads[l], pcfg.heads_keep);
      for (Linear* lin : {&layer.query, &layer.key, &layer.value}) {
        lin->weight = keep_rows(lin->weight, keep, dh);
        lin->bias = keep_rows(lin->bias, keep, dh);
      }
      layer.output.weight = keep_cols(layer.output.weight, keep, dh);
      layer.heads = pcfg.heads_keep;
    }
    if (pcfg.ff_keep < layer.ff) {
      const auto keep = top_k(scores.ffn[l], pcfg.ff_keep);
      layer.ff_in.weight = keep_rows(layer.ff_in.weight, keep, 1);
      layer.ff_in.bias = keep_rows(layer.ff_in.bias, keep, 1);
      layer.ff_out.weight = keep_cols(layer.ff_out.weight, keep, 1);
      layer.ff = pcfg.ff_keep;
    }
  }
  return out;
}

TransformerModel apply_prune(const TransformerModel& model, const ImportanceScores& scores, const PruneConfig& pcfg,
                             std::span<const Example> train, const DistillConfig& dcfg, const TrainConfig& tcfg) {
  TransformerModel pruned = prune_structure(model, scores, pcfg);
  const bool identity = std::all_of(model.layers.begin(), model.layers.end(), [&](const EncoderLayer& l) {
    return l.heads == pcfg.heads_keep && l.ff == pcfg.ff_keep;
  });
  if (identity) return pruned;
  std::vector<std::pair<int, int>> exit_map;
  if (model.has_exits()) {
    for (int i = 1; i <= model.depth(); ++i) exit_map.emplace_back(i, i);
  }
  return distill_train(model, std::move(pruned), train, dcfg.loss_weights, exit_map, tcfg);
}

TransformerModel apply_early_exit(const TransformerModel& model, std::span<const Example> train,
                                  const TrainConfig& tcfg, std::vector<double>* epoch_losses) {
  if (model.has_exits()) throw ValidationError("early exit: model already has exit classifiers");
  if (model.quantized()) throw ValidationError("early exit: model is quantized");
  if (model.depth() < 2) throw ValidationError("early exit: needs at least two layers");
  TransformerModel out = model.clone();
  std::mt19937_64 rng(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto d = static_cast<std::size_t>(model.config.d_model);
  const auto c = static_cast<std::size_t>(model.config.n_classes);
  for (int l = 1; l < out.depth(); ++l) out.exits.push_back(init_linear(c, d, rng));
  auto losses = train_loop(out.parameters(), train, tcfg, [&out](const TokenBatch& batch, std::span<const int> labels) {
    return exit_loss(trace_forward(out, batch), labels);
  });
  if (epoch_losses != nullptr) *epoch_losses = std::move(losses);
  return out;
}

TransformerModel apply_quantize(const TransformerModel& model) {
  if (model.quantized()) throw ValidationError("quantize: model is already quantized");
  TransformerModel out = model.clone();
  for (auto& layer : out.layers) {
    for (Linear* lin : {&layer.query, &layer.key, &layer.value, &layer.output, &layer.ff_in, &layer.ff_out}) {
      lin->qweight = quantize(lin->weight);
      lin->weight = Tensor();
    }
  }
  return out;
}

}  // namespace effops
