#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "effops/cost.hpp"
#include "effops/quant.hpp"
#include "effops/tensor.hpp"

namespace effops {

inline constexpr std::int32_t kPadToken = 0;
inline constexpr std::int32_t kClsToken = 1;

struct ModelConfig {
  int n_layers = 4;
  int d_model = 32;
  int n_heads = 4;
  int d_head = 8;
  int d_ff = 64;
  int vocab_size = 16;
  int max_len = 32;
  int n_classes = 2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Affine map stored as weight [out, in] and bias [out]. Once quantized the
// float weight is dropped and qweight carries the int8 copy.
struct Linear {
  Tensor weight;
  Tensor bias;
  std::optional<QuantizedTensor> qweight;

  std::size_t out_features() const;
  std::size_t in_features() const;
  bool quantized() const { return qweight.has_value(); }
  Linear clone() const;
};

struct EncoderLayer {
  int heads = 0;
  int ff = 0;
  Linear query, key, value, output;  // query/key/value: [heads*d_head, d], output: [d, heads*d_head]
  Linear ff_in, ff_out;              // ff_in: [ff, d], ff_out: [d, ff]
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  EncoderLayer clone() const;
};

// Post-LN transformer encoder classifier pooled on the leading CLS token.
// When exit classifiers are attached, `exits` holds one per non-final layer
// and the main classifier serves as the final layer's exit.
struct TransformerModel {
  ModelConfig config;
  Tensor token_embedding;     // [vocab, d]
  Tensor position_embedding;  // [max_len, d]
  Tensor emb_ln_gamma, emb_ln_beta;
  std::vector<EncoderLayer> layers;
  Linear classifier;          // [n_classes, d]
  std::vector<Linear> exits;  // empty, or n_layers - 1 entries

  bool has_exits() const { return !exits.empty(); }
  bool quantized() const;
  int depth() const { return static_cast<int>(layers.size()); }

  // Classifier evaluated after `layer` (1-based).
  const Linear& exit_classifier(int layer) const;

  CostSnapshot cost_snapshot() const;
  QuantFlags quant_flags() const;

  TransformerModel clone() const;
  std::vector<Tensor> parameters() const;
};

TransformerModel init_model(const ModelConfig& config, std::uint64_t seed);

// Weight ~ N(0, 1/in), zero bias, both trainable.
Linear init_linear(std::size_t out, std::size_t in, std::mt19937_64& rng);

// Right-padded token ids; mask is 1 on real tokens.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  // Real-token count per example; validates that masks are prefix masks.
  std::vector<int> lengths() const;
};

TokenBatch make_batch(std::span<const std::vector<std::int32_t>* const> sequences, std::size_t pad_to);

// Per-example multiplicative gates on head outputs and FFN units, one tensor
// per layer: heads[l] is [batch, layer heads], ffn[l] is [batch, layer ff].
struct Gates {
  std::vector<Tensor> heads;
  std::vector<Tensor> ffn;
};

// Differentiable forward through every layer, keeping the intermediate states
// that distillation and exit training need.
struct Trace {
  Tensor embedding;            // [batch*seq, d] embedding layer output
  std::vector<Tensor> hidden;  // per layer [batch*seq, d]
  std::vector<Tensor> logits;  // per exit [batch, n_classes]; a single entry when the model has no exits
  std::vector<int> lengths;

  const Tensor& final_logits() const { return logits.back(); }
};

Trace trace_forward(const TransformerModel& model, const TokenBatch& batch, const Gates* gates = nullptr);

struct ForwardOutput {
  Tensor logits;                    // [batch, n_classes], from the exit each example used
  std::vector<Tensor> exit_logits;  // per executed layer [batch, n_classes] (exit models only)
  std::vector<int> exit_layer;      // per example, 1-based
  std::vector<double> mac_count;    // per example
  std::int64_t wall_ns = 0;
};

// Inference. With a threshold, each example stops at the first layer whose max
// softmax probability reaches it; the final layer always returns.
ForwardOutput forward(const TransformerModel& model, const TokenBatch& batch, std::optional<float> exit_threshold,
                      const CostModel& cost = {});

}  // namespace effops
