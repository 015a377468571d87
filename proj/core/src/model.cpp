#include "effops/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "effops/error.hpp"
#include "effops/ops.hpp"

namespace effops {

void ModelConfig::validate() const {
  auto positive = [](int v) { return v > 0; };
  if (!positive(n_layers) || !positive(d_model) || !positive(n_heads) || !positive(d_head) || !positive(d_ff) ||
      !positive(vocab_size) || !positive(max_len) || !positive(n_classes)) {
    throw ValidationError("model config: all dimensions must be positive");
  }
  if (vocab_size < 3) throw ValidationError("model config: vocab must hold PAD, CLS and at least one content token");
  if (n_classes < 2) throw ValidationError("model config: need at least two classes");
}

std::size_t Linear::out_features() const { return qweight ? qweight->shape[0] : weight.dim(0); }
std::size_t Linear::in_features() const { return qweight ? qweight->shape[1] : weight.dim(1); }

Linear Linear::clone() const { return Linear{weight.clone(), bias.clone(), qweight}; }

EncoderLayer EncoderLayer::clone() const {
  return EncoderLayer{heads,         ff,           query.clone(),     key.clone(),      value.clone(),
                      output.clone(), ff_in.clone(), ff_out.clone(),    ln1_gamma.clone(), ln1_beta.clone(),
                      ln2_gamma.clone(), ln2_beta.clone()};
}

bool TransformerModel::quantized() const {
  return !layers.empty() && layers.front().query.quantized();
}

const Linear& TransformerModel::exit_classifier(int layer) const {
  if (layer < 1 || layer > depth()) throw std::out_of_range("exit layer out of range");
  if (layer == depth()) return classifier;
  if (!has_exits()) throw ValidationError("model has no exit classifiers");
  return exits[static_cast<std::size_t>(layer - 1)];
}

CostSnapshot TransformerModel::cost_snapshot() const {
  CostSnapshot snap{config.d_model, config.d_head, config.n_classes, {}};
  for (const auto& l : layers) snap.layers.push_back({l.heads, l.ff});
  return snap;
}

QuantFlags TransformerModel::quant_flags() const {
  const bool q = quantized();
  return {q, q};
}

TransformerModel TransformerModel::clone() const {
  TransformerModel m;
  m.config = config;
  m.token_embedding = token_embedding.clone();
  m.position_embedding = position_embedding.clone();
  m.emb_ln_gamma = emb_ln_gamma.clone();
  m.emb_ln_beta = emb_ln_beta.clone();
  for (const auto& l : layers) m.layers.push_back(l.clone());
  m.classifier = classifier.clone();
  for (const auto& e : exits) m.exits.push_back(e.clone());
  return m;
}

std::vector<Tensor> TransformerModel::parameters() const {
  std::vector<Tensor> params{token_embedding, position_embedding, emb_ln_gamma, emb_ln_beta};
  auto add_linear = [&params](const Linear& lin) {
    if (lin.weight.defined()) params.push_back(lin.weight);
    params.push_back(lin.bias);
  };
  for (const auto& l : layers) {
    for (const Linear* lin : {&l.query, &l.key, &l.value, &l.output, &l.ff_in, &l.ff_out}) add_linear(*lin);
    params.insert(params.end(), {l.ln1_gamma, l.ln1_beta, l.ln2_gamma, l.ln2_beta});
  }
  add_linear(classifier);
  for (const auto& e : exits) add_linear(e);
  return params;
}

namespace {

Tensor ones(std::size_t n) { return Tensor({n}, 1.0f).set_requires_grad(true); }
Tensor zeros(std::size_t n) { return Tensor({n}, 0.0f).set_requires_grad(true); }

struct RowLayout {
  std::size_t batch;
  std::size_t seq;
  std::span<const int> lengths;
};

Tensor quantized_linear(const Tensor& x, const Linear& lin, const RowLayout& rows) {
  const QuantizedTensor& w = *lin.qweight;
  const std::size_t out_f = w.shape[0], in_f = w.shape[1];
  Tensor out({x.dim(0), out_f});
  auto xd = x.data();
  auto o = out.data();
  auto bias = lin.bias.data();
  std::vector<std::int8_t> qx(rows.seq * in_f);
  std::vector<std::int32_t> acc(rows.seq * out_f);
  for (std::size_t b = 0; b < rows.batch; ++b) {
    const std::size_t len = static_cast<std::size_t>(rows.lengths[b]);
    auto block = xd.subspan(b * rows.seq * in_f, len * in_f);
    const float sx = symmetric_scale(block);
    for (std::size_t i = 0; i < block.size(); ++i) qx[i] = quantize_value(block[i], sx);
    int8_gemm_bt(len, out_f, in_f, qx.data(), w.qdata.data(), acc.data());
    const double s = static_cast<double>(sx) * static_cast<double>(w.scale);
    float* orow = o.data() + b * rows.seq * out_f;
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < out_f; ++j)
        orow[i * out_f + j] = static_cast<float>(s * static_cast<double>(acc[i * out_f + j])) + bias[j];
  }
  return out;
}

// Int8 self-attention; every (example, head) block is quantized per tensor over
// its valid positions only.
Tensor quantized_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ops::AttentionShape& s) {
  const std::size_t S = s.seq, dh = s.d_head, width = s.heads * dh;
  Tensor out(q.shape());
  auto o = out.data();
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  const std::size_t cap = S * std::max(S, dh);
  std::vector<float> block(cap);
  std::vector<std::int8_t> qa(cap), qb(cap);
  std::vector<std::int32_t> acc(cap);
  std::vector<float> probs(S * S);

  auto gather = [&](const Tensor& t, std::size_t b, std::size_t h, std::size_t len, bool transposed) {
    auto d = t.data();
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t c = 0; c < dh; ++c) {
        const float val = d[(b * S + i) * width + h * dh + c];
        if (transposed) block[c * len + i] = val;
        else block[i * dh + c] = val;
      }
  };
  auto quantize_block = [&](std::size_t n, std::vector<std::int8_t>& dst) {
    std::span<const float> vals(block.data(), n);
    const float sc = symmetric_scale(vals);
    for (std::size_t i = 0; i < n; ++i) dst[i] = quantize_value(vals[i], sc);
    return sc;
  };

  for (std::size_t b = 0; b < s.batch; ++b) {
    const std::size_t len = static_cast<std::size_t>(s.lengths[b]);
    for (std::size_t h = 0; h < s.heads; ++h) {
      gather(q, b, h, len, false);
      const float sq = quantize_block(len * dh, qa);
      gather(k, b, h, len, false);
      const float sk = quantize_block(len * dh, qb);
      int8_gemm_bt(len, len, dh, qa.data(), qb.data(), acc.data());
      const double sqk = static_cast<double>(sq) * static_cast<double>(sk);
      for (std::size_t i = 0; i < len; ++i) {
        float* p = probs.data() + i * len;
        float mx = -INFINITY;
        for (std::size_t j = 0; j < len; ++j) {
          p[j] = static_cast<float>(sqk * static_cast<double>(acc[i * len + j])) * inv_sqrt;
          mx = std::max(mx, p[j]);
        }
        float total = 0.0f;
        for (std::size_t j = 0; j < len; ++j) {
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        for (std::size_t j = 0; j < len; ++j) p[j] /= total;
      }
      std::copy_n(probs.begin(), len * len, block.begin());
      const float sp = quantize_block(len * len, qa);
      gather(v, b, h, len, true);
      const float sv = quantize_block(len * dh, qb);
      int8_gemm_bt(len, dh, len, qa.data(), qb.data(), acc.data());
      const double spv = static_cast<double>(sp) * static_cast<double>(sv);
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t c = 0; c < dh; ++c)
          o[(b * S + i) * width + h * dh + c] = static_cast<float>(spv * static_cast<double>(acc[i * dh + c]));
    }
  }
  return out;
}

Tensor apply_linear(const Linear& lin, const Tensor& x, const RowLayout& rows) {
  if (lin.quantized()) return quantized_linear(x, lin, rows);
  return ops::linear(x, lin.weight, lin.bias);
}

struct BatchContext {
  std::size_t batch;
  std::size_t seq;
  std::vector<int> lengths;
  std::vector<std::size_t> cls_rows;
};

BatchContext make_context(const TransformerModel& model, const TokenBatch& batch) {
  if (batch.seq == 0 || batch.batch == 0) throw ValidationError("empty token batch");
  if (batch.seq > static_cast<std::size_t>(model.config.max_len)) {
    throw ValidationError("batch length " + std::to_string(batch.seq) + " exceeds max_len " +
                          std::to_string(model.config.max_len));
  }
  BatchContext ctx{batch.batch, batch.seq, batch.lengths(), {}};
  for (std::size_t b = 0; b < batch.batch; ++b) ctx.cls_rows.push_back(b * batch.seq);
  for (auto id : batch.ids) {
    if (id < 0 || id >= model.config.vocab_size) throw ValidationError("token id " + std::to_string(id) + " outside vocab");
  }
  return ctx;
}

Tensor embed(const TransformerModel& model, const TokenBatch& batch) {
  std::vector<std::int32_t> positions(batch.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % batch.seq);
  Tensor x = ops::add(ops::embedding(model.token_embedding, batch.ids), ops::embedding(model.position_embedding, positions));
  return ops::layer_norm(x, model.emb_ln_gamma, model.emb_ln_beta);
}

Tensor encoder_layer(const TransformerModel& model, const EncoderLayer& layer, const Tensor& x,
                     const BatchContext& ctx, const Tensor* head_gate, const Tensor* ffn_gate) {
  const RowLayout rows{ctx.batch, ctx.seq, ctx.lengths};
  const auto dh = static_cast<std::size_t>(model.config.d_head);
  Tensor q = apply_linear(layer.query, x, rows);
  Tensor k = apply_linear(layer.key, x, rows);
  Tensor v = apply_linear(layer.value, x, rows);
  const ops::AttentionShape shape{ctx.batch, ctx.seq, static_cast<std::size_t>(layer.heads), dh, ctx.lengths};
  Tensor context = layer.query.quantized() ? quantized_attention(q, k, v, shape) : ops::attention(q, k, v, shape);
  if (head_gate != nullptr) context = ops::group_gate(context, *head_gate, ctx.seq, dh);
  Tensor attended = apply_linear(layer.output, context, rows);
  Tensor x1 = ops::layer_norm(ops::add(x, attended), layer.ln1_gamma, layer.ln1_beta);
  Tensor h = ops::relu(apply_linear(layer.ff_in, x1, rows));
  if (ffn_gate != nullptr) h = ops::group_gate(h, *ffn_gate, ctx.seq, 1);
  Tensor f = apply_linear(layer.ff_out, h, rows);
  return ops::layer_norm(ops::add(x1, f), layer.ln2_gamma, layer.ln2_beta);
}

Tensor classify(const Linear& head, const Tensor& hidden, const BatchContext& ctx) {
  return ops::linear(ops::select_rows(hidden, ctx.cls_rows), head.weight, head.bias);
}

}  // namespace

Linear init_linear(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  Linear lin;
  lin.weight = randn({out, in}, 1.0f / std::sqrt(static_cast<float>(in)), rng).set_requires_grad(true);
  lin.bias = Tensor({out}).set_requires_grad(true);
  return lin;
}

TransformerModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto width = static_cast<std::size_t>(config.n_heads * config.d_head);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  TransformerModel m;
  m.config = config;
  m.token_embedding = randn({static_cast<std::size_t>(config.vocab_size), d}, 1.0f, rng).set_requires_grad(true);
  m.position_embedding = randn({static_cast<std::size_t>(config.max_len), d}, 1.0f, rng).set_requires_grad(true);
  m.emb_ln_gamma = ones(d);
  m.emb_ln_beta = zeros(d);
  for (int i = 0; i < config.n_layers; ++i) {
    EncoderLayer layer;
    layer.heads = config.n_heads;
    layer.ff = config.d_ff;
    layer.query = init_linear(width, d, rng);
    layer.key = init_linear(width, d, rng);
    layer.value = init_linear(width, d, rng);
    layer.output = init_linear(d, width, rng);
    layer.ff_in = init_linear(ff, d, rng);
    layer.ff_out = init_linear(d, ff, rng);
    layer.ln1_gamma = ones(d);
    layer.ln1_beta = zeros(d);
    layer.ln2_gamma = ones(d);
    layer.ln2_beta = zeros(d);
    m.layers.push_back(std::move(layer));
  }
  m.classifier = init_linear(static_cast<std::size_t>(config.n_classes), d, rng);
  return m;
}

std::vector<int> TokenBatch::lengths() const {
  if (ids.size() != batch * seq || mask.size() != batch * seq) throw ValidationError("token batch size mismatch");
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t len = 0;
    while (len < seq && mask[b * seq + len]) ++len;
    for (std::size_t i = len; i < seq; ++i) {
      if (mask[b * seq + i]) throw ValidationError("attention mask is not a right-padded prefix mask");
    }
    if (len == 0) throw ValidationError("empty sequence in batch");
    out[b] = static_cast<int>(len);
  }
  return out;
}

TokenBatch make_batch(std::span<const std::vector<std::int32_t>* const> sequences, std::size_t pad_to) {
  TokenBatch batch;
  batch.batch = sequences.size();
  batch.seq = pad_to;
  batch.ids.assign(batch.batch * pad_to, kPadToken);
  batch.mask.assign(batch.batch * pad_to, 0);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const auto& seq = *sequences[b];
    if (seq.size() > pad_to) throw ValidationError("sequence longer than padded length");
    for (std::size_t i = 0; i < seq.size(); ++i) {
      batch.ids[b * pad_to + i] = seq[i];
      batch.mask[b * pad_to + i] = 1;
    }
  }
  return batch;
}

Trace trace_forward(const TransformerModel& model, const TokenBatch& batch, const Gates* gates) {
  const BatchContext ctx = make_context(model, batch);
  Trace trace;
  trace.lengths = ctx.lengths;
  trace.embedding = embed(model, batch);
  Tensor x = trace.embedding;
  for (int l = 0; l < model.depth(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    const Tensor* hg = gates != nullptr ? &gates->heads.at(li) : nullptr;
    const Tensor* fg = gates != nullptr ? &gates->ffn.at(li) : nullptr;
    x = encoder_layer(model, model.layers[li], x, ctx, hg, fg);
    trace.hidden.push_back(x);
    if (model.has_exits() || l + 1 == model.depth()) trace.logits.push_back(classify(model.exit_classifier(l + 1), x, ctx));
  }
  return trace;
}

ForwardOutput forward(const TransformerModel& model, const TokenBatch& batch, std::optional<float> exit_threshold,
                      const CostModel& cost) {
  if (exit_threshold && !model.has_exits()) throw ValidationError("exit threshold given but the model has no exits");
  const auto start = std::chrono::steady_clock::now();
  NoGradScope no_grad;
  const BatchContext ctx = make_context(model, batch);
  const auto n_classes = static_cast<std::size_t>(model.config.n_classes);
  ForwardOutput out;
  out.logits = Tensor({batch.batch, n_classes});
  out.exit_layer.assign(batch.batch, 0);
  std::size_t remaining = batch.batch;

  Tensor x = embed(model, batch);
  for (int l = 1; l <= model.depth() && remaining > 0; ++l) {
    x = encoder_layer(model, model.layers[static_cast<std::size_t>(l - 1)], x, ctx, nullptr, nullptr);
    const bool last = l == model.depth();
    if (!exit_threshold && !last) continue;
    Tensor logits = classify(model.exit_classifier(l), x, ctx);
    if (exit_threshold) out.exit_logits.push_back(logits);
    auto ld = logits.data();
    for (std::size_t b = 0; b < batch.batch; ++b) {
      if (out.exit_layer[b] != 0) continue;
      const float* row = ld.data() + b * n_classes;
      bool take = last;
      if (!take) {
        const float mx = *std::max_element(row, row + n_classes);
        float z = 0.0f;
        for (std::size_t c = 0; c < n_classes; ++c) z += std::exp(row[c] - mx);
        take = 1.0f / z >= *exit_threshold;
      }
      if (take) {
        out.exit_layer[b] = l;
        std::copy_n(row, n_classes, out.logits.data().begin() + static_cast<std::ptrdiff_t>(b * n_classes));
        --remaining;
      }
    }
  }

  const CostSnapshot snap = model.cost_snapshot();
  const QuantFlags qf = model.quant_flags();
  for (int layer : out.exit_layer) {
    out.mac_count.push_back(count_macs(snap, static_cast<int>(batch.seq), layer, qf, cost));
  }
  out.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace effops
