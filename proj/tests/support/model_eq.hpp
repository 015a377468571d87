#pragma once

#include <algorithm>
#include <optional>
#include <utility>

#include "effops/pipeline.hpp"

// Bitwise equality of artifacts, used by persistence and caching checks.
namespace model_eq {

inline bool same_tensor(const effops::Tensor& a, const effops::Tensor& b) {
  if (a.defined() != b.defined()) return false;
  if (!a.defined()) return true;
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

inline bool same_q(const std::optional<effops::QuantizedTensor>& a, const std::optional<effops::QuantizedTensor>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || (a->shape == b->shape && a->qdata == b->qdata && a->scale == b->scale && a->zero_point == b->zero_point);
}

inline bool same_linear(const effops::Linear& a, const effops::Linear& b) {
  return same_tensor(a.weight, b.weight) && same_tensor(a.bias, b.bias) && same_q(a.qweight, b.qweight);
}

inline bool same_model(const effops::TransformerModel& a, const effops::TransformerModel& b) {
  if (!(a.config == b.config) || a.depth() != b.depth() || a.exits.size() != b.exits.size()) return false;
  for (auto [x, y] : {std::pair{&a.token_embedding, &b.token_embedding}, {&a.position_embedding, &b.position_embedding},
                      {&a.emb_ln_gamma, &b.emb_ln_gamma}, {&a.emb_ln_beta, &b.emb_ln_beta}})
    if (!same_tensor(*x, *y)) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto &p = a.layers[i], &q = b.layers[i];
    if (p.heads != q.heads || p.ff != q.ff) return false;
    for (auto [x, y] : {std::pair{&p.query, &q.query}, {&p.key, &q.key}, {&p.value, &q.value}, {&p.output, &q.output},
                        {&p.ff_in, &q.ff_in}, {&p.ff_out, &q.ff_out}})
      if (!same_linear(*x, *y)) return false;
    for (auto [x, y] : {std::pair{&p.ln1_gamma, &q.ln1_gamma}, {&p.ln1_beta, &q.ln1_beta}, {&p.ln2_gamma, &q.ln2_gamma},
                        {&p.ln2_beta, &q.ln2_beta}})
      if (!same_tensor(*x, *y)) return false;
  }
  if (!same_linear(a.classifier, b.classifier)) return false;
  for (std::size_t i = 0; i < a.exits.size(); ++i)
    if (!same_linear(a.exits[i], b.exits[i])) return false;
  return true;
}

inline bool same_artifact(const effops::ModelArtifact& a, const effops::ModelArtifact& b) {
  return same_model(a.model, b.model) && a.provenance == b.provenance && a.l_flag == b.l_flag;
}

}  // namespace model_eq
