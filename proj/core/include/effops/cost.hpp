#pragma once

#include <vector>

namespace effops {

// Relative cost of an int8 matmul against its float32 counterpart, per
// operation class. Quantization speeds weight matmuls and attention matmuls
// by different factors.
struct CostModel {
  double kappa_weight_matmul = 0.4;
  double kappa_attention_matmul = 0.8;

  void validate() const;
};

struct QuantFlags {
  bool weight_matmuls = false;
  bool attention_matmuls = false;
};

struct LayerShape {
  int heads = 0;  // kept attention heads
  int ff = 0;     // kept FFN intermediate units
};

// Everything count_macs needs to know about a model's architecture.
struct CostSnapshot {
  int d_model = 0;
  int d_head = 0;
  int n_classes = 0;
  std::vector<LayerShape> layers;
};

// Multiply-accumulates for one example at padded length seq_len exiting after
// exit_layer (1-based) layers. Per executed layer:
//   projections 4*s*d*(h*dh) + attention 2*s^2*(h*dh) + FFN 2*s*d*ff,
// plus a single d*n_classes classifier. Embedding lookup is free.
double count_macs(const CostSnapshot& snapshot, int seq_len, int exit_layer, const QuantFlags& quant,
                  const CostModel& cost);

}  // namespace effops
