#include "effops/cost.hpp"

#include <string>

#include "effops/error.hpp"

namespace effops {

void CostModel::validate() const {
  auto in_unit = [](double k) { return k > 0.0 && k <= 1.0; };
  if (!in_unit(kappa_weight_matmul) || !in_unit(kappa_attention_matmul)) {
    throw ValidationError("cost model kappas must lie in (0, 1]");
  }
}

double count_macs(const CostSnapshot& snapshot, int seq_len, int exit_layer, const QuantFlags& quant,
                  const CostModel& cost) {
  if (exit_layer < 1 || exit_layer > static_cast<int>(snapshot.layers.size())) {
    throw ValidationError("count_macs: exit layer " + std::to_string(exit_layer) + " outside [1, " +
                          std::to_string(snapshot.layers.size()) + "]");
  }
  if (seq_len < 1) throw ValidationError("count_macs: sequence length must be positive");
  const double s = seq_len;
  const double d = snapshot.d_model;
  const double kw = quant.weight_matmuls ? cost.kappa_weight_matmul : 1.0;
  const double ka = quant.attention_matmuls ? cost.kappa_attention_matmul : 1.0;
  double total = 0.0;
  for (int i = 0; i < exit_layer; ++i) {
    const auto& layer = snapshot.layers[static_cast<std::size_t>(i)];
    const double width = static_cast<double>(layer.heads) * snapshot.d_head;
    const double projections = 4.0 * s * d * width;
    const double attention = 2.0 * s * s * width;
    const double ffn = 2.0 * s * d * layer.ff;
    total += kw * (projections + ffn) + ka * attention;
  }
  total += d * snapshot.n_classes;
  return total;
}

}  // namespace effops
