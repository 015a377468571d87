#include "effops/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "effops/error.hpp"

namespace effops {

float symmetric_scale(std::span<const float> values) {
  float max_abs = 0.0f;
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericError("quantize: non-finite value");
    max_abs = std::max(max_abs, std::fabs(v));
  }
  return max_abs == 0.0f ? 1.0f : max_abs / static_cast<float>(kQuantMax);
}

std::int8_t quantize_value(float value, float scale) {
  // Double division: ties on float inputs are resolved exactly.
  const double r = std::round(static_cast<double>(value) / static_cast<double>(scale));
  return static_cast<std::int8_t>(std::clamp(r, -static_cast<double>(kQuantMax), static_cast<double>(kQuantMax)));
}

QuantizedTensor quantize(std::span<const float> values, Shape shape) {
  if (values.size() != shape_numel(shape)) throw std::invalid_argument("quantize: shape/data size mismatch");
  QuantizedTensor q;
  q.shape = std::move(shape);
  q.scale = symmetric_scale(values);
  q.qdata.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) q.qdata[i] = quantize_value(values[i], q.scale);
  return q;
}

QuantizedTensor quantize(const Tensor& t) { return quantize(t.data(), t.shape()); }

Tensor dequantize(const QuantizedTensor& q) {
  Tensor out(q.shape);
  auto o = out.data();
  for (std::size_t i = 0; i < q.qdata.size(); ++i) o[i] = static_cast<float>(q.qdata[i]) * q.scale;
  return out;
}

void int8_gemm_bt(std::size_t m, std::size_t n, std::size_t k, const std::int8_t* a, const std::int8_t* b,
                  std::int32_t* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const std::int8_t* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const std::int8_t* brow = b + j * k;
      std::int32_t acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<std::int32_t>(arow[p]) * static_cast<std::int32_t>(brow[p]);
      c[i * n + j] = acc;
    }
  }
}

Tensor qmatmul(const QuantizedTensor& a, const QuantizedTensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("qmatmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<std::int8_t> bt(k * n);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b.qdata[p * n + j];
  std::vector<std::int32_t> acc(m * n);
  int8_gemm_bt(m, n, k, a.qdata.data(), bt.data(), acc.data());
  Tensor out({m, n});
  auto o = out.data();
  const double s = static_cast<double>(a.scale) * static_cast<double>(b.scale);
  for (std::size_t i = 0; i < acc.size(); ++i) o[i] = static_cast<float>(s * static_cast<double>(acc[i]));
  return out;
}

}  // namespace effops
