#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "effops/tensor.hpp"

namespace effops {

// Symmetric per-tensor int8 tensor: value = qdata * scale, zero point fixed at 0.
struct QuantizedTensor {
  Shape shape;
  std::vector<std::int8_t> qdata;
  float scale = 1.0f;
  std::int32_t zero_point = 0;

  std::size_t numel() const { return qdata.size(); }
};

inline constexpr int kQuantMax = 127;

// scale = max|t| / 127 (1 for an all-zero tensor); qdata = round(t / scale)
// clamped to [-127, 127]. Throws NumericError on non-finite input.
QuantizedTensor quantize(const Tensor& t);
QuantizedTensor quantize(std::span<const float> values, Shape shape);
Tensor dequantize(const QuantizedTensor& q);

// (a.scale * b.scale) * (int8 a [m,k] x int8 b [k,n]) with int32 accumulation.
Tensor qmatmul(const QuantizedTensor& a, const QuantizedTensor& b);

// c[m,n] = sum_k a[i,k] * b[j,k] over int8 rows, int32 accumulation.
void int8_gemm_bt(std::size_t m, std::size_t n, std::size_t k, const std::int8_t* a, const std::int8_t* b,
                  std::int32_t* c);

// Symmetric scale for a block of activations; 1 for an all-zero block.
float symmetric_scale(std::span<const float> values);
std::int8_t quantize_value(float value, float scale);

}  // namespace effops
