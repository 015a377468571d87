#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "effops/tensor.hpp"

// Differentiable tensor operations. Every op records a backward closure on the
// active tape when at least one input requires a gradient; otherwise it is a
// plain forward computation. All matrices are 2-D row-major.
namespace effops::ops {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x [m,in], weight [out,in], bias [out] (may be undefined) -> x * weight^T + bias
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);

// Row-wise softmax over the last axis.
Tensor softmax(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

// Gathers rows of table [V,d] -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);

// Multiplies column groups by per-example gates.
// x: [examples * rows_per_example, groups * group_size], gates: [examples, groups].
Tensor group_gate(const Tensor& x, const Tensor& gates, std::size_t rows_per_example,
                  std::size_t group_size);

struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 0;
  std::size_t d_head = 0;
  // Valid (non-pad) prefix length of each example; keys beyond it are masked
  // and query rows beyond it produce zeros.
  std::span<const int> lengths;
};

// Scaled dot-product self-attention over q,k,v laid out [batch*seq, heads*d_head].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape);

enum class Reduction { Mean, Sum };

// Cross-entropy of logits [n,c] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction = Reduction::Mean);

// -sum softmax(teacher) * log softmax(student), averaged over rows. Teacher
// logits are constants.
Tensor soft_cross_entropy(const Tensor& student_logits, const Tensor& teacher_logits);

// Mean squared error over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

// Kernels shared with the quantized path and tests.
Tensor transpose(const Tensor& x);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);

}  // namespace effops::ops
