#include "effops/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace effops::ops {

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record(Tensor& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  active_tape()->record(std::move(fn));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    const float* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      float* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
  if (tracking({&a, &b})) {
    record(out, [a, b, out, m, n, k]() mutable {
      if (!out.has_grad()) return;
      const float* g = out.grad().data();
      if (a.requires_grad()) {
        Tensor bt = transpose(b);
        gemm_nn(m, k, n, g, bt.data().data(), a.grad().data());
      }
      if (b.requires_grad()) gemm_tn(m, n, k, a.data().data(), g, b.grad().data());
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "linear");
  require_rank2(weight, "linear");
  const std::size_t m = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in) {
    throw std::invalid_argument("linear: input width " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.numel() != outd) throw std::invalid_argument("linear: bias size mismatch");
  Tensor out({m, outd});
  auto o = out.data();
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), o.begin() + static_cast<std::ptrdiff_t>(i * outd));
  }
  Tensor wt = transpose(weight);
  gemm_nn(m, outd, in, x.data().data(), wt.data().data(), o.data());
  if (tracking({&x, &weight, &bias})) {
    record(out, [x, weight, bias, out, m, in, outd]() mutable {
      if (!out.has_grad()) return;
      const float* g = out.grad().data();
      if (x.requires_grad()) gemm_nn(m, in, outd, g, weight.data().data(), x.grad().data());
      if (weight.requires_grad()) gemm_tn(m, in, outd, g, x.data().data(), weight.grad().data());
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < outd; ++j) gb[j] += g[i * outd + j];
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] + bd[i];
  if (tracking({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * bd[i];
  if (tracking({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ad = a.data(), bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * factor;
  if (tracking({&a})) {
    record(out, [a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  if (tracking({&x})) {
    record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      auto xd = x.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xd[i] > 0.0f) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (tracking({&x})) {
    record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const float g = out.grad()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  require_rank2(x, "softmax");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out(x.shape());
  auto xd = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    const float* row = xd.data() + i * c;
    float* orow = o.data() + i * c;
    const float mx = *std::max_element(row, row + c);
    float total = 0.0f;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= total;
  }
  if (tracking({&x})) {
    record(out, [x, out, r, c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < r; ++i) {
        float dot = 0.0f;
        for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank2(x, "layer_norm");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) throw std::invalid_argument("layer_norm: parameter width mismatch");
  Tensor out(x.shape());
  std::vector<float> xhat(r * c);
  std::vector<float> rstd(r);
  auto xd = x.data();
  auto o = out.data();
  auto gd = gamma.data(), bd = beta.data();
  for (std::size_t i = 0; i < r; ++i) {
    const float* row = xd.data() + i * c;
    float mean = 0.0f;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<float>(c);
    float var = 0.0f;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<float>(c);
    const float rs = 1.0f / std::sqrt(var + eps);
    rstd[i] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const float h = (row[j] - mean) * rs;
      xhat[i * c + j] = h;
      o[i * c + j] = h * gd[j] + bd[j];
    }
  }
  if (tracking({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd), r, c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gd = gamma.data();
      if (gamma.requires_grad()) {
        auto gg = gamma.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        const float inv_c = 1.0f / static_cast<float>(c);
        for (std::size_t i = 0; i < r; ++i) {
          float mean_d = 0.0f, mean_dx = 0.0f;
          for (std::size_t j = 0; j < c; ++j) {
            const float d = g[i * c + j] * gd[j];
            mean_d += d;
            mean_dx += d * xhat[i * c + j];
          }
          mean_d *= inv_c;
          mean_dx *= inv_c;
          for (std::size_t j = 0; j < c; ++j) {
            const float d = g[i * c + j] * gd[j];
            gx[i * c + j] += rstd[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t v = table.dim(0), d = table.dim(1), n = ids.size();
  Tensor out({n, d});
  auto td = table.data();
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, o.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (tracking({&table})) {
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    record(out, [table, out, saved = std::move(saved), d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(saved[i]) * d + j] += g[i * d + j];
    });
  }
  return out;
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "select_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({rows.size(), c});
  auto xd = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) throw std::out_of_range("select_rows: row index out of range");
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c, o.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  if (tracking({&x})) {
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    record(out, [x, out, saved = std::move(saved), c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) gx[saved[i] * c + j] += g[i * c + j];
    });
  }
  return out;
}

Tensor group_gate(const Tensor& x, const Tensor& gates, std::size_t rows_per_example, std::size_t group_size) {
  require_rank2(x, "group_gate");
  require_rank2(gates, "group_gate");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const std::size_t examples = gates.dim(0), groups = gates.dim(1);
  if (c != groups * group_size || r != examples * rows_per_example) {
    throw std::invalid_argument("group_gate: x " + shape_str(x.shape()) + " incompatible with gates " +
                                shape_str(gates.shape()));
  }
  Tensor out(x.shape());
  auto xd = x.data();
  auto gd = gates.data();
  auto o = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    const float* grow = gd.data() + (i / rows_per_example) * groups;
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] = xd[i * c + j] * grow[j / group_size];
  }
  if (tracking({&x, &gates})) {
    record(out, [x, gates, out, r, c, groups, rows_per_example, group_size]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xd = x.data();
      auto gd = gates.data();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < r; ++i) {
          const float* grow = gd.data() + (i / rows_per_example) * groups;
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * grow[j / group_size];
        }
      }
      if (gates.requires_grad()) {
        auto gg = gates.grad();
        for (std::size_t i = 0; i < r; ++i) {
          float* ggrow = gg.data() + (i / rows_per_example) * groups;
          for (std::size_t j = 0; j < c; ++j) ggrow[j / group_size] += g[i * c + j] * xd[i * c + j];
        }
      }
    });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& s) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t width = s.heads * s.d_head;
  if (q.rank() != 2 || q.dim(0) != s.batch * s.seq || q.dim(1) != width || s.lengths.size() != s.batch) {
    throw std::invalid_argument("attention: layout " + shape_str(q.shape()) + " does not match batch/seq/heads");
  }
  const std::size_t S = s.seq, H = s.heads, dh = s.d_head;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<int> lengths(s.lengths.begin(), s.lengths.end());
  for (int len : lengths) {
    if (len < 1 || static_cast<std::size_t>(len) > S) throw std::invalid_argument("attention: bad sequence length");
  }

  Tensor out(q.shape());
  std::vector<float> probs(s.batch * H * S * S, 0.0f);
  auto qd = q.data(), kd = k.data(), vd = v.data();
  auto o = out.data();
  for (std::size_t b = 0; b < s.batch; ++b) {
    const std::size_t len = static_cast<std::size_t>(lengths[b]);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < len; ++i) {
        const float* qi = qd.data() + (b * S + i) * width + h * dh;
        float* p = probs.data() + ((b * H + h) * S + i) * S;
        float mx = -INFINITY;
        for (std::size_t j = 0; j < len; ++j) {
          const float* kj = kd.data() + (b * S + j) * width + h * dh;
          float dot = 0.0f;
          for (std::size_t t = 0; t < dh; ++t) dot += qi[t] * kj[t];
          p[j] = dot * inv_sqrt;
          mx = std::max(mx, p[j]);
        }
        float total = 0.0f;
        for (std::size_t j = 0; j < len; ++j) {
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        float* oi = o.data() + (b * S + i) * width + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          p[j] /= total;
          const float* vj = vd.data() + (b * S + j) * width + h * dh;
          for (std::size_t t = 0; t < dh; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }

  if (tracking({&q, &k, &v})) {
    record(out, [q, k, v, out, probs = std::move(probs), lengths = std::move(lengths), S, H, dh, width,
                 inv_sqrt]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto qd = q.data(), kd = k.data(), vd = v.data();
      std::span<float> gq = q.requires_grad() ? q.grad() : std::span<float>();
      std::span<float> gk = k.requires_grad() ? k.grad() : std::span<float>();
      std::span<float> gv = v.requires_grad() ? v.grad() : std::span<float>();
      std::vector<float> dp(S);
      for (std::size_t b = 0; b < lengths.size(); ++b) {
        const std::size_t len = static_cast<std::size_t>(lengths[b]);
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t i = 0; i < len; ++i) {
            const float* p = probs.data() + ((b * H + h) * S + i) * S;
            const float* gi = g.data() + (b * S + i) * width + h * dh;
            float dot = 0.0f;
            for (std::size_t j = 0; j < len; ++j) {
              const float* vj = vd.data() + (b * S + j) * width + h * dh;
              float acc = 0.0f;
              for (std::size_t t = 0; t < dh; ++t) acc += gi[t] * vj[t];
              dp[j] = acc;
              dot += acc * p[j];
              if (!gv.empty()) {
                float* gvj = gv.data() + (b * S + j) * width + h * dh;
                for (std::size_t t = 0; t < dh; ++t) gvj[t] += p[j] * gi[t];
              }
            }
            const float* qi = qd.data() + (b * S + i) * width + h * dh;
            float* gqi = gq.empty() ? nullptr : gq.data() + (b * S + i) * width + h * dh;
            for (std::size_t j = 0; j < len; ++j) {
              const float ds = p[j] * (dp[j] - dot) * inv_sqrt;
              if (ds == 0.0f) continue;
              const float* kj = kd.data() + (b * S + j) * width + h * dh;
              if (gqi != nullptr)
                for (std::size_t t = 0; t < dh; ++t) gqi[t] += ds * kj[t];
              if (!gk.empty()) {
                float* gkj = gk.data() + (b * S + j) * width + h * dh;
                for (std::size_t t = 0; t < dh; ++t) gkj[t] += ds * qi[t];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction) {
  require_rank2(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  std::vector<float> probs(n * c);
  auto ld = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) throw std::out_of_range("cross_entropy: label out of range");
    const float* row = ld.data() + i * c;
    const float mx = *std::max_element(row, row + c);
    float z = 0.0f;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += -(row[static_cast<std::size_t>(labels[i])] - mx - std::log(z));
  }
  const float norm = reduction == Reduction::Mean ? 1.0f / static_cast<float>(n) : 1.0f;
  Tensor out = Tensor::scalar(static_cast<float>(total) * norm);
  if (tracking({&logits})) {
    std::vector<int> saved(labels.begin(), labels.end());
    record(out, [logits, out, probs = std::move(probs), saved = std::move(saved), n, c, norm]() mutable {
      if (!out.has_grad()) return;
      const float g = out.grad()[0] * norm;
      auto gl = logits.grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const float target = static_cast<std::size_t>(saved[i]) == j ? 1.0f : 0.0f;
          gl[i * c + j] += g * (probs[i * c + j] - target);
        }
      }
    });
  }
  return out;
}

Tensor soft_cross_entropy(const Tensor& student_logits, const Tensor& teacher_logits) {
  require_same_shape(student_logits, teacher_logits, "soft_cross_entropy");
  require_rank2(student_logits, "soft_cross_entropy");
  const std::size_t n = student_logits.dim(0), c = student_logits.dim(1);
  std::vector<float> ps(n * c), pt(n * c);
  auto sd = student_logits.data(), td = teacher_logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* srow = sd.data() + i * c;
    const float* trow = td.data() + i * c;
    const float smx = *std::max_element(srow, srow + c);
    const float tmx = *std::max_element(trow, trow + c);
    float sz = 0.0f, tz = 0.0f;
    for (std::size_t j = 0; j < c; ++j) {
      ps[i * c + j] = std::exp(srow[j] - smx);
      sz += ps[i * c + j];
      pt[i * c + j] = std::exp(trow[j] - tmx);
      tz += pt[i * c + j];
    }
    const float log_sz = std::log(sz);
    for (std::size_t j = 0; j < c; ++j) {
      ps[i * c + j] /= sz;
      pt[i * c + j] /= tz;
      total += -static_cast<double>(pt[i * c + j]) * (srow[j] - smx - log_sz);
    }
  }
  const float norm = 1.0f / static_cast<float>(n);
  Tensor out = Tensor::scalar(static_cast<float>(total) * norm);
  if (tracking({&student_logits})) {
    record(out, [student_logits, out, ps = std::move(ps), pt = std::move(pt), norm]() mutable {
      if (!out.has_grad()) return;
      const float g = out.grad()[0] * norm;
      auto gs = student_logits.grad();
      for (std::size_t i = 0; i < ps.size(); ++i) gs[i] += g * (ps[i] - pt[i]);
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  auto ad = a.data(), bd = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double d = static_cast<double>(ad[i]) - bd[i];
    total += d * d;
  }
  const float norm = 1.0f / static_cast<float>(ad.size());
  Tensor out = Tensor::scalar(static_cast<float>(total) * norm);
  if (tracking({&a, &b})) {
    record(out, [a, b, out, norm]() mutable {
      if (!out.has_grad()) return;
      const float g = out.grad()[0] * 2.0f * norm;
      auto ad = a.data(), bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ad.size(); ++i) ga[i] += g * (ad[i] - bd[i]);
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < ad.size(); ++i) gb[i] -= g * (ad[i] - bd[i]);
      }
    });
  }
  return out;
}

}  // namespace effops::ops
