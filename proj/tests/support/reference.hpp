#pragma once

// Double-precision reference implementations used as test oracles. They are
// written directly from the textbook definitions and share no code with the
// library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "effops/model.hpp"

namespace ref {

using Vec = std::vector<double>;

inline Vec to_double(const effops::Tensor& t) {
  auto d = t.data();
  return Vec(d.begin(), d.end());
}

// a [m,k] * b [k,n]
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// x [m,in] * w[out,in]^T + b
inline Vec linear(const Vec& x, const Vec& w, const Vec& b, std::size_t m, std::size_t in, std::size_t out) {
  Vec y(m * out);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.empty() ? 0.0 : b[o];
      for (std::size_t p = 0; p < in; ++p) s += x[i * in + p] * w[o * in + p];
      y[i * out + o] = s;
    }
  return y;
}

inline Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, std::size_t rows, std::size_t cols,
                      double eps = 1e-5) {
  Vec y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x[r * cols + c];
    mean /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) var += (x[r * cols + c] - mean) * (x[r * cols + c] - mean);
    var /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = (x[r * cols + c] - mean) / std::sqrt(var + eps) * g[c] + b[c];
  }
  return y;
}

inline Vec softmax(const Vec& x, std::size_t rows, std::size_t cols) {
  Vec y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY, z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = std::exp(x[r * cols + c] - mx) / z;
  }
  return y;
}

inline double cross_entropy(const Vec& logits, const std::vector<int>& labels, std::size_t classes, bool mean = true) {
  const Vec p = softmax(logits, labels.size(), classes);
  double s = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) s -= std::log(p[r * classes + static_cast<std::size_t>(labels[r])]);
  return mean ? s / static_cast<double>(labels.size()) : s;
}

inline double soft_cross_entropy(const Vec& student, const Vec& teacher, std::size_t rows, std::size_t classes) {
  const Vec pt = softmax(teacher, rows, classes), ps = softmax(student, rows, classes);
  double s = 0.0;
  for (std::size_t i = 0; i < pt.size(); ++i) s -= pt[i] * std::log(ps[i]);
  return s / static_cast<double>(rows);
}

inline double mse(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// q,k,v [batch*seq, heads*dh]; keys at or beyond lengths[b] are ignored, pad
// query rows give zeros.
inline Vec attention(const Vec& q, const Vec& k, const Vec& v, std::size_t batch, std::size_t seq,
                     std::size_t heads, std::size_t dh, const std::vector<int>& lengths) {
  const std::size_t w = heads * dh;
  Vec out(batch * seq * w, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto len = static_cast<std::size_t>(lengths[b]);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < len; ++i) {
        Vec score(len);
        for (std::size_t j = 0; j < len; ++j) {
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += q[(b * seq + i) * w + h * dh + t] * k[(b * seq + j) * w + h * dh + t];
          score[j] = s / std::sqrt(static_cast<double>(dh));
        }
        const Vec p = softmax(score, 1, len);
        for (std::size_t t = 0; t < dh; ++t) {
          double s = 0.0;
          for (std::size_t j = 0; j < len; ++j) s += p[j] * v[(b * seq + j) * w + h * dh + t];
          out[(b * seq + i) * w + h * dh + t] = s;
        }
      }
  }
  return out;
}

// Parameters in TransformerModel::parameters() order (float model only).
struct Model {
  effops::ModelConfig config;
  std::vector<int> heads, ff;
  bool exits = false;
  std::vector<Vec> params;

  explicit Model(const effops::TransformerModel& m) : config(m.config), exits(m.has_exits()) {
    for (const auto& l : m.layers) {
      heads.push_back(l.heads);
      ff.push_back(l.ff);
    }
    for (const auto& p : m.parameters()) params.push_back(to_double(p));
  }
};

// ReLU on/off pattern per layer. Finite differences through a frozen pattern
// give the derivative of the linear piece the base point sits on, so steps
// that would cross a kink don't pollute the estimate.
struct ReluPattern {
  bool frozen = false;
  std::vector<std::vector<char>> on;
};

// Per-exit logits [batch, classes] for every exit (only the final one for
// exit-free models). Optional gates scale head outputs and FFN units.
inline std::vector<Vec> logits(const Model& m, const effops::TokenBatch& batch,
                               const std::vector<Vec>* head_gates = nullptr,
                               const std::vector<Vec>* ffn_gates = nullptr, ReluPattern* relu = nullptr) {
  const auto& c = m.config;
  const auto d = static_cast<std::size_t>(c.d_model), dh = static_cast<std::size_t>(c.d_head);
  const std::size_t B = batch.batch, S = batch.seq, rows = B * S;
  const std::vector<int> lengths = batch.lengths();
  std::size_t at = 0;
  auto next = [&]() -> const Vec& { return m.params[at++]; };
  const Vec& tok = next();
  const Vec& pos = next();
  const Vec& eg = next();
  const Vec& eb = next();
  Vec x(rows * d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j)
      x[r * d + j] = tok[static_cast<std::size_t>(batch.ids[r]) * d + j] + pos[(r % S) * d + j];
  x = layer_norm(x, eg, eb, rows, d);
  std::vector<Vec> hidden;
  for (std::size_t l = 0; l < m.heads.size(); ++l) {
    const auto h = static_cast<std::size_t>(m.heads[l]), f = static_cast<std::size_t>(m.ff[l]);
    const Vec &qw = next(), &qb = next(), &kw = next(), &kb = next(), &vw = next(), &vb = next();
    const Vec &ow = next(), &ob = next(), &iw = next(), &ib = next(), &fw = next(), &fb = next();
    const Vec &g1 = next(), &b1 = next(), &g2 = next(), &b2 = next();
    const Vec q = linear(x, qw, qb, rows, d, h * dh), k = linear(x, kw, kb, rows, d, h * dh),
              v = linear(x, vw, vb, rows, d, h * dh);
    Vec ctx = attention(q, k, v, B, S, h, dh, lengths);
    if (head_gates != nullptr)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < h * dh; ++j) ctx[r * h * dh + j] *= (*head_gates)[l][(r / S) * h + j / dh];
    Vec a = linear(ctx, ow, ob, rows, h * dh, d);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += x[i];
    const Vec x1 = layer_norm(a, g1, b1, rows, d);
    Vec hid = linear(x1, iw, ib, rows, d, f);
    if (relu != nullptr && !relu->frozen) {
      relu->on.emplace_back(hid.size());
      for (std::size_t i = 0; i < hid.size(); ++i) relu->on[l][i] = hid[i] > 0.0 ? 1 : 0;
    }
    for (std::size_t i = 0; i < hid.size(); ++i) {
      hid[i] = relu != nullptr ? (relu->on[l][i] != 0 ? hid[i] : 0.0) : std::max(0.0, hid[i]);
      if (ffn_gates != nullptr) hid[i] *= (*ffn_gates)[l][(i / f / S) * f + i % f];
    }
    Vec o = linear(hid, fw, fb, rows, f, d);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += x1[i];
    x = layer_norm(o, g2, b2, rows, d);
    hidden.push_back(x);
  }
  const auto n = static_cast<std::size_t>(c.n_classes);
  auto classify = [&](const Vec& hs, const Vec& w, const Vec& b) {
    Vec cls(B * d);
    for (std::size_t bb = 0; bb < B; ++bb) std::copy_n(hs.begin() + static_cast<std::ptrdiff_t>(bb * S * d), d, cls.begin() + static_cast<std::ptrdiff_t>(bb * d));
    return linear(cls, w, b, B, d, n);
  };
  const Vec& cw = next();
  const Vec& cb = next();
  std::vector<Vec> out;
  if (m.exits) {
    for (std::size_t l = 0; l + 1 < hidden.size(); ++l) {
      const Vec& w = next();
      const Vec& b = next();
      out.push_back(classify(hidden[l], w, b));
    }
  }
  out.push_back(classify(hidden.back(), cw, cb));
  if (relu != nullptr) relu->frozen = true;
  return out;
}

// Central difference of f around x[i].
inline double central_difference(Vec& x, std::size_t i, double h, const std::function<double()>& f) {
  const double keep = x[i];
  x[i] = keep + h;
  const double up = f();
  x[i] = keep - h;
  const double down = f();
  x[i] = keep;
  return (up - down) / (2.0 * h);
}

// ||a - b|| / max(||a||, ||b||), with exact zeros treated as agreement.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline std::vector<double> grad_of(const effops::Tensor& t) {
  auto g = t.grad();
  return std::vector<double>(g.begin(), g.end());
}

// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) ma += ra[i], mb += rb[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace ref
