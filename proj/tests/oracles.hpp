#pragma once

// Reference computations written directly from the defining formulas with
// plain loops. They share no code with the library's tape-based path.

#include <cmath>
#include <vector>

#include "cts/attention.hpp"
#include "cts/prompt.hpp"
#include "cts/tensor.hpp"

namespace cts::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  const std::size_t r = t.rank() == 1 ? 1 : t.dim(0), c = t.rank() == 1 ? t.dim(0) : t.dim(1);
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t[i * c + j];
  return m;
}

inline Tensor to_tensor(const Mat& m) {
  Tensor t({m.size(), m[0].size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t[i * m[0].size() + j] = m[i][j];
  return t;
}

inline Mat product(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

/// softmax(Q Kᵀ/√d_k) V, step by step.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v) {
  const double dk = static_cast<double>(q[0].size());
  Mat weights(q.size(), std::vector<double>(k.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t p = 0; p < q[0].size(); ++p) dot += q[i][p] * k[j][p];
      weights[i][j] = dot / std::sqrt(dk);
      mx = std::max(mx, weights[i][j]);
    }
    double z = 0.0;
    for (auto& w : weights[i]) z += (w = std::exp(w - mx));
    for (auto& w : weights[i]) w /= z;
  }
  return product(weights, v);
}

struct CtsPasses {
  Mat y, y_center, y_surround, fused, output;
};

/// Base pass and the three region passes, evaluated separately.
inline CtsPasses cts(const Tensor& f_img, const PromptEmbedding& pe, const Tensor& mask, const CtsAttnWeights& w) {
  CtsPasses r;
  const Mat fi = to_mat(f_img);
  const Mat q = product(fi, to_mat(w.base.w_q));
  // Base branch over the total prompt.
  r.y = attention(q, product(to_mat(pe.total), to_mat(w.base.w_k)), product(to_mat(pe.total), to_mat(w.base.w_v)));
  // Region branches.
  r.y_center = attention(q, product(to_mat(pe.center), to_mat(w.center.w_k)),
                         product(to_mat(pe.center), to_mat(w.center.w_v)));
  r.y_surround = attention(q, product(to_mat(pe.surrounding), to_mat(w.surround.w_k)),
                           product(to_mat(pe.surrounding), to_mat(w.surround.w_v)));
  // Mask gating.
  r.fused = r.y;
  for (std::size_t i = 0; i < r.y.size(); ++i)
    for (std::size_t j = 0; j < r.y[0].size(); ++j)
      r.fused[i][j] = r.y_center[i][j] * (1.0 - mask[i]) + r.y_surround[i][j] * mask[i];
  // Fusion.
  const double a = w.a[0];
  r.output = r.y;
  for (std::size_t i = 0; i < r.y.size(); ++i)
    for (std::size_t j = 0; j < r.y[0].size(); ++j) r.output[i][j] = (1.0 - a) * r.y[i][j] + a * r.fused[i][j];
  return r;
}

/// Per-cell mean and threshold, cell by cell.
inline Tensor resize_mask(const Tensor& pixel, std::size_t gh, std::size_t gw) {
  const std::size_t h = pixel.dim(0), w = pixel.dim(1), ch = h / gh, cw = w / gw;
  Tensor out({gh * gw});
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j) {
      double s = 0.0;
      for (std::size_t y = i * ch; y < (i + 1) * ch; ++y)
        for (std::size_t x = j * cw; x < (j + 1) * cw; ++x) s += pixel[y * w + x];
      out[i * gw + j] = 2.0 * s >= static_cast<double>(ch * cw) ? 1.0 : 0.0;
    }
  return out;
}

inline double max_abs(const Mat& a, const Tensor& b) {
  double m = 0.0;
  const Mat bm = to_mat(b);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) m = std::max(m, std::abs(a[i][j] - bm[i][j]));
  return m;
}

}  // namespace cts::oracle
