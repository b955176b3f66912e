#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>

#include "cts/autodiff.hpp"
#include "cts/prompt.hpp"
#include "cts/tensor.hpp"

namespace cts {

/// Single-head image-to-text cross-attention projections.
struct CrossAttnWeights {
  Tensor w_q;  // d_img × d_k
  Tensor w_k;  // d_text × d_k
  Tensor w_v;  // d_text × d_v

  std::size_t d_k() const { return w_q.cols(); }
};

struct KvWeights {
  Tensor w_k;
  Tensor w_v;
};

/// Treatment of the fusion scalar: random frozen init, fixed constant, or learnable.
struct FusionFormat {
  enum class Mode { rif, cf, lf };
  Mode mode = Mode::lf;
  double constant = 0.5;  // used by cf only

  static FusionFormat parse(std::string_view text);  // "RIF", "CF", "CF(0.3)", "LF"
  std::string str() const;
  bool trainable() const { return mode == Mode::lf; }
  friend bool operator==(const FusionFormat&, const FusionFormat&) = default;
};

/// Center-Total-Surrounding weights: the base projections, the two region
/// key/value projections (sharing the base query), and the fusion scalar a.
struct CtsAttnWeights {
  CrossAttnWeights base;
  KvWeights center;
  KvWeights surround;
  Tensor a;  // one element; requires_grad only under LF
};

/// Token mask, one entry per image token: 1 = surrounding (generate), 0 = center (keep).
struct RegionMask {
  Tensor values;
};

/// Y = softmax(Q Kᵀ / √d_k) V with Q = F_I W_Q, K = F_T W_K, V = F_T W_V.
Var cross_attention(const Var& f_img, const Var& f_text, const Var& w_q, const Var& w_k, const Var& w_v);
Tensor cross_attention(const Tensor& f_img, const Tensor& f_text, const CrossAttnWeights& w);

/// Tape handles for every tensor of a CtsAttnWeights.
struct CtsAttnVars {
  Var w_q, w_k, w_v;
  Var center_k, center_v;
  Var surround_k, surround_v;
  Var a;
};

CtsAttnVars bind(Tape& tape, CtsAttnWeights& w);

/// The per-region branches and their recombination, exposed for inspection.
struct CtsTerms {
  Var total;     // Y
  Var center;    // Y^C
  Var surround;  // Y^S
  Var fused;     // Ŷ = Y^C ⊙ (1 - mask) + Y^S ⊙ mask
  Var output;    // (1 - a) Y + a Ŷ
};

CtsTerms cts_terms(const Var& f_img, const PromptStreams& text, const Var& token_mask, const CtsAttnVars& w);
Var cts_cross_attention(const Var& f_img, const PromptStreams& text, const Var& token_mask,
                        const CtsAttnVars& w);
Tensor cts_cross_attention(const Tensor& f_img, const PromptEmbedding& pe, const RegionMask& mask,
                           const CtsAttnWeights& w);

/// Deep-copies the base key/value projections into both region branches and
/// initializes a per `format` (RIF draws from `rng`).
CtsAttnWeights init_cts_from_base(const CrossAttnWeights& base, FusionFormat format, std::mt19937_64& rng);

/// Block-averages an H×W pixel mask onto an h×w token grid and thresholds at
/// 0.5; a cell at exactly 0.5 becomes 1.
RegionMask resize_mask(const Tensor& pixel_mask, std::size_t grid_h, std::size_t grid_w);

/// Throws MaskNotBinary unless every entry is 0 or 1.
void require_binary(const Tensor& mask, std::string_view what);

}  // namespace cts
