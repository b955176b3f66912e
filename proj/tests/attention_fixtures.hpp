#pragma once

#include <random>

#include "cts/attention.hpp"
#include "cts/prompt.hpp"

namespace cts::testing {

struct AttnCase {
  Tensor f_img;
  PromptEmbedding pe;
  RegionMask mask;
  CrossAttnWeights base;
  CtsAttnWeights cts;
};

/// Random shapes and values; the region branches are perturbed away from the
/// base copy unless `fresh_copy` is set.
inline AttnCase random_attn_case(std::mt19937_64& rng, bool fresh_copy = false) {
  auto dim = [&rng](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  const std::size_t n_img = dim(1, 9), d_img = dim(2, 6), d_text = dim(2, 5), d_k = dim(1, 5), d_v = dim(1, 5);
  const std::size_t lc = dim(1, 5), ls = dim(1, 5);
  AttnCase c;
  c.f_img = Tensor::uniform({n_img, d_img}, -2.0, 2.0, rng);
  c.pe.center = Tensor::uniform({lc, d_text}, -2.0, 2.0, rng);
  c.pe.surrounding = Tensor::uniform({ls, d_text}, -2.0, 2.0, rng);
  c.pe.total = Tensor({lc + ls, d_text});
  c.pe.total.matrix() << c.pe.center.matrix(), c.pe.surrounding.matrix();
  c.mask.values = Tensor({n_img});
  for (std::size_t i = 0; i < n_img; ++i) c.mask.values[i] = static_cast<double>(rng() % 2);
  c.base = {Tensor::uniform({d_img, d_k}, -1.0, 1.0, rng), Tensor::uniform({d_text, d_k}, -1.0, 1.0, rng),
            Tensor::uniform({d_text, d_v}, -1.0, 1.0, rng)};
  c.cts = init_cts_from_base(c.base, FusionFormat{FusionFormat::Mode::lf}, rng);
  if (!fresh_copy) {
    for (Tensor* t : {&c.cts.center.w_k, &c.cts.center.w_v, &c.cts.surround.w_k, &c.cts.surround.w_v})
      t->data() += Tensor::uniform(t->shape(), -0.5, 0.5, rng).data();
    c.cts.a[0] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }
  return c;
}

}  // namespace cts::testing
