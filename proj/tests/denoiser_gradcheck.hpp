#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cts/denoiser.hpp"
#include "cts/synth.hpp"

namespace cts::testing {

/// The (8, 1, 2, 16, 1) toy: 8×8 single-channel images, 2×2 patches, width 16, one block.
inline DenoiserConfig gradcheck_config() {
  DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.channels = 1;
  cfg.patch_size = 2;
  cfg.d_model = 16;
  cfg.n_blocks = 1;
  cfg.d_text = 8;
  cfg.center_len = 5;
  cfg.surround_len = 5;
  cfg.ff_mult = 2;
  return cfg;
}

/// Moves every CTS site away from its copy-initialization so the region
/// branches and a all carry gradient.
inline void perturb_sites(DenoiserParams& p, std::mt19937_64& rng, double a) {
  for (auto& b : p.blocks) {
    for (Tensor* t : {&b.cross.center.w_k, &b.cross.center.w_v, &b.cross.surround.w_k, &b.cross.surround.w_v})
      t->data() += Tensor::normal(t->shape(), 0.3, rng).data();
    b.cross.a[0] = a;
  }
}

struct GradcheckResult {
  double worst_rel = 0.0;
  std::size_t checked = 0;
  double fusion_grad = 0.0;
};

/// Central differences against reverse mode on `n_params` randomly chosen
/// scalars (plus the fusion scalar). Error is |a − n| / max(|a| + |n|, 1e-6).
inline GradcheckResult denoiser_gradcheck(std::uint64_t seed, std::size_t n_params) {
  const DenoiserConfig cfg = gradcheck_config();
  std::mt19937_64 rng(seed);
  auto params = init_denoiser(cfg, FusionFormat{FusionFormat::Mode::lf}, seed);
  perturb_sites(params, rng, 0.4);
  const Tensor mask = make_center_mask(8, 4);
  const Tensor x = Tensor::uniform({1, 8, 8}, -1, 1, rng);
  const Tensor masked = mask_image(Tensor::uniform({1, 8, 8}, -1, 1, rng), mask);
  const Tensor upstream = Tensor::uniform({1, 8, 8}, -1, 1, rng);
  const TokenIds ids = tokenize(parse_prompt("Center:triangle,yellow; Surrounding:stripes,red,fine"),
                                synthetic_vocab(), cfg.center_len, cfg.surround_len);
  const int t = 123;

  auto objective = [&]() { return predict_noise(params, cfg, x, masked, mask, t, ids).data().dot(upstream.data()); };

  params.for_each([](const std::string&, Tensor& p) { p.zero_grad(); });
  {
    Tape tape;
    const Var y = denoiser_forward(tape, params, cfg, tape.constant(x), tape.constant(masked), mask, t, ids);
    tape.backward(sum(mul(y, tape.constant(upstream))));
  }

  // Embedding rows of tokens absent from the prompt have no path to the output.
  std::vector<int> used(params.text_table.dim(0), 0);
  for (int id : ids.center) used[id] = 1;
  for (int id : ids.surrounding) used[id] = 1;
  std::vector<std::pair<Tensor*, std::size_t>> candidates;
  params.for_each([&](const std::string&, Tensor& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (&p == &params.text_table && !used[i / p.dim(1)]) continue;
      candidates.emplace_back(&p, i);
    }
  });
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(n_params, candidates.size()));
  candidates.emplace_back(&params.blocks[0].cross.a, 0);

  GradcheckResult r;
  const double h = 1e-5;
  for (auto [p, i] : candidates) {
    const double saved = (*p)[i];
    (*p)[i] = saved + h;
    const double up = objective();
    (*p)[i] = saved - h;
    const double down = objective();
    (*p)[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = p->grad()[i];
    r.worst_rel = std::max(r.worst_rel, std::abs(numeric - analytic) / std::max(std::abs(numeric) + std::abs(analytic), 1e-6));
    ++r.checked;
  }
  r.fusion_grad = params.blocks[0].cross.a.grad()[0];
  return r;
}

}  // namespace cts::testing
