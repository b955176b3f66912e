#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cts/attention.hpp"
#include "cts/autodiff.hpp"
#include "cts/prompt.hpp"
#include "cts/tensor.hpp"

namespace cts {

/// Cross-attention variant used at every conditioning site.
enum class AttentionKind { cts, baseline };

struct DenoiserConfig {
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t patch_size = 2;
  std::size_t d_model = 64;
  std::size_t n_blocks = 4;
  std::size_t d_text = 32;
  std::size_t center_len = 8;
  std::size_t surround_len = 8;
  std::size_t ff_mult = 4;
  std::size_t vocab_size = 0;  // 0 = synthetic vocabulary size
  int steps = 1000;
  AttentionKind attention = AttentionKind::cts;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t input_channels() const { return 2 * channels + 1; }
  std::size_t patch_in() const { return patch_size * patch_size * input_channels(); }
  std::size_t patch_out() const { return patch_size * patch_size * channels; }

  /// Throws ConfigError on a zero dimension or an image not divisible by the patch.
  void validate() const;
  /// key=value lines, in a stable order.
  std::map<std::string, std::string> to_map() const;
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct Linear {
  Tensor w;  // in × out
  Tensor b;  // out
};

struct BlockParams {
  Tensor norm1_gain, norm1_bias;
  Tensor self_q, self_k, self_v, self_o;
  Tensor norm2_gain, norm2_bias;
  CtsAttnWeights cross;
  Tensor norm3_gain, norm3_bias;
  Linear ff_in, ff_out;
};

struct DenoiserParams {
  Tensor text_table;  // |V| × d_text
  Linear patch_embed;
  Tensor position;  // tokens × d_model
  Linear time_in, time_out;
  std::vector<BlockParams> blocks;
  Tensor norm_out_gain, norm_out_bias;
  Linear head;

  /// Visits every tensor in declaration order with a stable dotted name.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t parameter_count() const;
  /// The fusion scalar of every site, in block order.
  std::vector<double> fusion_values() const;
};

/// Seeded initialization. Every tensor except the fusion scalars is a pure
/// function of (cfg, seed); the scalars follow `format`, with RIF drawing
/// from its own stream derived from `seed`.
DenoiserParams init_denoiser(const DenoiserConfig& cfg, FusionFormat format, std::uint64_t seed);

/// Number of conditioning sites; CTS replaces every one of them.
std::size_t count_cts_sites(const DenoiserConfig& cfg);

/// Sinusoidal embedding of timestep t into `dim` features (sin half, cos half).
Tensor timestep_embedding(int t, std::size_t dim);

/// Noise prediction on a tape. masked_img must equal original ⊙ (1 − mask);
/// pixel_mask is binary with 1 marking pixels to generate.
Var denoiser_forward(Tape& tape, DenoiserParams& params, const DenoiserConfig& cfg, const Var& x_t,
                     const Var& masked_img, const Tensor& pixel_mask, int t, const TokenIds& ids);

/// Tape-free convenience returning ε̂ with the same shape as x_t.
Tensor predict_noise(const DenoiserParams& params, const DenoiserConfig& cfg, const Tensor& x_t,
                     const Tensor& masked_img, const Tensor& pixel_mask, int t, const TokenIds& ids);

/// original ⊙ (1 − mask) broadcast over channels.
Tensor mask_image(const Tensor& image, const Tensor& pixel_mask);

}  // namespace cts
