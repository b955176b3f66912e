#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cts/denoiser.hpp"
#include "cts/diffusion.hpp"
#include "cts/prompt.hpp"
#include "cts/synth.hpp"

namespace cts {

/// original ⊙ (1 − mask) + generated ⊙ mask, mask broadcast over channels.
Tensor copy_center(const Tensor& generated, const Tensor& original, const Tensor& pixel_mask);

struct Detection {
  std::vector<std::string> center;       // [shape, color, size]
  std::vector<std::string> surrounding;  // [texture, color, density]
};

/// Closed-vocabulary inverse of the synthetic renderer. Surrounding words come
/// from the masked pixels, center words from the lit foreground of the kept
/// pixels. Color ties resolve in palette order (red, green, blue, yellow, white).
Detection detect_keywords(const Tensor& image, const Tensor& pixel_mask);

/// Nearest palette color index to an RGB triple.
std::size_t nearest_color(const std::array<double, 3>& rgb);

/// 50-step style deterministic DDIM chain from x_T ~ N(0, I); result clamped to [-1, 1].
Tensor sample_ddim(const DenoiserParams& params, const DenoiserConfig& cfg, const NoiseSchedule& schedule,
                   const Tensor& masked_img, const Tensor& pixel_mask, const TokenIds& ids, int infer_steps,
                   std::mt19937_64& rng);

enum class PromptMode {
  dataset_captions,
  unconditional,
  swap_surround_color,  // surrounding color replaced by the next palette color
  custom,               // one fixed prompt for every sample
};

PromptMode parse_prompt_mode(const std::string& text);

struct EvalOptions {
  PromptMode mode = PromptMode::dataset_captions;
  CsPrompt custom;
  int infer_steps = 50;
  bool copy = true;
  std::uint64_t seed = 0;
  std::filesystem::path image_dir;  // empty = do not write samples
};

struct EvalReport {
  double region_accuracy_center = 0.0;
  double region_accuracy_surrounding = 0.0;
  double center_mse = 0.0;      // over kept pixels of the final output
  double center_mse_raw = 0.0;  // same, before copy_center
  std::size_t n_samples = 0;
  double chance = 0.0;        // 1 / (|colors| · |textures|)
  double chance_sigma = 0.0;  // binomial standard error of chance at n_samples

  std::string to_text() const;
  std::string to_json() const;
};

/// The prompt a sample is conditioned on under `mode`.
CsPrompt conditioning_prompt(const SynthSample& sample, const EvalOptions& opts);

/// Samples the first n items of `dataset` with DDIM and scores region control.
/// A sample counts for the surrounding (center) region when both the detected
/// texture/shape and color match the conditioning prompt; an empty region in
/// the prompt is scored against the sample's own caption.
EvalReport evaluate(const DenoiserParams& params, const DenoiserConfig& cfg, const NoiseSchedule& schedule,
                    const std::vector<SynthSample>& dataset, std::size_t n, const EvalOptions& opts);

}  // namespace cts
