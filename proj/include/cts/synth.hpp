#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cts/prompt.hpp"
#include "cts/tensor.hpp"

namespace cts {

/// Closed vocabulary of the synthetic captioner.
namespace words {
inline const std::array<std::string, 3> shapes = {"square", "circle", "triangle"};
/// Also the nearest-color tie-break order.
inline const std::array<std::string, 5> colors = {"red", "green", "blue", "yellow", "white"};
inline const std::array<std::string, 2> sizes = {"small", "large"};
inline const std::array<std::string, 3> textures = {"solid", "stripes", "checker"};
inline const std::array<std::string, 3> densities = {"fine", "coarse", "plain"};
}  // namespace words

/// RGB in [-1, 1] for each entry of words::colors.
const std::array<std::array<double, 3>, 5>& palette();

const Vocab& synthetic_vocab();

struct SynthSpec {
  std::size_t image_size = 16;
  std::size_t center_size = 8;

  /// Throws BadGeometry unless 8 ≤ center_size < image_size, both even.
  void validate() const;
  std::size_t large_side() const;
  std::size_t small_side() const;
};

struct SynthSample {
  std::uint64_t seed = 0;
  Tensor image;       // 3×H×W in [-1, 1]
  Tensor pixel_mask;  // H×W, 1 = surrounding
  CsPrompt caption;
};

/// Renders one sample: a shape on a dark center patch inside a textured
/// surround. Caption is [shape, color, size] / [texture, color, density].
SynthSample generate(std::uint64_t seed, const SynthSpec& spec);

/// Ones everywhere except the centered center_size² block.
Tensor make_center_mask(std::size_t image_size, std::size_t center_size);

/// Union of 1-3 seeded ellipses around the center is kept (0); the rest is 1.
/// Radii grow until at least min_keep_fraction of pixels is kept.
Tensor make_irregular_mask(std::uint64_t seed, std::size_t image_size, double min_keep_fraction);

/// Replaces the captions of round(uncond_fraction · n) samples, chosen by a
/// seeded shuffle, with the empty prompt.
std::vector<SynthSample> split_conditional(std::vector<SynthSample> samples, double uncond_fraction,
                                           std::uint64_t seed);

/// Hook for rejecting noisy captions. Constructive captions need no filtering.
using SampleFilter = std::function<bool(const SynthSample&)>;
bool accept_all(const SynthSample&);

/// Samples generate(base_seed + i) for i = 0..n-1 that pass `filter`.
std::vector<SynthSample> generate_dataset(std::size_t n, std::uint64_t base_seed, const SynthSpec& spec,
                                          const SampleFilter& filter = accept_all);

}  // namespace cts
