#include "cts/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cts/errors.hpp"

namespace cts {

const std::array<std::array<double, 3>, 5>& palette() {
  static const std::array<std::array<double, 3>, 5> rgb = {{
      {1.0, -1.0, -1.0},  // red
      {-1.0, 1.0, -1.0},  // green
      {-1.0, -1.0, 1.0},  // blue
      {1.0, 1.0, -1.0},   // yellow
      {1.0, 1.0, 1.0},    // white
  }};
  return rgb;
}

const Vocab& synthetic_vocab() {
  static const Vocab vocab = [] {
    std::vector<std::string> all;
    for (const auto& w : words::shapes) all.push_back(w);
    for (const auto& w : words::colors) all.push_back(w);
    for (const auto& w : words::sizes) all.push_back(w);
    for (const auto& w : words::textures) all.push_back(w);
    for (const auto& w : words::densities) all.push_back(w);
    return Vocab(std::move(all));
  }();
  return vocab;
}

void SynthSpec::validate() const {
  if (center_size < 8 || center_size >= image_size || center_size % 2 || image_size % 2)
    throw BadGeometry("need even sizes with 8 <= center_size < image_size, got " + std::to_string(image_size) +
                      "/" + std::to_string(center_size));
}

std::size_t SynthSpec::large_side() const { return (3 * center_size + 2) / 4; }
std::size_t SynthSpec::small_side() const { return center_size / 2; }

namespace {

constexpr double kCenterBackground = -0.5;
constexpr double kTextureOff = -1.0;

bool shape_covers(std::size_t shape, std::size_t side, std::size_t row, std::size_t col) {
  switch (shape) {
    case 0: return true;
    case 1: {
      const double r = side / 2.0;
      const double dy = row + 0.5 - r, dx = col + 0.5 - r;
      return dx * dx + dy * dy <= r * r;
    }
    default: return col <= row;
  }
}

}  // namespace

SynthSample generate(std::uint64_t seed, const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const std::size_t shape = pick(words::shapes.size());
  const std::size_t center_color = pick(words::colors.size());
  const std::size_t size = pick(words::sizes.size());
  const std::size_t texture = pick(words::textures.size());
  const std::size_t surround_color = pick(words::colors.size());
  const std::size_t density = pick(2);
  const bool horizontal = pick(2) == 1;

  const std::size_t n = spec.image_size, c = spec.center_size, lo = (n - c) / 2;
  const std::size_t cell = density == 0 ? 1 : 2;
  SynthSample s;
  s.seed = seed;
  s.image = Tensor({3, n, n});
  auto put = [&](std::size_t y, std::size_t x, const std::array<double, 3>& rgb) {
    for (std::size_t ch = 0; ch < 3; ++ch) s.image[(ch * n + y) * n + x] = rgb[ch];
  };
  const auto& fg = palette()[surround_color];
  const std::array<double, 3> off{kTextureOff, kTextureOff, kTextureOff};
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      bool on = true;
      if (texture == 1) on = ((horizontal ? y : x) / cell) % 2 == 0;
      if (texture == 2) on = (x / cell + y / cell) % 2 == 0;
      put(y, x, on ? fg : off);
    }

  const std::size_t side = size == 0 ? spec.small_side() : spec.large_side();
  const std::size_t inset = lo + (c - side) / 2;
  const std::array<double, 3> bg{kCenterBackground, kCenterBackground, kCenterBackground};
  for (std::size_t y = lo; y < lo + c; ++y)
    for (std::size_t x = lo; x < lo + c; ++x) {
      const bool inside = y >= inset && y < inset + side && x >= inset && x < inset + side &&
                          shape_covers(shape, side, y - inset, x - inset);
      put(y, x, inside ? palette()[center_color] : bg);
    }

  s.pixel_mask = make_center_mask(n, c);
  s.caption.center = {words::shapes[shape], words::colors[center_color], words::sizes[size]};
  s.caption.surrounding = {words::textures[texture], words::colors[surround_color],
                           texture == 0 ? words::densities[2] : words::densities[density]};
  return s;
}

Tensor make_center_mask(std::size_t image_size, std::size_t center_size) {
  if (image_size == 0 || center_size > image_size || image_size % 2 || center_size % 2)
    throw BadGeometry("center mask " + std::to_string(center_size) + " in " + std::to_string(image_size));
  Tensor m({image_size, image_size}, 1.0);
  const std::size_t lo = (image_size - center_size) / 2;
  for (std::size_t y = lo; y < lo + center_size; ++y)
    for (std::size_t x = lo; x < lo + center_size; ++x) m[y * image_size + x] = 0.0;
  return m;
}

Tensor make_irregular_mask(std::uint64_t seed, std::size_t image_size, double min_keep_fraction) {
  if (!(min_keep_fraction > 0.0 && min_keep_fraction < 1.0))
    throw BadRange("min_keep_fraction must lie in (0, 1)");
  if (image_size < 2) throw BadGeometry("image too small for an irregular mask");
  std::mt19937_64 rng(seed);
  const double n = static_cast<double>(image_size);
  // Every ellipse contains this pixel center, so the kept union is connected.
  const double anchor = static_cast<double>(image_size / 2) + 0.5;
  struct Ellipse {
    double cx, cy, rx, ry;
  };
  std::uniform_real_distribution<double> offset(-n / 8.0, n / 8.0);
  std::uniform_real_distribution<double> radius(0.2 * n, 0.45 * n);
  std::vector<Ellipse> blobs(std::uniform_int_distribution<int>(1, 3)(rng));
  for (auto& e : blobs) e = {anchor + offset(rng), anchor + offset(rng), radius(rng), radius(rng)};

  Tensor m({image_size, image_size});
  for (double grow = 1.0;; grow *= 1.1) {
    std::size_t kept = 0;
    for (std::size_t y = 0; y < image_size; ++y)
      for (std::size_t x = 0; x < image_size; ++x) {
        bool in = false;
        for (const auto& e : blobs) {
          const double dx = (x + 0.5 - e.cx) / (e.rx * grow), dy = (y + 0.5 - e.cy) / (e.ry * grow);
          in = in || dx * dx + dy * dy <= 1.0;
        }
        m[y * image_size + x] = in ? 0.0 : 1.0;
        kept += in;
      }
    if (static_cast<double>(kept) >= min_keep_fraction * static_cast<double>(m.size())) break;
  }
  return m;
}

std::vector<SynthSample> split_conditional(std::vector<SynthSample> samples, double uncond_fraction,
                                           std::uint64_t seed) {
  if (!(uncond_fraction >= 0.0 && uncond_fraction <= 1.0)) throw BadRange("uncond_fraction must lie in [0, 1]");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto count = static_cast<std::size_t>(std::llround(uncond_fraction * static_cast<double>(samples.size())));
  for (std::size_t i = 0; i < count; ++i) samples[order[i]].caption = CsPrompt{};
  return samples;
}

bool accept_all(const SynthSample&) { return true; }

std::vector<SynthSample> generate_dataset(std::size_t n, std::uint64_t base_seed, const SynthSpec& spec,
                                          const SampleFilter& filter) {
  std::vector<SynthSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SynthSample s = generate(base_seed + i, spec);
    if (filter(s)) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cts
