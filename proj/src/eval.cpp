#include "cts/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "cts/errors.hpp"
#include "cts/image_io.hpp"

namespace cts {

Tensor copy_center(const Tensor& generated, const Tensor& original, const Tensor& pixel_mask) {
  if (generated.shape() != original.shape()) throw ShapeMismatch("copy_center: generated and original differ");
  require_binary(pixel_mask, "pixel mask");
  if (generated.rank() != 3 || pixel_mask.rank() != 2 || generated.dim(1) != pixel_mask.dim(0) ||
      generated.dim(2) != pixel_mask.dim(1))
    throw ShapeMismatch("copy_center: image must be C×H×W with an H×W mask");
  Tensor out = generated;
  const std::size_t hw = pixel_mask.size();
  for (std::size_t c = 0; c < generated.dim(0); ++c)
    for (std::size_t i = 0; i < hw; ++i)
      if (pixel_mask[i] == 0.0) out[c * hw + i] = original[c * hw + i];
  return out;
}

std::size_t nearest_color(const std::array<double, 3>& rgb) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < palette().size(); ++k) {
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d += (rgb[c] - palette()[k][c]) * (rgb[c] - palette()[k][c]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

namespace {

struct PixelView {
  const Tensor& image;
  std::size_t h, w;

  double at(std::size_t c, std::size_t y, std::size_t x) const { return image[(c * h + y) * w + x]; }
  bool lit(std::size_t y, std::size_t x) const {
    return std::max({at(0, y, x), at(1, y, x), at(2, y, x)}) > 0.0;
  }
};

struct ColorMean {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::size_t n = 0;

  void add(const PixelView& v, std::size_t y, std::size_t x) {
    for (std::size_t c = 0; c < 3; ++c) sum[c] += v.at(c, y, x);
    ++n;
  }
  std::array<double, 3> mean() const {
    if (n == 0) return {0.0, 0.0, 0.0};
    return {sum[0] / n, sum[1] / n, sum[2] / n};
  }
};

}  // namespace

Detection detect_keywords(const Tensor& image, const Tensor& pixel_mask) {
  if (image.rank() != 3 || image.dim(0) != 3 || pixel_mask.rank() != 2 || image.dim(1) != pixel_mask.dim(0) ||
      image.dim(2) != pixel_mask.dim(1))
    throw ShapeMismatch("detect_keywords: image must be 3×H×W with an H×W mask");
  const std::size_t h = image.dim(1), w = image.dim(2);
  const PixelView view{image, h, w};
  auto masked = [&](std::size_t y, std::size_t x) { return pixel_mask[y * w + x] >= 0.5; };

  Detection out;

  // Surrounding: color of lit masked pixels, texture from transition rates.
  ColorMean lit_color, all_color;
  std::size_t h_pairs = 0, h_flips = 0, v_pairs = 0, v_flips = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!masked(y, x)) continue;
      all_color.add(view, y, x);
      if (view.lit(y, x)) lit_color.add(view, y, x);
      if (x + 1 < w && masked(y, x + 1)) {
        ++h_pairs;
        h_flips += view.lit(y, x) != view.lit(y, x + 1);
      }
      if (y + 1 < h && masked(y + 1, x)) {
        ++v_pairs;
        v_flips += view.lit(y, x) != view.lit(y + 1, x);
      }
    }
  if (all_color.n > 0) {
    const double hf = h_pairs ? static_cast<double>(h_flips) / h_pairs : 0.0;
    const double vf = v_pairs ? static_cast<double>(v_flips) / v_pairs : 0.0;
    const bool hx = hf > 0.25, vx = vf > 0.25;
    const std::size_t texture = hx && vx ? 2 : (hx || vx ? 1 : 0);
    const std::size_t density = texture == 0 ? 2 : (std::max(hf, vf) > 0.75 ? 0 : 1);
    const std::size_t color = nearest_color(lit_color.n ? lit_color.mean() : all_color.mean());
    out.surrounding = {words::textures[texture], words::colors[color], words::densities[density]};
  }

  // Center: lit foreground inside the kept region.
  std::size_t kx0 = w, kx1 = 0, ky0 = h, ky1 = 0;
  std::size_t fx0 = w, fx1 = 0, fy0 = h, fy1 = 0;
  ColorMean fg, kept;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (masked(y, x)) continue;
      kept.add(view, y, x);
      kx0 = std::min(kx0, x), kx1 = std::max(kx1, x), ky0 = std::min(ky0, y), ky1 = std::max(ky1, y);
      if (!view.lit(y, x)) continue;
      fg.add(view, y, x);
      fx0 = std::min(fx0, x), fx1 = std::max(fx1, x), fy0 = std::min(fy0, y), fy1 = std::max(fy1, y);
    }
  if (kept.n > 0) {
    if (fg.n == 0) {
      out.center = {words::shapes[0], words::colors[nearest_color(kept.mean())], words::sizes[0]};
    } else {
      const std::size_t bw = fx1 - fx0 + 1, bh = fy1 - fy0 + 1;
      const double fill = static_cast<double>(fg.n) / static_cast<double>(bw * bh);
      const std::size_t shape = fill >= 0.95 ? 0 : (fill >= 0.7 ? 1 : 2);
      const std::size_t region = std::max(kx1 - kx0 + 1, ky1 - ky0 + 1);
      const std::size_t size = std::max(bw, bh) * 8 > 5 * region ? 1 : 0;
      out.center = {words::shapes[shape], words::colors[nearest_color(fg.mean())], words::sizes[size]};
    }
  }
  return out;
}

Tensor sample_ddim(const DenoiserParams& params, const DenoiserConfig& cfg, const NoiseSchedule& schedule,
                   const Tensor& masked_img, const Tensor& pixel_mask, const TokenIds& ids, int infer_steps,
                   std::mt19937_64& rng) {
  Tensor x = Tensor::normal(masked_img.shape(), 1.0, rng);
  const std::vector<int> ts = ddim_timesteps(schedule.steps(), infer_steps);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    Tensor eps = predict_noise(params, cfg, x, masked_img, pixel_mask, ts[i], ids);
    // Clip the implied x0 to the data range and re-derive the noise from it.
    const double ab = schedule.alpha_bar(ts[i]);
    const Eigen::VectorXd x0 =
        ((x.data() - std::sqrt(1.0 - ab) * eps.data()) / std::sqrt(ab)).cwiseMax(-1.0).cwiseMin(1.0);
    eps.data() = (x.data() - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    x = ddim_step(x, ts[i], ts[i + 1], eps, schedule);
  }
  x.data() = x.data().cwiseMax(-1.0).cwiseMin(1.0);
  return x;
}

PromptMode parse_prompt_mode(const std::string& text) {
  if (text == "dataset-captions") return PromptMode::dataset_captions;
  if (text == "unconditional") return PromptMode::unconditional;
  if (text == "swap-surround-color") return PromptMode::swap_surround_color;
  if (text == "custom") return PromptMode::custom;
  throw ConfigError("unknown prompt mode \"" + text +
                    "\" (dataset-captions, unconditional, swap-surround-color, custom)");
}

CsPrompt conditioning_prompt(const SynthSample& sample, const EvalOptions& opts) {
  switch (opts.mode) {
    case PromptMode::dataset_captions: return sample.caption;
    case PromptMode::unconditional: return {};
    case PromptMode::custom: return opts.custom;
    case PromptMode::swap_surround_color: {
      CsPrompt p = sample.caption;
      if (p.surrounding.size() >= 2) {
        const auto& colors = words::colors;
        const auto it = std::find(colors.begin(), colors.end(), p.surrounding[1]);
        if (it != colors.end())
          p.surrounding[1] = colors[(static_cast<std::size_t>(it - colors.begin()) + 1) % colors.size()];
      }
      return p;
    }
  }
  return sample.caption;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool region_matches(const std::vector<std::string>& detected, const std::vector<std::string>& prompted,
                    const std::vector<std::string>& fallback) {
  const auto& target = prompted.empty() ? fallback : prompted;
  return detected.size() >= 2 && target.size() >= 2 && detected[0] == target[0] && detected[1] == target[1];
}

}  // namespace

EvalReport evaluate(const DenoiserParams& params, const DenoiserConfig& cfg, const NoiseSchedule& schedule,
                    const std::vector<SynthSample>& dataset, std::size_t n, const EvalOptions& opts) {
  if (n > dataset.size()) throw Error("evaluate: asked for " + std::to_string(n) + " samples, have " +
                                      std::to_string(dataset.size()));
  if (!opts.image_dir.empty()) std::filesystem::create_directories(opts.image_dir);
  EvalReport r;
  r.n_samples = n;
  std::size_t center_hits = 0, surround_hits = 0, kept_values = 0;
  double sq_final = 0.0, sq_raw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const SynthSample& s = dataset[i];
    const CsPrompt prompt = conditioning_prompt(s, opts);
    const TokenIds ids = tokenize(prompt, synthetic_vocab(), cfg.center_len, cfg.surround_len);
    std::mt19937_64 rng(mix_seed(opts.seed, i));
    const Tensor generated = sample_ddim(params, cfg, schedule, mask_image(s.image, s.pixel_mask), s.pixel_mask,
                                         ids, opts.infer_steps, rng);
    const Tensor final_img = opts.copy ? copy_center(generated, s.image, s.pixel_mask) : generated;

    const std::size_t hw = s.pixel_mask.size();
    for (std::size_t c = 0; c < s.image.dim(0); ++c)
      for (std::size_t p = 0; p < hw; ++p) {
        if (s.pixel_mask[p] != 0.0) continue;
        const std::size_t k = c * hw + p;
        sq_raw += (generated[k] - s.image[k]) * (generated[k] - s.image[k]);
        sq_final += (final_img[k] - s.image[k]) * (final_img[k] - s.image[k]);
        ++kept_values;
      }

    const Detection d = detect_keywords(final_img, s.pixel_mask);
    center_hits += region_matches(d.center, prompt.center, s.caption.center);
    surround_hits += region_matches(d.surrounding, prompt.surrounding, s.caption.surrounding);

    if (!opts.image_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "sample_%04zu.ppm", i);
      write_ppm(opts.image_dir / name, final_img);
    }
  }
  if (n > 0) {
    r.region_accuracy_center = static_cast<double>(center_hits) / n;
    r.region_accuracy_surrounding = static_cast<double>(surround_hits) / n;
  }
  if (kept_values > 0) {
    r.center_mse = sq_final / kept_values;
    r.center_mse_raw = sq_raw / kept_values;
  }
  r.chance = 1.0 / static_cast<double>(words::colors.size() * words::textures.size());
  r.chance_sigma = n ? std::sqrt(r.chance * (1.0 - r.chance) / static_cast<double>(n)) : 0.0;
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  char buf[128];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s = %.17g\n", key, v);
    out << buf;
  };
  line("region_accuracy_center", region_accuracy_center);
  line("region_accuracy_surrounding", region_accuracy_surrounding);
  line("center_mse", center_mse);
  line("center_mse_raw", center_mse_raw);
  out << "n_samples = " << n_samples << '\n';
  line("chance", chance);
  line("chance_sigma", chance_sigma);
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["region_accuracy_center"] = region_accuracy_center;
  j["region_accuracy_surrounding"] = region_accuracy_surrounding;
  j["center_mse"] = center_mse;
  j["center_mse_raw"] = center_mse_raw;
  j["n_samples"] = n_samples;
  j["chance"] = chance;
  j["chance_sigma"] = chance_sigma;
  return j.dump();
}

}  // namespace cts
