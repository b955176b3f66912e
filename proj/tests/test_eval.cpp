#include <doctest.h>

#include <filesystem>
#include <json.hpp>
#include <random>

#include "cts/errors.hpp"
#include "cts/eval.hpp"
#include "helpers.hpp"

using namespace cts;
using cts::testing::random_tensor;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.d_model = 16;
  cfg.n_blocks = 1;
  cfg.d_text = 8;
  cfg.ff_mult = 2;
  cfg.steps = 50;
  return cfg;
}

}  // namespace

TEST_CASE("copy_center") {
  std::mt19937_64 rng(1);
  const Tensor gen = random_tensor({3, 16, 16}, rng, -1, 1);
  const Tensor orig = random_tensor({3, 16, 16}, rng, -1, 1);
  CHECK(copy_center(gen, orig, Tensor({16, 16}, 1.0)) == gen);
  CHECK(copy_center(gen, orig, Tensor({16, 16}, 0.0)) == orig);

  for (const Tensor& mask : {make_center_mask(16, 8), make_irregular_mask(3, 16, 0.3)}) {
    const Tensor out = copy_center(gen, orig, mask);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 256; ++i) {
        const std::size_t k = c * 256 + i;
        CHECK(out[k] == (mask[i] == 1.0 ? gen[k] : orig[k]));
      }
    CHECK(copy_center(out, orig, mask) == out);
  }
  CHECK_THROWS_AS(copy_center(gen, Tensor({3, 16, 8}), make_center_mask(16, 8)), ShapeMismatch);
  CHECK_THROWS_AS(copy_center(gen, orig, make_center_mask(8, 4)), ShapeMismatch);
  Tensor soft = make_center_mask(16, 8);
  soft[0] = 0.5;
  CHECK_THROWS_AS(copy_center(gen, orig, soft), MaskNotBinary);
}

TEST_CASE("detection is unchanged by copying a clean image onto itself") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = generate(seed, SynthSpec{});
    const Detection d = detect_keywords(copy_center(s.image, s.image, s.pixel_mask), s.pixel_mask);
    CHECK(d.center == s.caption.center);
    CHECK(d.surrounding == s.caption.surrounding);
  }
}

TEST_CASE("nearest color ties and gray images") {
  CHECK(nearest_color({0.0, 0.0, 0.0}) == 0);
  CHECK(nearest_color({1.0, -1.0, -1.0}) == 0);
  CHECK(nearest_color({-1.0, -1.0, 1.0}) == 2);
  CHECK(nearest_color({0.9, 0.9, 0.9}) == 4);
  // Equidistant from green and yellow only.
  CHECK(nearest_color({0.0, 1.0, -1.0}) == 1);

  const Tensor gray({3, 16, 16}, 0.0);
  const Detection a = detect_keywords(gray, make_center_mask(16, 8));
  const Detection b = detect_keywords(gray, make_center_mask(16, 8));
  CHECK(a.center == b.center);
  CHECK(a.surrounding == b.surrounding);
  REQUIRE(a.surrounding.size() == 3);
  CHECK(a.surrounding[1] == "red");
  CHECK(a.center.size() == 3);
}

TEST_CASE("detector is total on random images") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor img = random_tensor({3, 16, 16}, rng, -1, 1);
    const Tensor mask = trial % 2 ? make_center_mask(16, 8) : make_irregular_mask(trial, 16, 0.2);
    const Detection d = detect_keywords(img, mask);
    CHECK(d.center.size() == 3);
    CHECK(d.surrounding.size() == 3);
    for (const auto& w : d.center) CHECK(synthetic_vocab().id(w) != token::unk);
    for (const auto& w : d.surrounding) CHECK(synthetic_vocab().id(w) != token::unk);
  }
}

TEST_CASE("prompt modes") {
  CHECK(parse_prompt_mode("dataset-captions") == PromptMode::dataset_captions);
  CHECK(parse_prompt_mode("unconditional") == PromptMode::unconditional);
  CHECK(parse_prompt_mode("swap-surround-color") == PromptMode::swap_surround_color);
  CHECK(parse_prompt_mode("custom") == PromptMode::custom);
  CHECK_THROWS_AS(parse_prompt_mode("swap"), ConfigError);

  const auto s = generate(4, SynthSpec{});
  EvalOptions opts;
  CHECK(conditioning_prompt(s, opts) == s.caption);
  opts.mode = PromptMode::unconditional;
  CHECK(conditioning_prompt(s, opts).unconditional());
  opts.mode = PromptMode::custom;
  opts.custom = parse_prompt("Center:; Surrounding:checker,white");
  CHECK(conditioning_prompt(s, opts) == opts.custom);

  opts.mode = PromptMode::swap_surround_color;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto sample = generate(seed, SynthSpec{});
    const CsPrompt p = conditioning_prompt(sample, opts);
    CHECK(p.center == sample.caption.center);
    CHECK(p.surrounding[0] == sample.caption.surrounding[0]);
    CHECK(p.surrounding[2] == sample.caption.surrounding[2]);
    CHECK(p.surrounding[1] != sample.caption.surrounding[1]);
  }
}

TEST_CASE("evaluate") {
  const DenoiserConfig cfg = tiny_config();
  const auto params = init_denoiser(cfg, FusionFormat::parse("LF"), 3);
  const auto schedule = linear_schedule(cfg.steps, 1e-4, 0.02);
  const auto data = generate_dataset(6, 500, SynthSpec{});
  EvalOptions opts;
  opts.infer_steps = 5;
  opts.seed = 11;

  const EvalReport a = evaluate(params, cfg, schedule, data, 6, opts);
  const EvalReport b = evaluate(params, cfg, schedule, data, 6, opts);
  CHECK(a.to_text() == b.to_text());
  CHECK(a.to_json() == b.to_json());
  CHECK(a.n_samples == 6);
  CHECK(a.center_mse == 0.0);
  CHECK(a.center_mse_raw > 0.0);
  CHECK(a.region_accuracy_center >= 0.0);
  CHECK(a.region_accuracy_center <= 1.0);
  CHECK(a.region_accuracy_surrounding >= 0.0);
  CHECK(a.region_accuracy_surrounding <= 1.0);
  CHECK(a.chance == doctest::Approx(1.0 / 15.0));
  CHECK(a.chance_sigma == doctest::Approx(std::sqrt((1.0 / 15) * (14.0 / 15) / 6)));

  opts.copy = false;
  const EvalReport raw = evaluate(params, cfg, schedule, data, 6, opts);
  CHECK(raw.center_mse == raw.center_mse_raw);
  CHECK(raw.center_mse_raw == a.center_mse_raw);

  opts.seed = 12;
  CHECK(evaluate(params, cfg, schedule, data, 6, opts).center_mse_raw != a.center_mse_raw);

  const auto json = nlohmann::json::parse(a.to_json());
  CHECK(json["n_samples"] == 6);
  CHECK(json["center_mse"] == 0.0);
  CHECK(a.to_json().find('\n') == std::string::npos);
  CHECK(a.to_text().find("region_accuracy_surrounding = ") != std::string::npos);
}

TEST_CASE("evaluate writes sample images") {
  const DenoiserConfig cfg = tiny_config();
  const auto params = init_denoiser(cfg, FusionFormat::parse("LF"), 3);
  const auto dir = std::filesystem::temp_directory_path() / "cts_test_eval";
  std::filesystem::remove_all(dir);
  EvalOptions opts;
  opts.infer_steps = 2;
  opts.image_dir = dir;
  evaluate(params, cfg, linear_schedule(cfg.steps, 1e-4, 0.02), generate_dataset(3, 0, SynthSpec{}), 3, opts);
  CHECK(std::filesystem::exists(dir / "sample_0000.ppm"));
  CHECK(std::filesystem::exists(dir / "sample_0002.ppm"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sample_ddim output range and determinism") {
  const DenoiserConfig cfg = tiny_config();
  const auto params = init_denoiser(cfg, FusionFormat::parse("LF"), 8);
  const auto schedule = linear_schedule(cfg.steps, 1e-4, 0.02);
  const auto s = generate(1, SynthSpec{});
  const auto ids = tokenize(s.caption, synthetic_vocab(), cfg.center_len, cfg.surround_len);
  std::mt19937_64 r1(5), r2(5);
  const Tensor masked = mask_image(s.image, s.pixel_mask);
  const Tensor x = sample_ddim(params, cfg, schedule, masked, s.pixel_mask, ids, 10, r1);
  CHECK(x == sample_ddim(params, cfg, schedule, masked, s.pixel_mask, ids, 10, r2));
  CHECK(x.data().maxCoeff() <= 1.0);
  CHECK(x.data().minCoeff() >= -1.0);
}
