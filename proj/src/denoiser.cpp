#include "cts/denoiser.hpp"

#include <cmath>
#include <string>

#include "cts/errors.hpp"
#include "cts/synth.hpp"

namespace cts {

namespace {

std::size_t effective_vocab(const DenoiserConfig& cfg) {
  return cfg.vocab_size ? cfg.vocab_size : synthetic_vocab().size();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void DenoiserConfig::validate() const {
  if (!image_size || !channels || !patch_size || !d_model || !n_blocks || !d_text || !center_len ||
      !surround_len || !ff_mult || steps < 1)
    throw ConfigError("denoiser dimensions must be positive");
  if (image_size % patch_size != 0)
    throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
}

std::map<std::string, std::string> DenoiserConfig::to_map() const {
  return {{"image_size", std::to_string(image_size)},
          {"channels", std::to_string(channels)},
          {"patch_size", std::to_string(patch_size)},
          {"d_model", std::to_string(d_model)},
          {"n_blocks", std::to_string(n_blocks)},
          {"d_text", std::to_string(d_text)},
          {"center_len", std::to_string(center_len)},
          {"surround_len", std::to_string(surround_len)},
          {"ff_mult", std::to_string(ff_mult)},
          {"vocab_size", std::to_string(vocab_size)},
          {"steps", std::to_string(steps)},
          {"attention", attention == AttentionKind::cts ? "cts" : "baseline"}};
}

// ---------------------------------------------------------------------------

namespace {

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  auto lin = [&](const std::string& name, auto& l) {
    fn(name + ".w", l.w);
    fn(name + ".b", l.b);
  };
  fn("text_table", p.text_table);
  lin("patch_embed", p.patch_embed);
  fn("position", p.position);
  lin("time_in", p.time_in);
  lin("time_out", p.time_out);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    fn(pre + "norm1.gain", b.norm1_gain);
    fn(pre + "norm1.bias", b.norm1_bias);
    fn(pre + "self.q", b.self_q);
    fn(pre + "self.k", b.self_k);
    fn(pre + "self.v", b.self_v);
    fn(pre + "self.o", b.self_o);
    fn(pre + "norm2.gain", b.norm2_gain);
    fn(pre + "norm2.bias", b.norm2_bias);
    fn(pre + "cross.base.q", b.cross.base.w_q);
    fn(pre + "cross.base.k", b.cross.base.w_k);
    fn(pre + "cross.base.v", b.cross.base.w_v);
    fn(pre + "cross.center.k", b.cross.center.w_k);
    fn(pre + "cross.center.v", b.cross.center.w_v);
    fn(pre + "cross.surround.k", b.cross.surround.w_k);
    fn(pre + "cross.surround.v", b.cross.surround.w_v);
    fn(pre + "cross.a", b.cross.a);
    fn(pre + "norm3.gain", b.norm3_gain);
    fn(pre + "norm3.bias", b.norm3_bias);
    lin(pre + "ff_in", b.ff_in);
    lin(pre + "ff_out", b.ff_out);
  }
  fn("norm_out.gain", p.norm_out_gain);
  fn("norm_out.bias", p.norm_out_bias);
  lin("head", p.head);
}

}  // namespace

void DenoiserParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params(*this, fn);
}

void DenoiserParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::vector<double> DenoiserParams::fusion_values() const {
  std::vector<double> out;
  for (const auto& b : blocks) out.push_back(b.cross.a[0]);
  return out;
}

DenoiserParams init_denoiser(const DenoiserConfig& cfg, FusionFormat format, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::mt19937_64 fusion_rng(splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL));

  auto weight = [&rng](std::size_t in, std::size_t out, double gain = 1.0) {
    return Tensor::normal({in, out}, gain / std::sqrt(static_cast<double>(in)), rng).set_requires_grad(true);
  };
  auto filled = [](std::size_t n, double v) { return Tensor({n}, v).set_requires_grad(true); };
  auto linear = [&](std::size_t in, std::size_t out, double gain = 1.0) {
    return Linear{weight(in, out, gain), filled(out, 0.0)};
  };

  const std::size_t d = cfg.d_model;
  DenoiserParams p;
  p.text_table = Tensor::normal({effective_vocab(cfg), cfg.d_text}, 1.0, rng).set_requires_grad(true);
  p.patch_embed = linear(cfg.patch_in(), d);
  p.position = Tensor::normal({cfg.tokens(), d}, 0.1, rng).set_requires_grad(true);
  p.time_in = linear(d, d);
  p.time_out = linear(d, d);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    BlockParams b;
    b.norm1_gain = filled(d, 1.0);
    b.norm1_bias = filled(d, 0.0);
    b.self_q = weight(d, d);
    b.self_k = weight(d, d);
    b.self_v = weight(d, d);
    b.self_o = weight(d, d);
    b.norm2_gain = filled(d, 1.0);
    b.norm2_bias = filled(d, 0.0);
    const CrossAttnWeights base{weight(d, d), weight(cfg.d_text, d), weight(cfg.d_text, d)};
    b.cross = init_cts_from_base(base, format, fusion_rng);
    b.norm3_gain = filled(d, 1.0);
    b.norm3_bias = filled(d, 0.0);
    b.ff_in = linear(d, cfg.ff_mult * d);
    b.ff_out = linear(cfg.ff_mult * d, d);
    p.blocks.push_back(std::move(b));
  }
  p.norm_out_gain = filled(d, 1.0);
  p.norm_out_bias = filled(d, 0.0);
  p.head = linear(d, cfg.patch_out(), 0.1);
  return p;
}

std::size_t count_cts_sites(const DenoiserConfig& cfg) { return cfg.n_blocks; }

Tensor timestep_embedding(int t, std::size_t dim) {
  Tensor out({dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

Tensor mask_image(const Tensor& image, const Tensor& pixel_mask) {
  if (image.rank() != 3 || pixel_mask.rank() != 2 || image.dim(1) != pixel_mask.dim(0) ||
      image.dim(2) != pixel_mask.dim(1))
    throw ShapeMismatch("mask_image: image must be C×H×W and mask H×W");
  Tensor out = image;
  const std::size_t hw = pixel_mask.size();
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] *= 1.0 - pixel_mask[i];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> patchify_index(const DenoiserConfig& cfg, std::size_t channels) {
  const std::size_t p = cfg.patch_size, g = cfg.grid(), w = cfg.image_size, hw = w * w;
  std::vector<std::size_t> idx;
  idx.reserve(channels * hw);
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) idx.push_back(c * hw + (gy * p + dy) * w + gx * p + dx);
  return idx;
}

std::vector<std::size_t> unpatchify_index(const DenoiserConfig& cfg) {
  const std::size_t p = cfg.patch_size, g = cfg.grid(), w = cfg.image_size, f = cfg.patch_out();
  std::vector<std::size_t> idx;
  idx.reserve(cfg.channels * w * w);
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t x = 0; x < w; ++x)
        idx.push_back(((y / p) * g + x / p) * f + c * p * p + (y % p) * p + x % p);
  return idx;
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

template <class Params, class Bind>
Var forward_impl(Tape& tape, Params& params, Bind&& bind, const DenoiserConfig& cfg, const Var& x_t,
                 const Var& masked_img, const Tensor& pixel_mask, int t, const TokenIds& ids) {
  cfg.validate();
  const std::size_t c = cfg.channels, s = cfg.image_size, hw = s * s, d = cfg.d_model;
  const Shape img_shape{c, s, s};
  if (x_t.shape() != img_shape || masked_img.shape() != img_shape)
    throw ShapeMismatch("denoiser expects " + std::to_string(c) + "x" + std::to_string(s) + "x" +
                        std::to_string(s) + " images");
  if (pixel_mask.shape() != Shape{s, s}) throw ShapeMismatch("pixel mask must be image_size²");
  require_binary(pixel_mask, "pixel mask");
  if (ids.center.size() != cfg.center_len || ids.surrounding.size() != cfg.surround_len)
    throw ShapeMismatch("token ids do not match configured prompt lengths");

  const Var stacked_parts[] = {reshape(x_t, {c, hw}), reshape(masked_img, {c, hw}),
                               tape.constant(pixel_mask.reshaped({1, hw}))};
  const Var stacked = concat(stacked_parts, 0);
  const Var patches = gather(stacked, patchify_index(cfg, cfg.input_channels()), {cfg.tokens(), cfg.patch_in()});

  Var h = add(linear(patches, bind(params.patch_embed.w), bind(params.patch_embed.b)), bind(params.position));
  const Var temb = linear(gelu(linear(tape.constant(timestep_embedding(t, d).reshaped({1, d})),
                                      bind(params.time_in.w), bind(params.time_in.b))),
                          bind(params.time_out.w), bind(params.time_out.b));
  h = add_row(h, reshape(temb, {d}));

  const Var token_mask = tape.constant(resize_mask(pixel_mask, cfg.grid(), cfg.grid()).values);
  const PromptStreams text = embed(bind(params.text_table), ids);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  for (auto& b : params.blocks) {
    const Var n1 = layer_norm(h, bind(b.norm1_gain), bind(b.norm1_bias));
    const Var q = matmul(n1, bind(b.self_q));
    const Var k = matmul(n1, bind(b.self_k));
    const Var v = matmul(n1, bind(b.self_v));
    const Var attn = matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d)), v);
    h = add(h, matmul(attn, bind(b.self_o)));

    const Var n2 = layer_norm(h, bind(b.norm2_gain), bind(b.norm2_bias));
    Var cross;
    if (cfg.attention == AttentionKind::cts) {
      const CtsAttnVars w{bind(b.cross.base.w_q),   bind(b.cross.base.w_k),   bind(b.cross.base.w_v),
                          bind(b.cross.center.w_k), bind(b.cross.center.w_v), bind(b.cross.surround.w_k),
                          bind(b.cross.surround.w_v), bind(b.cross.a)};
      cross = cts_cross_attention(n2, text, token_mask, w);
    } else {
      cross = cross_attention(n2, text.total, bind(b.cross.base.w_q), bind(b.cross.base.w_k),
                              bind(b.cross.base.w_v));
    }
    h = add(h, cross);

    const Var n3 = layer_norm(h, bind(b.norm3_gain), bind(b.norm3_bias));
    const Var ff = linear(gelu(linear(n3, bind(b.ff_in.w), bind(b.ff_in.b))), bind(b.ff_out.w), bind(b.ff_out.b));
    h = add(h, ff);
  }

  const Var out = linear(layer_norm(h, bind(params.norm_out_gain), bind(params.norm_out_bias)),
                         bind(params.head.w), bind(params.head.b));
  return gather(out, unpatchify_index(cfg), img_shape);
}

}  // namespace

Var denoiser_forward(Tape& tape, DenoiserParams& params, const DenoiserConfig& cfg, const Var& x_t,
                     const Var& masked_img, const Tensor& pixel_mask, int t, const TokenIds& ids) {
  return forward_impl(tape, params, [&tape](Tensor& p) { return tape.leaf(p); }, cfg, x_t, masked_img,
                      pixel_mask, t, ids);
}

Tensor predict_noise(const DenoiserParams& params, const DenoiserConfig& cfg, const Tensor& x_t,
                     const Tensor& masked_img, const Tensor& pixel_mask, int t, const TokenIds& ids) {
  Tape tape;
  return forward_impl(tape, params, [&tape](const Tensor& p) { return tape.constant(p); }, cfg,
                      tape.constant(x_t), tape.constant(masked_img), pixel_mask, t, ids)
      .value();
}

}  // namespace cts
