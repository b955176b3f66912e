#include "cts/attention.hpp"

#include <cmath>
#include <cstdio>

#include "cts/errors.hpp"

namespace cts {

FusionFormat FusionFormat::parse(std::string_view text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "RIF") return {Mode::rif, 0.5};
  if (s == "LF") return {Mode::lf, 0.5};
  if (s == "CF") return {Mode::cf, 0.5};
  if (s.starts_with("CF(") && s.ends_with(")")) {
    const std::string num = s.substr(3, s.size() - 4);
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == num.size() && used > 0) return {Mode::cf, c};
  }
  throw ConfigError("unknown fusion format \"" + std::string(text) + "\" (expected RIF, CF(c), or LF)");
}

std::string FusionFormat::str() const {
  switch (mode) {
    case Mode::rif: return "RIF";
    case Mode::lf: return "LF";
    case Mode::cf: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "CF(%.17g)", constant);
      return buf;
    }
  }
  return "LF";
}

void require_binary(const Tensor& mask, std::string_view what) {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw MaskNotBinary(std::string(what) + " has entry " + std::to_string(mask[i]));
}

namespace {

Var attend(const Var& q, const Var& f_text, const Var& w_k, const Var& w_v) {
  const Var k = matmul(f_text, w_k);
  const Var v = matmul(f_text, w_v);
  if (k.value().cols() != q.value().cols())
    throw ShapeMismatch("key width " + std::to_string(k.value().cols()) + " differs from query width " +
                        std::to_string(q.value().cols()));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk)), v);
}

}  // namespace

Var cross_attention(const Var& f_img, const Var& f_text, const Var& w_q, const Var& w_k, const Var& w_v) {
  return attend(matmul(f_img, w_q), f_text, w_k, w_v);
}

Tensor cross_attention(const Tensor& f_img, const Tensor& f_text, const CrossAttnWeights& w) {
  Tape tape;
  return cross_attention(tape.constant(f_img), tape.constant(f_text), tape.constant(w.w_q),
                         tape.constant(w.w_k), tape.constant(w.w_v))
      .value();
}

CtsAttnVars bind(Tape& tape, CtsAttnWeights& w) {
  return {tape.leaf(w.base.w_q),   tape.leaf(w.base.w_k),   tape.leaf(w.base.w_v),
          tape.leaf(w.center.w_k), tape.leaf(w.center.w_v), tape.leaf(w.surround.w_k),
          tape.leaf(w.surround.w_v), tape.leaf(w.a)};
}

CtsTerms cts_terms(const Var& f_img, const PromptStreams& text, const Var& token_mask, const CtsAttnVars& w) {
  const std::size_t n_img = f_img.value().rows();
  if (token_mask.size() != n_img)
    throw ShapeMismatch("token mask has " + std::to_string(token_mask.size()) + " entries for " +
                        std::to_string(n_img) + " image tokens");
  require_binary(token_mask.value(), "token mask");
  if (w.a.size() != 1) throw ShapeMismatch("fusion scalar a must have one element");

  CtsTerms out;
  const Var q = matmul(f_img, w.w_q);
  out.total = attend(q, text.total, w.w_k, w.w_v);
  out.center = attend(q, text.center, w.center_k, w.center_v);
  out.surround = attend(q, text.surrounding, w.surround_k, w.surround_v);
  const Var keep = shift(scale(token_mask, -1.0), 1.0);
  out.fused = add(mul_rows(out.center, keep), mul_rows(out.surround, token_mask));
  const Var one_minus_a = shift(scale(w.a, -1.0), 1.0);
  out.output = add(scale_by(one_minus_a, out.total), scale_by(w.a, out.fused));
  return out;
}

Var cts_cross_attention(const Var& f_img, const PromptStreams& text, const Var& token_mask,
                        const CtsAttnVars& w) {
  return cts_terms(f_img, text, token_mask, w).output;
}

Tensor cts_cross_attention(const Tensor& f_img, const PromptEmbedding& pe, const RegionMask& mask,
                           const CtsAttnWeights& w) {
  Tape tape;
  const PromptStreams text{tape.constant(pe.total), tape.constant(pe.center), tape.constant(pe.surrounding)};
  const CtsAttnVars vars{tape.constant(w.base.w_q),   tape.constant(w.base.w_k),
                         tape.constant(w.base.w_v),   tape.constant(w.center.w_k),
                         tape.constant(w.center.w_v), tape.constant(w.surround.w_k),
                         tape.constant(w.surround.w_v), tape.constant(w.a)};
  return cts_cross_attention(tape.constant(f_img), text, tape.constant(mask.values), vars).value();
}

CtsAttnWeights init_cts_from_base(const CrossAttnWeights& base, FusionFormat format, std::mt19937_64& rng) {
  auto copy = [](const Tensor& t) {
    Tensor c(t.shape(), t.data());
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  CtsAttnWeights w;
  w.base = {copy(base.w_q), copy(base.w_k), copy(base.w_v)};
  w.center = {copy(base.w_k), copy(base.w_v)};
  w.surround = {copy(base.w_k), copy(base.w_v)};
  double a0 = 0.0;
  switch (format.mode) {
    case FusionFormat::Mode::rif: a0 = std::uniform_real_distribution<double>(0.0, 1.0)(rng); break;
    case FusionFormat::Mode::cf: a0 = format.constant; break;
    case FusionFormat::Mode::lf: a0 = 0.0; break;
  }
  w.a = Tensor::scalar(a0);
  w.a.set_requires_grad(format.trainable());
  return w;
}

RegionMask resize_mask(const Tensor& pixel_mask, std::size_t grid_h, std::size_t grid_w) {
  if (pixel_mask.rank() != 2) throw ShapeMismatch("pixel mask must be H×W");
  const std::size_t h = pixel_mask.dim(0), w = pixel_mask.dim(1);
  if (grid_h == 0 || grid_w == 0 || h % grid_h != 0 || w % grid_w != 0)
    throw IndivisibleGrid(std::to_string(h) + "x" + std::to_string(w) + " mask onto " +
                          std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  const std::size_t ch = h / grid_h, cw = w / grid_w;
  const auto m = pixel_mask.matrix();
  Tensor out({grid_h * grid_w});
  for (std::size_t i = 0; i < grid_h; ++i)
    for (std::size_t j = 0; j < grid_w; ++j) {
      const double avg = m.block(static_cast<Eigen::Index>(i * ch), static_cast<Eigen::Index>(j * cw),
                                 static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(cw))
                             .mean();
      out[i * grid_w + j] = avg >= 0.5 ? 1.0 : 0.0;
    }
  return {std::move(out)};
}

}  // namespace cts
