#include "cts/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cts/errors.hpp"

namespace cts {

namespace {

constexpr char kMagic[] = "CTSOUT-CKPT 1";
constexpr std::uint64_t kTrailer = 0x31544b43444e4543ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void adam_update(Tensor& param, const Eigen::VectorXd& grad, AdamSlot& slot, std::uint64_t step,
                 const AdamHyper& h, double lr) {
  const auto n = static_cast<Eigen::Index>(param.size());
  if (grad.size() != n) throw ShapeMismatch("adam_update: gradient length differs from parameter");
  if (step == 0) throw Error("adam_update: step is 1-based");
  if (slot.m.size() != n) slot.m = Eigen::VectorXd::Zero(n);
  if (slot.v.size() != n) slot.v = Eigen::VectorXd::Zero(n);
  slot.m = h.beta1 * slot.m + (1.0 - h.beta1) * grad;
  slot.v = h.beta2 * slot.v + (1.0 - h.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  param.data().array() -= lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + h.eps);
}

OptimizerState OptimizerState::for_params(const DenoiserParams& params) {
  OptimizerState s;
  params.for_each([&s](const std::string&, const Tensor& t) {
    const auto n = static_cast<Eigen::Index>(t.size());
    s.slots.push_back({Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)});
  });
  return s;
}

double train_step(std::span<const SynthSample* const> batch, DenoiserParams& params, const DenoiserConfig& cfg,
                  OptimizerState& opt, const NoiseSchedule& schedule, std::mt19937_64& rng, double lr,
                  double grad_clip) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const Shape img_shape{cfg.channels, cfg.image_size, cfg.image_size};
  const Shape mask_shape{cfg.image_size, cfg.image_size};
  for (const SynthSample* s : batch)
    if (s->image.shape() != img_shape || s->pixel_mask.shape() != mask_shape)
      throw GeometryMismatch("sample " + std::to_string(s->seed) + " does not match the model geometry");

  params.for_each([](const std::string&, Tensor& t) { t.zero_grad(); });

  Tape tape;
  std::uniform_int_distribution<int> pick_t(1, schedule.steps());
  Var total;
  for (const SynthSample* s : batch) {
    const int t = pick_t(rng);
    const Tensor eps = Tensor::normal(img_shape, 1.0, rng);
    const Tensor x_t = forward_sample(s->image, t, eps, schedule);
    const TokenIds ids = tokenize(s->caption, synthetic_vocab(), cfg.center_len, cfg.surround_len);
    const Var pred = denoiser_forward(tape, params, cfg, tape.constant(x_t),
                                      tape.constant(mask_image(s->image, s->pixel_mask)), s->pixel_mask, t, ids);
    const Var loss = training_loss(tape.constant(eps), pred);
    total = total.valid() ? add(total, loss) : loss;
  }
  const Var loss = scale(total, 1.0 / static_cast<double>(batch.size()));
  tape.backward(loss);

  double scale_by = 1.0;
  if (grad_clip > 0.0) {
    double sq = 0.0;
    params.for_each([&sq](const std::string&, Tensor& t) {
      if (t.requires_grad()) sq += t.grad().squaredNorm();
    });
    const double norm = std::sqrt(sq);
    if (norm > grad_clip) scale_by = grad_clip / norm;
  }

  if (opt.slots.empty()) opt = [&] {
    OptimizerState fresh = OptimizerState::for_params(params);
    fresh.hyper = opt.hyper;
    fresh.step = opt.step;
    return fresh;
  }();
  ++opt.step;
  std::size_t i = 0;
  params.for_each([&](const std::string&, Tensor& t) {
    if (t.requires_grad()) {
      const Eigen::VectorXd g = scale_by == 1.0 ? t.grad() : Eigen::VectorXd(scale_by * t.grad());
      adam_update(t, g, opt.slots.at(i), opt.step, opt.hyper, lr);
    }
    ++i;
  });
  return loss.value().item();
}

std::vector<SynthSample> make_training_set(const TrainConfig& cfg) {
  return split_conditional(generate_dataset(cfg.dataset_size, cfg.seed, cfg.synth_spec()), cfg.uncond_fraction,
                           splitmix64(cfg.seed + 1));
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, std::vector<SynthSample> data)
    : Trainer(cfg, std::move(data), init_denoiser(cfg.model, cfg.fusion, cfg.seed), OptimizerState{}) {}

Trainer::Trainer(TrainConfig cfg, std::vector<SynthSample> data, DenoiserParams params, OptimizerState opt)
    : cfg_(std::move(cfg)), data_(std::move(data)), params_(std::move(params)), opt_(std::move(opt)) {
  cfg_.validate();
  if (data_.empty()) throw Error("Trainer: empty dataset");
  if (opt_.slots.empty()) {
    const auto step = opt_.step;
    opt_ = OptimizerState::for_params(params_);
    opt_.step = step;
  }
  schedule_ = cfg_.schedule();
}

double Trainer::step() {
  std::mt19937_64 rng(splitmix64(cfg_.seed) ^ splitmix64(opt_.step + 1));
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::vector<const SynthSample*> batch;
  for (std::size_t i = 0; i < cfg_.batch_size; ++i) batch.push_back(&data_[pick(rng)]);
  return train_step(batch, params_, cfg_.model, opt_, schedule_, rng, cfg_.learning_rate, cfg_.grad_clip);
}

std::vector<double> Trainer::run(int n, std::ostream* log) {
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const double loss = step();
    if (!std::isfinite(loss)) throw Error("non-finite loss at step " + std::to_string(opt_.step));
    losses.push_back(loss);
    if (log) *log << format_log_line(opt_.step, loss, params_.fusion_values()) << '\n';
  }
  return losses;
}

std::string format_log_line(std::uint64_t step, double loss, const std::vector<double>& a_values) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", loss);
  std::string line = std::to_string(step) + "\t" + buf + "\t";
  for (std::size_t i = 0; i < a_values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", a_values[i]);
    line += (i ? "," : "") + std::string(buf);
  }
  return line;
}

// ---------------------------------------------------------------------------
// Checkpoints: text header, blank-line terminated, then little-endian tensors.

void save_checkpoint(const DenoiserParams& params, const OptimizerState& opt, const TrainConfig& cfg,
                     std::ostream& out) {
  out << kMagic << '\n';
  for (const auto& [k, v] : cfg.to_map()) out << k << '=' << v << '\n';
  out << '\n';
  std::vector<const Tensor*> tensors;
  params.for_each([&tensors](const std::string&, const Tensor& t) { tensors.push_back(&t); });
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) write_tensor(out, *t);
  write_u64(out, opt.step);
  write_f64(out, opt.hyper.beta1);
  write_f64(out, opt.hyper.beta2);
  write_f64(out, opt.hyper.eps);
  write_u32(out, static_cast<std::uint32_t>(opt.slots.size()));
  auto vec = [&out](const Eigen::VectorXd& v) {
    write_u32(out, static_cast<std::uint32_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) write_f64(out, v[i]);
  };
  for (const auto& s : opt.slots) {
    vec(s.m);
    vec(s.v);
  }
  write_u64(out, kTrailer);
}

void save_checkpoint(const DenoiserParams& params, const OptimizerState& opt, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  save_checkpoint(params, opt, cfg, buf);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw CorruptCheckpoint("bad magic");
  TrainConfig cfg;
  for (;;) {
    if (!std::getline(in, line)) throw CorruptCheckpoint("unterminated header");
    if (line.empty()) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptCheckpoint("bad header line \"" + line + "\"");
    try {
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw CorruptCheckpoint(e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw CorruptCheckpoint(std::string("invalid config: ") + e.what());
  }

  Checkpoint ck{cfg, init_denoiser(cfg.model, cfg.fusion, cfg.seed), {}};
  std::vector<Tensor*> slots;
  ck.params.for_each([&slots](const std::string&, Tensor& t) { slots.push_back(&t); });
  if (read_u32(in) != slots.size()) throw CorruptCheckpoint("parameter count mismatch");
  for (Tensor* slot : slots) {
    Tensor t = read_tensor(in);
    if (t.shape() != slot->shape()) throw CorruptCheckpoint("parameter shape mismatch");
    slot->data() = t.data();
  }
  ck.optimizer.step = read_u64(in);
  ck.optimizer.hyper = {read_f64(in), read_f64(in), read_f64(in)};
  const std::uint32_t n_slots = read_u32(in);
  if (n_slots != 0 && n_slots != slots.size()) throw CorruptCheckpoint("optimizer slot count mismatch");
  auto vec = [&in](std::size_t expect) {
    const std::uint32_t n = read_u32(in);
    if (n != expect) throw CorruptCheckpoint("optimizer moment length mismatch");
    Eigen::VectorXd v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = read_f64(in);
    return v;
  };
  for (std::uint32_t i = 0; i < n_slots; ++i) {
    AdamSlot s;
    s.m = vec(slots[i]->size());
    s.v = vec(slots[i]->size());
    ck.optimizer.slots.push_back(std::move(s));
  }
  if (read_u64(in) != kTrailer) throw CorruptCheckpoint("bad trailer");
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptCheckpoint("trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open " + path.string());
  return load_checkpoint(in);
}

std::uint64_t checksum_without_fusion(const DenoiserParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  params.for_each([&mix](const std::string& name, const Tensor& t) {
    if (name.ends_with(".a")) return;
    mix(name.data(), name.size());
    mix(t.data().data(), t.size() * sizeof(double));
  });
  return h;
}

// ---------------------------------------------------------------------------

std::string AblationReport::to_text() const {
  std::ostringstream out;
  char buf[256];
  for (const auto& arm : arms) {
    std::snprintf(buf, sizeof buf, "%-10s init_checksum=%016llx loss_first=%.6f loss_last=%.6f", arm.format.str().c_str(),
                  static_cast<unsigned long long>(arm.init_checksum), arm.initial_loss, arm.final_loss);
    out << buf;
    out << " a_init=";
    for (std::size_t i = 0; i < arm.initial_a.size(); ++i) out << (i ? "," : "") << arm.initial_a[i];
    out << " a_final=";
    for (std::size_t i = 0; i < arm.final_a.size(); ++i) out << (i ? "," : "") << arm.final_a[i];
    for (const auto& [k, v] : arm.metrics) out << ' ' << k << '=' << v;
    out << '\n';
  }
  return out.str();
}

AblationReport run_ablation(const TrainConfig& base, std::span<const FusionFormat> formats,
                            const std::vector<SynthSample>& data, const AblationEval& eval) {
  AblationReport report;
  for (const FusionFormat& fmt : formats) {
    TrainConfig cfg = base;
    cfg.fusion = fmt;
    Trainer trainer(cfg, data);
    AblationArm arm;
    arm.format = fmt;
    arm.init_checksum = checksum_without_fusion(trainer.params());
    arm.initial_a = trainer.params().fusion_values();
    const std::vector<double> losses = trainer.run(cfg.iterations);
    const std::size_t tenth = std::max<std::size_t>(1, losses.size() / 10);
    if (!losses.empty()) {
      arm.initial_loss = std::accumulate(losses.begin(), losses.begin() + tenth, 0.0) / tenth;
      arm.final_loss = std::accumulate(losses.end() - tenth, losses.end(), 0.0) / tenth;
    }
    arm.final_a = trainer.params().fusion_values();
    if (eval) arm.metrics = eval(trainer.params(), cfg);
    report.arms.push_back(std::move(arm));
  }
  return report;
}

}  // namespace cts
