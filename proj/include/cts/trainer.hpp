#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cts/attention.hpp"
#include "cts/denoiser.hpp"
#include "cts/diffusion.hpp"
#include "cts/synth.hpp"

namespace cts {

struct TrainConfig {
  DenoiserConfig model;
  std::size_t center_size = 8;
  int iterations = 1000;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double uncond_fraction = 0.1;
  FusionFormat fusion;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int infer_steps = 50;
  int checkpoint_every = 0;  // 0 = only at the end
  double grad_clip = 1.0;    // global-norm bound; 0 disables
  std::size_t dataset_size = 2000;

  void validate() const;
  SynthSpec synth_spec() const { return {model.image_size, center_size}; }
  NoiseSchedule schedule() const { return linear_schedule(model.steps, beta_start, beta_end); }

  /// Every key accepted by set(), in a stable order.
  std::map<std::string, std::string> to_map() const;
  /// Throws ConfigError for an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// generate_dataset(dataset_size, seed) with uncond_fraction of the captions
/// blanked by split_conditional.
std::vector<SynthSample> make_training_set(const TrainConfig& cfg);

/// `key = value` lines with `#` comments.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
};

/// Bias-corrected Adam for one tensor at optimizer step `step` (1-based).
void adam_update(Tensor& param, const Eigen::VectorXd& grad, AdamSlot& slot, std::uint64_t step,
                 const AdamHyper& hyper, double lr);

/// One slot per parameter tensor, in DenoiserParams::for_each order.
struct OptimizerState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<AdamSlot> slots;

  static OptimizerState for_params(const DenoiserParams& params);
};

/// One optimization step on `batch`: draws t and ε per sample from `rng`,
/// minimizes the mean ε-prediction MSE, and applies Adam to every parameter
/// that requires grad. Returns the loss before the update.
double train_step(std::span<const SynthSample* const> batch, DenoiserParams& params, const DenoiserConfig& cfg,
                  OptimizerState& opt, const NoiseSchedule& schedule, std::mt19937_64& rng, double lr,
                  double grad_clip = 0.0);

/// Training state bound to a dataset. Batch and noise draws for step k are a
/// pure function of (seed, k), so a run split by a checkpoint follows the
/// same trajectory as an uninterrupted one.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<SynthSample> data);
  Trainer(TrainConfig cfg, std::vector<SynthSample> data, DenoiserParams params, OptimizerState opt);

  double step();
  /// Runs `n` steps, writing `step<TAB>loss<TAB>a_csv` lines to `log` if given.
  std::vector<double> run(int n, std::ostream* log = nullptr);

  const TrainConfig& config() const { return cfg_; }
  DenoiserParams& params() { return params_; }
  const DenoiserParams& params() const { return params_; }
  const OptimizerState& optimizer() const { return opt_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<SynthSample>& data() const { return data_; }

 private:
  TrainConfig cfg_;
  std::vector<SynthSample> data_;
  DenoiserParams params_;
  OptimizerState opt_;
  NoiseSchedule schedule_;
};

struct Checkpoint {
  TrainConfig config;
  DenoiserParams params;
  OptimizerState optimizer;
};

void save_checkpoint(const DenoiserParams& params, const OptimizerState& opt, const TrainConfig& cfg,
                     const std::filesystem::path& path);
void save_checkpoint(const DenoiserParams& params, const OptimizerState& opt, const TrainConfig& cfg,
                     std::ostream& out);
/// Throws CorruptCheckpoint on a bad magic, header, shape, or length.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(std::istream& in);

/// FNV-1a over the bytes of every parameter except the fusion scalars.
std::uint64_t checksum_without_fusion(const DenoiserParams& params);

std::string format_log_line(std::uint64_t step, double loss, const std::vector<double>& a_values);

struct AblationArm {
  FusionFormat format;
  std::uint64_t init_checksum = 0;
  std::vector<double> initial_a;
  std::vector<double> final_a;
  double initial_loss = 0.0;  // mean over the first tenth of steps
  double final_loss = 0.0;    // mean over the last tenth of steps
  std::vector<std::pair<std::string, double>> metrics;
};

struct AblationReport {
  std::vector<AblationArm> arms;
  std::string to_text() const;
};

using AblationEval =
    std::function<std::vector<std::pair<std::string, double>>(const DenoiserParams&, const TrainConfig&)>;

/// Trains one model per format from the same seed and data, then scores each
/// with `eval`.
AblationReport run_ablation(const TrainConfig& base, std::span<const FusionFormat> formats,
                            const std::vector<SynthSample>& data, const AblationEval& eval);

}  // namespace cts
