#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cts/errors.hpp"
#include "cts/eval.hpp"
#include "cts/image_io.hpp"
#include "cts/synth.hpp"
#include "cts/trainer.hpp"

namespace fs = std::filesystem;
using namespace cts;

namespace {

enum Exit { ok = 0, failure = 1, usage = 2, data_error = 3, checkpoint_error = 4 };

struct Failure {
  int code;
  std::string message;
};

// Runs fn, tagging any library error with the flag or file it came from.
template <class Fn>
auto blame(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const CorruptCheckpoint& e) {
    throw Failure{checkpoint_error, what + ": " + e.what()};
  } catch (const ConfigError& e) {
    throw Failure{usage, what + ": " + e.what()};
  } catch (const MalformedPrompt& e) {
    throw Failure{usage, what + ": " + e.what()};
  } catch (const LengthExceeded& e) {
    throw Failure{usage, what + ": " + e.what()};
  } catch (const BadRange& e) {
    throw Failure{usage, what + ": " + e.what()};
  } catch (const Error& e) {
    throw Failure{data_error, what + ": " + e.what()};
  }
}

std::string key_to_flag(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

// Every config key doubles as a flag; flag values win over the file.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key = value config file");
    for (const auto& [key, unused] : TrainConfig{}.to_map()) {
      (void)unused;
      cmd->add_option(key_to_flag(key), values[key], "config key " + key);
    }
  }

  TrainConfig resolve(CLI::App* cmd, TrainConfig cfg) const {
    if (!file.empty()) {
      for (const auto& [k, v] : blame(file, [&] { return read_config_file(file); }))
        blame(file, [&, &k = k, &v = v] { cfg.set(k, v); });
    }
    apply_flags(cmd, cfg);
    blame(file.empty() ? "flags" : file, [&] { cfg.validate(); });
    return cfg;
  }

  void apply_flags(CLI::App* cmd, TrainConfig& cfg) const {
    for (const auto& [key, value] : values) {
      const std::string flag = key_to_flag(key);
      if (cmd->count(flag) > 0) blame(flag, [&, &key = key, &value = value] { cfg.set(key, value); });
    }
  }

  bool any_flag(CLI::App* cmd) const {
    for (const auto& [key, value] : values)
      if (cmd->count(key_to_flag(key)) > 0) return true;
    return false;
  }
};

// Sampling starts from N(0, I), which is only the training marginal at T when
// almost no signal survives.
void warn_on_residual_signal(const TrainConfig& cfg) {
  const double ab = cfg.schedule().alpha_bar(cfg.model.steps);
  if (ab > 0.01)
    std::cerr << "warning: alpha_bar at T = " << ab << "; for a " << cfg.model.steps
              << "-step schedule consider --beta-start/--beta-end scaled by 1000/steps\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Failure{data_error, path.string() + ": cannot write"};
}

std::vector<SynthSample> load_manifest_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.tsv";
  std::vector<SynthSample> out;
  for (const auto& r : blame(manifest.string(), [&] { return read_manifest(manifest); })) {
    SynthSample s;
    s.seed = r.seed;
    s.image = blame(r.image_path, [&] { return read_ppm(dir / r.image_path); });
    s.pixel_mask = blame(r.mask_path, [&] { return read_mask_pgm(dir / r.mask_path); });
    s.caption = blame(manifest.string(), [&] { return parse_prompt(r.caption); });
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Failure{data_error, manifest.string() + ": no records"};
  return out;
}

Checkpoint load_ckpt(const std::string& path) {
  return blame(path, [&] { return load_checkpoint(path); });
}

// ---- gen-data

struct GenDataArgs {
  std::string out;
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::size_t image_size = 16;
  std::size_t center_size = 8;
  double uncond_fraction = 0.1;
  bool irregular = false;
  double min_keep = 0.25;
};

void gen_data(const GenDataArgs& a) {
  const SynthSpec spec{a.image_size, a.center_size};
  blame("--image-size/--center-size", [&] { spec.validate(); });
  if (!(a.uncond_fraction >= 0.0 && a.uncond_fraction <= 1.0))
    throw Failure{usage, "--uncond-fraction: must lie in [0, 1]"};
  if (a.irregular && !(a.min_keep > 0.0 && a.min_keep < 1.0))
    throw Failure{usage, "--min-keep: must lie in (0, 1)"};

  auto samples = generate_dataset(a.n, a.seed, spec);
  samples = split_conditional(std::move(samples), a.uncond_fraction, a.seed ^ 0x5eedULL);

  const fs::path dir(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{data_error, "--out: cannot create " + dir.string()};

  std::vector<ManifestRecord> records;
  std::size_t unconditional = 0;
  char name[64];
  for (auto& s : samples) {
    if (a.irregular) s.pixel_mask = make_irregular_mask(s.seed, a.image_size, a.min_keep);
    std::snprintf(name, sizeof name, "img_%06llu.ppm", static_cast<unsigned long long>(s.seed));
    const std::string image = name;
    std::snprintf(name, sizeof name, "mask_%06llu.pgm", static_cast<unsigned long long>(s.seed));
    const std::string mask = name;
    blame(image, [&] { write_ppm(dir / image, s.image); });
    blame(mask, [&] { write_mask_pgm(dir / mask, s.pixel_mask); });
    records.push_back({s.seed, image, mask, render(s.caption)});
    unconditional += s.caption.unconditional();
  }
  blame("manifest.tsv", [&] { write_manifest(dir / "manifest.tsv", records); });
  std::cout << "samples = " << records.size() << "\nunconditional = " << unconditional
            << "\nconditional = " << records.size() - unconditional << "\n";
}

// ---- train

struct TrainArgs {
  ConfigFlags cfg;
  std::string out;
  std::string log;
  std::string resume;
  std::string data;
};

void train(CLI::App* cmd, TrainArgs& a) {
  std::optional<Checkpoint> start;
  TrainConfig cfg;
  if (!a.resume.empty()) {
    start = load_ckpt(a.resume);
    cfg = start->config;
    if (!a.cfg.file.empty()) throw Failure{usage, "--config: not allowed with --resume"};
    a.cfg.apply_flags(cmd, cfg);
    TrainConfig frozen = start->config;
    frozen.iterations = cfg.iterations;
    frozen.checkpoint_every = cfg.checkpoint_every;
    if (!(frozen == cfg)) throw Failure{usage, "--resume: only --iterations and --checkpoint-every may change"};
    blame("--resume", [&] { cfg.validate(); });
  } else {
    cfg = a.cfg.resolve(cmd, TrainConfig{});
    warn_on_residual_signal(cfg);
  }

  std::vector<SynthSample> data;
  if (a.data.empty())
    data = make_training_set(cfg);
  else
    data = load_manifest_dataset(a.data);

  std::optional<Trainer> trainer;
  blame("--data", [&] {
    if (start)
      trainer.emplace(cfg, std::move(data), std::move(start->params), std::move(start->optimizer));
    else
      trainer.emplace(cfg, std::move(data));
  });

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::binary | (start ? std::ios::app : std::ios::trunc));
    if (!log_file) throw Failure{data_error, "--log: cannot open " + a.log};
    log = &log_file;
  }

  const auto save = [&] {
    blame("--out", [&] { save_checkpoint(trainer->params(), trainer->optimizer(), cfg, a.out); });
  };
  const int done = static_cast<int>(trainer->optimizer().step);
  int remaining = cfg.iterations - done;
  if (remaining < 0) throw Failure{usage, "--iterations: checkpoint is already past " + std::to_string(cfg.iterations)};
  while (remaining > 0) {
    const int chunk = cfg.checkpoint_every > 0 ? std::min(remaining, cfg.checkpoint_every) : remaining;
    blame("training", [&] { trainer->run(chunk, log); });
    remaining -= chunk;
    if (remaining > 0) save();
  }
  save();
}

// ---- sample

struct SampleArgs {
  std::string ckpt;
  std::string prompt;
  std::string mask = "center";
  std::string image;
  std::optional<std::uint64_t> source_seed;
  int steps = 50;
  std::uint64_t seed = 0;
  bool copy = true;
  std::string out;
};

void sample(const SampleArgs& a) {
  const CsPrompt prompt = blame("--prompt", [&] { return parse_prompt(a.prompt); });
  const Checkpoint ck = load_ckpt(a.ckpt);
  const TrainConfig& cfg = ck.config;
  const std::size_t n = cfg.model.image_size;

  Tensor original;
  if (!a.image.empty())
    original = blame(a.image, [&] { return read_ppm(a.image); });
  else
    original = generate(a.source_seed.value_or(a.seed), cfg.synth_spec()).image;
  if (original.shape() != Shape{cfg.model.channels, n, n})
    throw Failure{data_error, (a.image.empty() ? std::string("--image") : a.image) + ": image does not match checkpoint geometry"};

  Tensor mask;
  if (a.mask == "center")
    mask = blame("--mask", [&] { return make_center_mask(n, cfg.center_size); });
  else
    mask = blame(a.mask, [&] { return read_mask_pgm(a.mask); });
  if (mask.shape() != Shape{n, n}) throw Failure{data_error, a.mask + ": mask does not match checkpoint geometry"};

  if (a.steps < 1 || a.steps > cfg.model.steps)
    throw Failure{usage, "--steps: must lie in [1, " + std::to_string(cfg.model.steps) + "]"};

  const TokenIds ids = blame("--prompt", [&] {
    return tokenize(prompt, synthetic_vocab(), cfg.model.center_len, cfg.model.surround_len);
  });
  std::mt19937_64 rng(a.seed);
  const Tensor masked = mask_image(original, mask);
  Tensor out = sample_ddim(ck.params, cfg.model, cfg.schedule(), masked, mask, ids, a.steps, rng);
  if (a.copy) out = copy_center(out, original, mask);
  blame(a.out, [&] { write_ppm(a.out, out); });
  std::cout << (prompt.unconditional() ? "unconditional" : "conditional") << " sample written to " << a.out << "\n";
}

// ---- eval

struct EvalArgs {
  std::string ckpt;
  std::size_t n = 50;
  std::string prompts = "dataset-captions";
  std::string prompt;
  std::optional<int> steps;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;
  bool copy = true;
  bool write_images = true;
  std::string out_dir;
};

void eval(const EvalArgs& a) {
  EvalOptions opts;
  opts.mode = blame("--prompts", [&] { return parse_prompt_mode(a.prompts); });
  if (opts.mode == PromptMode::custom) {
    if (a.prompt.empty()) throw Failure{usage, "--prompt: required with --prompts custom"};
    opts.custom = blame("--prompt", [&] { return parse_prompt(a.prompt); });
  }
  const Checkpoint ck = load_ckpt(a.ckpt);
  const TrainConfig& cfg = ck.config;
  opts.infer_steps = a.steps.value_or(cfg.infer_steps);
  if (opts.infer_steps < 1 || opts.infer_steps > cfg.model.steps)
    throw Failure{usage, "--steps: must lie in [1, " + std::to_string(cfg.model.steps) + "]"};
  opts.copy = a.copy;
  opts.seed = a.seed;

  const fs::path dir(a.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{data_error, "--out-dir: cannot create " + dir.string()};
  if (a.write_images) opts.image_dir = dir / "samples";

  // Held out: training draws seeds [seed, seed + dataset_size).
  const std::uint64_t base = a.data_seed.value_or(cfg.seed + cfg.dataset_size);
  const auto data = generate_dataset(a.n, base, cfg.synth_spec());
  const EvalReport r =
      blame("evaluation", [&] { return evaluate(ck.params, cfg.model, cfg.schedule(), data, a.n, opts); });
  write_text(dir / "report.txt", r.to_text());
  write_text(dir / "report.json", r.to_json() + "\n");
  std::cout << r.to_text();
}

// ---- ablate

struct AblateArgs {
  ConfigFlags cfg;
  std::vector<std::string> modes = {"RIF", "CF(0.5)", "LF"};
  std::size_t eval_n = 20;
  std::uint64_t eval_seed = 0;
  std::string out_dir;
};

void ablate(CLI::App* cmd, AblateArgs& a) {
  const TrainConfig cfg = a.cfg.resolve(cmd, TrainConfig{});
  warn_on_residual_signal(cfg);
  std::vector<FusionFormat> formats;
  for (const auto& m : a.modes) formats.push_back(blame("--modes", [&] { return FusionFormat::parse(m); }));

  const auto data = make_training_set(cfg);
  const auto held_out = generate_dataset(a.eval_n, cfg.seed + cfg.dataset_size, cfg.synth_spec());
  EvalOptions opts;
  opts.infer_steps = cfg.infer_steps;
  opts.seed = a.eval_seed;
  const AblationEval score = [&](const DenoiserParams& params, const TrainConfig& arm) {
    std::vector<std::pair<std::string, double>> out;
    if (a.eval_n == 0) return out;
    const EvalReport r = evaluate(params, arm.model, arm.schedule(), held_out, a.eval_n, opts);
    out.emplace_back("region_accuracy_center", r.region_accuracy_center);
    out.emplace_back("region_accuracy_surrounding", r.region_accuracy_surrounding);
    out.emplace_back("center_mse_raw", r.center_mse_raw);
    return out;
  };
  const AblationReport report = blame("ablation", [&] { return run_ablation(cfg, formats, data, score); });

  const fs::path dir(a.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{data_error, "--out-dir: cannot create " + dir.string()};
  write_text(dir / "ablation.txt", report.to_text());
  std::cout << report.to_text();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Center/surrounding prompted outpainting with CTS cross-attention"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen_cmd = app.add_subcommand("gen-data", "render a synthetic dataset to PPM files and a manifest");
  gen_cmd->add_option("--out", gd.out, "output directory")->required();
  gen_cmd->add_option("--n", gd.n, "number of samples");
  gen_cmd->add_option("--seed", gd.seed, "base seed");
  gen_cmd->add_option("--image-size", gd.image_size);
  gen_cmd->add_option("--center-size", gd.center_size);
  gen_cmd->add_option("--uncond-fraction", gd.uncond_fraction);
  gen_cmd->add_option("--irregular", gd.irregular, "blob masks instead of the center square");
  gen_cmd->add_option("--min-keep", gd.min_keep, "minimum kept fraction of irregular masks");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a denoiser and write a checkpoint");
  tr.cfg.attach(train_cmd);
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--log", tr.log, "training log path (default stdout)");
  train_cmd->add_option("--resume", tr.resume, "checkpoint to continue from");
  train_cmd->add_option("--data", tr.data, "gen-data directory (default: synthesize from config)");

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "outpaint one image");
  sample_cmd->add_option("--ckpt", sa.ckpt)->required();
  sample_cmd->add_option("--prompt", sa.prompt, "\"Center:...; Surrounding:...\"")->required();
  sample_cmd->add_option("--mask", sa.mask, "PGM mask path or 'center'");
  sample_cmd->add_option("--image", sa.image, "source PPM (default: synthetic sample)");
  sample_cmd->add_option("--source-seed", sa.source_seed, "seed of the synthetic source (default --seed)");
  sample_cmd->add_option("--steps", sa.steps, "DDIM steps");
  sample_cmd->add_option("--seed", sa.seed);
  sample_cmd->add_option("--copy", sa.copy, "paste the original center back");
  sample_cmd->add_option("--out", sa.out)->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "score region control on held-out synthetic samples");
  eval_cmd->add_option("--ckpt", ev.ckpt)->required();
  eval_cmd->add_option("--n", ev.n);
  eval_cmd->add_option("--prompts", ev.prompts, "dataset-captions | unconditional | swap-surround-color | custom");
  eval_cmd->add_option("--prompt", ev.prompt, "prompt for --prompts custom");
  eval_cmd->add_option("--steps", ev.steps, "DDIM steps (default infer_steps)");
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--data-seed", ev.data_seed, "first dataset seed (default: after the training set)");
  eval_cmd->add_option("--copy", ev.copy);
  eval_cmd->add_option("--write-images", ev.write_images);
  eval_cmd->add_option("--out-dir", ev.out_dir)->required();

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "train one arm per fusion format and compare");
  ab.cfg.attach(ablate_cmd);
  ablate_cmd->add_option("--modes", ab.modes, "fusion formats")->delimiter(',');
  ablate_cmd->add_option("--eval-n", ab.eval_n);
  ablate_cmd->add_option("--eval-seed", ab.eval_seed);
  ablate_cmd->add_option("--out-dir", ab.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (gen_cmd->parsed()) gen_data(gd);
    else if (train_cmd->parsed()) train(train_cmd, tr);
    else if (sample_cmd->parsed()) sample(sa);
    else if (eval_cmd->parsed()) eval(ev);
    else if (ablate_cmd->parsed()) ablate(ablate_cmd, ab);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure;
  }
  return ok;
}
