#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "cts/errors.hpp"
#include "cts/trainer.hpp"

namespace cts {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) throw ConfigError("bad value \"" + value + "\" for " + key);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(uncond_fraction >= 0.0 && uncond_fraction <= 1.0)) throw ConfigError("uncond_fraction must lie in [0, 1]");
  if (infer_steps < 1 || infer_steps > model.steps) throw ConfigError("infer_steps must lie in [1, steps]");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (dataset_size == 0) throw ConfigError("dataset_size must be positive");
  if (model.channels != 3) throw ConfigError("synthetic data is RGB; channels must be 3");
  synth_spec().validate();
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  auto m = model.to_map();
  m["center_size"] = std::to_string(center_size);
  m["iterations"] = std::to_string(iterations);
  m["batch_size"] = std::to_string(batch_size);
  m["learning_rate"] = fmt_double(learning_rate);
  m["seed"] = std::to_string(seed);
  m["uncond_fraction"] = fmt_double(uncond_fraction);
  m["a_mode"] = fusion.str();
  m["beta_start"] = fmt_double(beta_start);
  m["beta_end"] = fmt_double(beta_end);
  m["infer_steps"] = std::to_string(infer_steps);
  m["checkpoint_every"] = std::to_string(checkpoint_every);
  m["grad_clip"] = fmt_double(grad_clip);
  m["dataset_size"] = std::to_string(dataset_size);
  return m;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto size = [&](std::size_t& field) { field = parse_number<std::size_t>(key, value); };
  if (key == "image_size") size(model.image_size);
  else if (key == "channels") size(model.channels);
  else if (key == "patch_size") size(model.patch_size);
  else if (key == "d_model") size(model.d_model);
  else if (key == "n_blocks") size(model.n_blocks);
  else if (key == "d_text") size(model.d_text);
  else if (key == "center_len") size(model.center_len);
  else if (key == "surround_len") size(model.surround_len);
  else if (key == "ff_mult") size(model.ff_mult);
  else if (key == "vocab_size") size(model.vocab_size);
  else if (key == "steps") model.steps = parse_number<int>(key, value);
  else if (key == "attention") {
    if (value == "cts") model.attention = AttentionKind::cts;
    else if (value == "baseline") model.attention = AttentionKind::baseline;
    else throw ConfigError("attention must be cts or baseline, got \"" + value + "\"");
  }
  else if (key == "center_size") size(center_size);
  else if (key == "iterations") iterations = parse_number<int>(key, value);
  else if (key == "batch_size") size(batch_size);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "uncond_fraction") uncond_fraction = parse_number<double>(key, value);
  else if (key == "a_mode") fusion = FusionFormat::parse(value);
  else if (key == "beta_start") beta_start = parse_number<double>(key, value);
  else if (key == "beta_end") beta_end = parse_number<double>(key, value);
  else if (key == "infer_steps") infer_steps = parse_number<int>(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_number<int>(key, value);
  else if (key == "grad_clip") grad_clip = parse_number<double>(key, value);
  else if (key == "dataset_size") size(dataset_size);
  else throw ConfigError("unknown key \"" + key + "\"");
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  TrainConfig cfg;
  for (const auto& [k, v] : read_config_file(path)) {
    try {
      cfg.set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  return cfg;
}

}  // namespace cts
