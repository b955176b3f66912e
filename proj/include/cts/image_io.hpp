#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cts/tensor.hpp"

namespace cts {

/// Float pixel p in [-1, 1] maps to round((p + 1) · 127.5) clamped to [0, 255].
std::uint8_t quantize_pixel(double p);
double dequantize_pixel(std::uint8_t v);

/// Binary P6 (maxval 255) from a 3×H×W tensor.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

/// Binary P5 mask, 255 = masked (1), 0 = kept (0).
void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask);
Tensor read_mask_pgm(const std::filesystem::path& path);

/// One line per sample: seed<TAB>image_path<TAB>mask_path<TAB>caption.
struct ManifestRecord {
  std::uint64_t seed = 0;
  std::string image_path;
  std::string mask_path;
  std::string caption;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

}  // namespace cts
