#include "cts/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cts/errors.hpp"

namespace cts {

std::uint8_t quantize_pixel(double p) {
  const double v = std::round((p + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

double dequantize_pixel(std::uint8_t v) { return v / 127.5 - 1.0; }

namespace {

void write_pnm(const std::filesystem::path& path, const char* magic, std::size_t w, std::size_t h,
               const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Returns (width, height, raw bytes); `channels` is 3 for P6 and 1 for P5.
std::vector<std::uint8_t> read_pnm(const std::filesystem::path& path, const std::string& magic,
                                   std::size_t channels, std::size_t& w, std::size_t& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto token = [&in, &path]() {
    std::string tok;
    for (;;) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (!(in >> tok)) throw IoError("truncated header in " + path.string());
      return tok;
    }
  };
  if (token() != magic) throw IoError(path.string() + " is not a binary " + magic + " file");
  std::size_t maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw IoError("bad header in " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) throw IoError("unsupported geometry or maxval in " + path.string());
  in.get();
  std::vector<std::uint8_t> bytes(w * h * channels);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw IoError("truncated pixel data in " + path.string());
  return bytes;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeMismatch("write_ppm expects a 3×H×W tensor");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> bytes(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) bytes[(y * w + x) * 3 + c] = quantize_pixel(image[(c * h + y) * w + x]);
  write_pnm(path, "P6", w, h, bytes);
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto bytes = read_pnm(path, "P6", 3, w, h);
  Tensor image({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) image[(c * h + y) * w + x] = dequantize_pixel(bytes[(y * w + x) * 3 + c]);
  return image;
}

void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.rank() != 2) throw ShapeMismatch("write_mask_pgm expects an H×W tensor");
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] >= 0.5 ? 255 : 0;
  write_pnm(path, "P5", mask.dim(1), mask.dim(0), bytes);
}

Tensor read_mask_pgm(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto bytes = read_pnm(path, "P5", 1, w, h);
  Tensor mask({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) mask[i] = bytes[i] >= 128 ? 1.0 : 0.0;
  return mask;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records)
    out << r.seed << '\t' << r.image_path << '\t' << r.mask_path << '\t' << r.caption << '\n';
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 4) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 4 fields");
    ManifestRecord r;
    try {
      r.seed = std::stoull(fields[0]);
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad seed");
    }
    r.image_path = fields[1];
    r.mask_path = fields[2];
    r.caption = fields[3];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cts
