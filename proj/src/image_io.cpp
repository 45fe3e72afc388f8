#include "rldc/image_io.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>

namespace rldc {

std::uint8_t quantize_unit(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

namespace {

std::vector<std::uint8_t> encode(const char* magic, std::size_t h, std::size_t w,
                                 const Tensor& t) {
  const std::string header =
      std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + t.size());
  for (double v : t.values()) bytes.push_back(quantize_unit(v));
  return bytes;
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const Tensor& gray) {
  if (gray.rank() != 2) {
    throw std::invalid_argument("pgm: expected [H,W], got " + shape_string(gray.shape()));
  }
  return encode("P5", gray.dim(0), gray.dim(1), gray);
}

std::vector<std::uint8_t> encode_ppm(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) {
    throw std::invalid_argument("ppm: expected [H,W,3], got " + shape_string(rgb.shape()));
  }
  return encode("P6", rgb.dim(0), rgb.dim(1), rgb);
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Tensor& gray) {
  write_bytes(path, encode_pgm(gray));
}

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  write_bytes(path, encode_ppm(rgb));
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if ((magic != "P5" && magic != "P6") || maxval != 255 || !in) {
    throw std::runtime_error(path.string() + ": not an 8-bit binary PGM/PPM");
  }
  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::vector<char> raw(h * w * channels);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  Tensor t(channels == 3 ? Shape{h, w, 3} : Shape{h, w});
  for (std::size_t i = 0; i < raw.size(); ++i) {
    t[i] = static_cast<double>(static_cast<unsigned char>(raw[i])) / 255.0;
  }
  return t;
}

}  // namespace rldc
