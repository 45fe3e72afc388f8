#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rldc/tensor.hpp"

namespace rldc {

// [0,1] -> 0..255 with round-half-up; out-of-range inputs are clamped.
std::uint8_t quantize_unit(double v) noexcept;

// Binary P5 from a [H,W] tensor.
std::vector<std::uint8_t> encode_pgm(const Tensor& gray);
// Binary P6 from a [H,W,3] tensor.
std::vector<std::uint8_t> encode_ppm(const Tensor& rgb);

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_pgm(const std::filesystem::path& path, const Tensor& gray);
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

// Reads back a P5/P6 file as [H,W] or [H,W,3] with values v/255.
Tensor read_pnm(const std::filesystem::path& path);

}  // namespace rldc
