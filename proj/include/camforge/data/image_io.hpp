#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "camforge/label_mask.hpp"
#include "camforge/nn/tensor.hpp"

namespace camforge::data {

// Reads any PNG as grayscale intensities in [0, 1], dims (1, 1, H, W).
// Color images are reduced to luma; alpha is dropped.
nn::Tensor read_png_gray(const std::filesystem::path& path);

// Writes a (1, 1, H, W) tensor clamped to [0, 1] as 8- or 16-bit grayscale.
void write_png_gray8(const std::filesystem::path& path, const nn::Tensor& image);
void write_png_gray16(const std::filesystem::path& path, const nn::Tensor& image);

// Interleaved RGB, 8 bits per channel, `rgb.size() == 3 * h * w`.
void write_png_rgb8(const std::filesystem::path& path, std::int64_t h, std::int64_t w,
                    std::span<const std::uint8_t> rgb);

// Masks are stored as 8-bit PNG with 0 = background and 255 = foreground.
// On read, any intensity >= 0.5 is foreground.
LabelMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const LabelMask& mask);

}  // namespace camforge::data
