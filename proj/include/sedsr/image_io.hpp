#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace sedsr {

/// Reads an 8-bit PNG as a 3 x H x W float tensor in [0, 1] (value / 255). Gray and
/// alpha inputs are converted to RGB; 16-bit inputs are reduced to 8 bits.
torch::Tensor read_png(const std::filesystem::path& path);

/// Writes a 3 x H x W (or 1 x 3 x H x W) tensor as 8-bit RGB, clamping to [0, 1] and
/// rounding to the nearest level.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Rounds to the 256 levels an 8-bit file can hold.
torch::Tensor quantize_8bit(const torch::Tensor& image);

} // namespace sedsr
