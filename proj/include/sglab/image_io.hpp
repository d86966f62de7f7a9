#pragma once

#include <filesystem>

#include "sglab/tensor.hpp"

namespace sglab {

/// Decodes any PNG as 8-bit RGB into an H×W×3 tensor with values in [0,1].
/// Throws std::runtime_error with the libpng message on failure.
Tensor<float> read_png(const std::filesystem::path& path);

/// Writes an H×W×3 (or H×W×1) tensor, clamping values to [0,1] and rounding to
/// 8 bits.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// Largest centered square crop of an H×W×C image.
Tensor<float> center_crop_square(const Tensor<float>& image);

/// Resamples a square H×H×C image to size×size: area averaging when shrinking,
/// bilinear interpolation (half-pixel centers) when enlarging.
Tensor<float> resize_square(const Tensor<float>& image, std::size_t size);

}  // namespace sglab
