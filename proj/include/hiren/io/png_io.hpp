#pragma once

#include <filesystem>

#include "hiren/nn/tensor.hpp"

namespace hiren::io {

// 8-bit PNG <-> float CHW in [0,1]. Writing quantizes with round(x*255)
// after clamping; reading divides by 255, so u8-exact tensors round-trip
// bit-for-bit. Grayscale maps to C=1, RGB to C=3.
void write_png(const std::filesystem::path& path, const nn::Tensor<float>& chw);
nn::Tensor<float> read_png(const std::filesystem::path& path);

}  // namespace hiren::io
