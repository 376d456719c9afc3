#pragma once

#include <string>

#include "vimd/tensor.hpp"

namespace vimd {

// Decodes an 8/16-bit PNG (gray, palette, or RGB, with or without alpha) to
// a [3 x H x W] float tensor in [0,1]. Grayscale replicates to 3 channels;
// alpha is dropped. Throws IoError naming the path on any failure.
Tensor load_image(const std::string& path);

// Encodes to 8-bit RGB PNG, clamping and rounding each channel.
void save_image(const Tensor& img, const std::string& path);

}  // namespace vimd
