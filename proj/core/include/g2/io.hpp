#pragma once

#include <string>

#include "g2/image.hpp"

namespace g2::io {

/// 8-bit RGB PNG. Byte b maps to b/127.5 - 1; writing rounds half away
/// from zero and clamps.
void save_png(const std::string& path, const ImageTensor& image);
ImageTensor load_png(const std::string& path);

std::uint8_t float_to_byte(float x);
float byte_to_float(std::uint8_t b);

}  // namespace g2::io
