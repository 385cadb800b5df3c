#pragma once

#include <cstdint>
#include <filesystem>

#include "dualstyle/image.hpp"

namespace dualstyle {

/// Byte b maps to 2 b / 255 - 1.
inline double decode_byte(std::uint8_t b) noexcept { return 2.0 * (b / 255.0) - 1.0; }
/// Inverse of decode_byte, clamped to [0, 255], rounding half away from zero.
std::uint8_t encode_byte(double v) noexcept;

/// Reads an 8-bit PNG as an H x W x 3 tensor in [-1, 1]. Greyscale files are
/// expanded to RGB; alpha and 16-bit files are rejected with IoError.
ImageTensor read_png(const std::filesystem::path& path);
/// Writes a 3-channel tensor as 8-bit RGB PNG.
void write_png(const ImageTensor& x, const std::filesystem::path& path);

}  // namespace dualstyle
