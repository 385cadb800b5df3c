#include "dualstyle/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "dualstyle/errors.hpp"

namespace dualstyle {

std::uint8_t encode_byte(double v) noexcept {
    const double b = std::round((v + 1.0) / 2.0 * 255.0);
    return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

ImageTensor read_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
    }
    if (img.format & (PNG_FORMAT_FLAG_ALPHA | PNG_FORMAT_FLAG_LINEAR)) {
        png_image_free(&img);
        throw IoError("'" + path.string() + "' is not an 8-bit RGB or greyscale image");
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
        throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    ImageTensor x(static_cast<int>(img.height), static_cast<int>(img.width), 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) x[i] = decode_byte(bytes[i]);
    return x;
}

void write_png(const ImageTensor& x, const std::filesystem::path& path) {
    if (x.channels() != 3) throw DimensionError("PNG output needs 3 channels, got " + x.shape().str());
    std::vector<std::uint8_t> bytes(x.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = encode_byte(x[i]);
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(x.width());
    img.height = static_cast<png_uint_32>(x.height());
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
    }
}

}  // namespace dualstyle
