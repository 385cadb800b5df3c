#include "dualstyle/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "dualstyle/errors.hpp"

namespace dualstyle {

std::string Shape::str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : ImageTensor(Shape{height, width, channels}, fill) {}

ImageTensor::ImageTensor(Shape shape, double fill) : shape_(shape) {
    if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0) {
        throw DimensionError("image dimensions must be positive, got " + shape.str());
    }
    data_.assign(shape.size(), fill);
}

ImageTensor::ImageTensor(Shape shape, std::vector<double> values) : ImageTensor(shape) {
    if (values.size() != shape.size()) {
        throw DimensionError("expected " + std::to_string(shape.size()) + " values for " +
                             shape.str() + ", got " + std::to_string(values.size()));
    }
    data_ = std::move(values);
}

bool ImageTensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void ImageTensor::clip(double lo, double hi) noexcept {
    for (double& v : data_) v = std::clamp(v, lo, hi);
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
    }
}

ImageTensor lincomb(double a, const ImageTensor& x, double b, const ImageTensor& y) {
    require_same_shape(x, y, "lincomb");
    ImageTensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

ImageTensor scaled(double a, const ImageTensor& x) {
    ImageTensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i];
    return out;
}

double l2_norm(const ImageTensor& x) noexcept {
    double acc = 0.0;
    for (double v : x.values()) acc += v * v;
    return std::sqrt(acc);
}

double l2_distance(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "l2_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

std::uint64_t content_hash(const ImageTensor& x) noexcept {
    std::uint64_t h = 14695981039346656037ull;
    for (double v : x.values()) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace dualstyle
