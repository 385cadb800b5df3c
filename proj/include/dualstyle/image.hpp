#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dualstyle {

struct Shape {
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(height) * width * channels;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// H x W x C grid of doubles stored row-major with interleaved channels.
/// Decoded images live in [-1, 1]; latents may leave that range.
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels, double fill = 0.0);
    ImageTensor(Shape shape, double fill = 0.0);
    ImageTensor(Shape shape, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    int height() const noexcept { return shape_.height; }
    int width() const noexcept { return shape_.width; }
    int channels() const noexcept { return shape_.channels; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(int y, int x, int c) noexcept {
        return data_[(static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c];
    }
    const double& at(int y, int x, int c) const noexcept {
        return data_[(static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c];
    }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    const double& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& vector() const noexcept { return data_; }

    bool all_finite() const noexcept;
    void clip(double lo, double hi) noexcept;

    bool operator==(const ImageTensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Throws DimensionError naming `what` unless both tensors share a shape.
void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what);

/// a*x + b*y, elementwise.
ImageTensor lincomb(double a, const ImageTensor& x, double b, const ImageTensor& y);
ImageTensor scaled(double a, const ImageTensor& x);

double l2_norm(const ImageTensor& x) noexcept;
double l2_distance(const ImageTensor& a, const ImageTensor& b);

/// FNV-1a over the raw bytes of the stored doubles; used for golden checks.
std::uint64_t content_hash(const ImageTensor& x) noexcept;

}  // namespace dualstyle
