#pragma once

// Small dense kernels shared by the toy networks. Tensors are ImageTensor
// (H x W x C, channels interleaved); convolutions are 3x3, stride 1, zero
// padding 1.

#include <cmath>
#include <span>
#include <vector>

#include "dualstyle/image.hpp"
#include "dualstyle/weights.hpp"

namespace dualstyle::nn {

struct Conv3x3 {
    int in_channels = 0;
    int out_channels = 0;
    // Laid out [ky][kx][out][in] for the inner loop.
    std::vector<double> weight;
    std::vector<double> bias;

    Conv3x3() = default;
    /// From a DSW1 tensor shaped [out, in, 3, 3] and a bias shaped [out].
    Conv3x3(const NamedTensor& w, const NamedTensor& b);

    ImageTensor forward(const ImageTensor& x) const;
    /// Adjoint with respect to the input: given dL/dy returns dL/dx.
    ImageTensor backward_input(const ImageTensor& grad_out) const;
};

struct Linear {
    int in_features = 0;
    int out_features = 0;
    std::vector<double> weight;  // [out][in]
    std::vector<double> bias;

    Linear() = default;
    Linear(const NamedTensor& w, const NamedTensor& b);

    std::vector<double> forward(std::span<const double> x) const;
    std::vector<double> backward_input(std::span<const double> grad_out) const;
};

inline double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }
inline double silu(double z) noexcept { return z * sigmoid(z); }
inline double silu_grad(double z) noexcept {
    const double s = sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
}

ImageTensor silu(const ImageTensor& x);

/// Non-overlapping k x k mean pooling; H and W must be multiples of k.
ImageTensor avg_pool(const ImageTensor& x, int k);
/// Adjoint of avg_pool: spreads each gradient over its k x k window.
ImageTensor avg_pool_backward(const ImageTensor& grad_out, int k);

std::vector<double> to_double(std::span<const float> v);

}  // namespace dualstyle::nn
