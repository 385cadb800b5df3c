#include "nn.hpp"

#include <string>

#include "dualstyle/errors.hpp"

namespace dualstyle::nn {

std::vector<double> to_double(std::span<const float> v) {
    return std::vector<double>(v.begin(), v.end());
}

Conv3x3::Conv3x3(const NamedTensor& w, const NamedTensor& b) {
    if (w.shape.size() != 4 || w.shape[2] != 3 || w.shape[3] != 3) {
        throw CorruptWeightsError("'" + w.name + "' is not a 3x3 convolution kernel");
    }
    out_channels = w.shape[0];
    in_channels = w.shape[1];
    if (b.shape.size() != 1 || b.shape[0] != out_channels) {
        throw CorruptWeightsError("'" + b.name + "' does not match '" + w.name + "'");
    }
    weight.resize(w.values.size());
    for (int o = 0; o < out_channels; ++o) {
        for (int i = 0; i < in_channels; ++i) {
            for (int k = 0; k < 9; ++k) {
                weight[(static_cast<std::size_t>(k) * out_channels + o) * in_channels + i] =
                    w.values[(static_cast<std::size_t>(o) * in_channels + i) * 9 + k];
            }
        }
    }
    bias = to_double(b.values);
}

ImageTensor Conv3x3::forward(const ImageTensor& x) const {
    if (x.channels() != in_channels) {
        throw DimensionError("convolution expects " + std::to_string(in_channels) +
                             " input channels, got " + std::to_string(x.channels()));
    }
    const int H = x.height();
    const int W = x.width();
    ImageTensor y(H, W, out_channels);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double* acc = &y.at(r, c, 0);
            for (int o = 0; o < out_channels; ++o) acc[o] = bias[o];
            for (int ky = 0; ky < 3; ++ky) {
                const int rr = r + ky - 1;
                if (rr < 0 || rr >= H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int cc = c + kx - 1;
                    if (cc < 0 || cc >= W) continue;
                    const double* in = &x.at(rr, cc, 0);
                    const double* wk = &weight[static_cast<std::size_t>(ky * 3 + kx) * out_channels * in_channels];
                    for (int o = 0; o < out_channels; ++o) {
                        const double* wo = wk + static_cast<std::size_t>(o) * in_channels;
                        double s = 0.0;
                        for (int i = 0; i < in_channels; ++i) s += wo[i] * in[i];
                        acc[o] += s;
                    }
                }
            }
        }
    }
    return y;
}

ImageTensor Conv3x3::backward_input(const ImageTensor& grad_out) const {
    if (grad_out.channels() != out_channels) {
        throw DimensionError("convolution adjoint expects " + std::to_string(out_channels) +
                             " channels, got " + std::to_string(grad_out.channels()));
    }
    const int H = grad_out.height();
    const int W = grad_out.width();
    ImageTensor gx(H, W, in_channels);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double* g = &grad_out.at(r, c, 0);
            for (int ky = 0; ky < 3; ++ky) {
                const int rr = r + ky - 1;
                if (rr < 0 || rr >= H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int cc = c + kx - 1;
                    if (cc < 0 || cc >= W) continue;
                    double* out = &gx.at(rr, cc, 0);
                    const double* wk = &weight[static_cast<std::size_t>(ky * 3 + kx) * out_channels * in_channels];
                    for (int o = 0; o < out_channels; ++o) {
                        const double go = g[o];
                        if (go == 0.0) continue;
                        const double* wo = wk + static_cast<std::size_t>(o) * in_channels;
                        for (int i = 0; i < in_channels; ++i) out[i] += go * wo[i];
                    }
                }
            }
        }
    }
    return gx;
}

Linear::Linear(const NamedTensor& w, const NamedTensor& b) {
    if (w.shape.size() != 2) throw CorruptWeightsError("'" + w.name + "' is not a matrix");
    out_features = w.shape[0];
    in_features = w.shape[1];
    if (b.shape.size() != 1 || b.shape[0] != out_features) {
        throw CorruptWeightsError("'" + b.name + "' does not match '" + w.name + "'");
    }
    weight = to_double(w.values);
    bias = to_double(b.values);
}

std::vector<double> Linear::forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_features) {
        throw DimensionError("linear layer expects " + std::to_string(in_features) +
                             " inputs, got " + std::to_string(x.size()));
    }
    std::vector<double> y(bias);
    for (int o = 0; o < out_features; ++o) {
        const double* row = &weight[static_cast<std::size_t>(o) * in_features];
        double s = 0.0;
        for (int i = 0; i < in_features; ++i) s += row[i] * x[i];
        y[o] += s;
    }
    return y;
}

std::vector<double> Linear::backward_input(std::span<const double> grad_out) const {
    std::vector<double> gx(in_features, 0.0);
    for (int o = 0; o < out_features; ++o) {
        const double* row = &weight[static_cast<std::size_t>(o) * in_features];
        for (int i = 0; i < in_features; ++i) gx[i] += grad_out[o] * row[i];
    }
    return gx;
}

ImageTensor silu(const ImageTensor& x) {
    ImageTensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = silu(x[i]);
    return y;
}

ImageTensor avg_pool(const ImageTensor& x, int k) {
    if (k == 1) return x;
    if (x.height() % k != 0 || x.width() % k != 0) {
        throw DimensionError("pooling factor " + std::to_string(k) + " does not divide " +
                             x.shape().str());
    }
    ImageTensor y(x.height() / k, x.width() / k, x.channels());
    const double inv = 1.0 / (k * k);
    for (int r = 0; r < x.height(); ++r) {
        for (int c = 0; c < x.width(); ++c) {
            for (int ch = 0; ch < x.channels(); ++ch) y.at(r / k, c / k, ch) += x.at(r, c, ch) * inv;
        }
    }
    return y;
}

ImageTensor avg_pool_backward(const ImageTensor& grad_out, int k) {
    if (k == 1) return grad_out;
    ImageTensor gx(grad_out.height() * k, grad_out.width() * k, grad_out.channels());
    const double inv = 1.0 / (k * k);
    for (int r = 0; r < gx.height(); ++r) {
        for (int c = 0; c < gx.width(); ++c) {
            for (int ch = 0; ch < gx.channels(); ++ch) gx.at(r, c, ch) = grad_out.at(r / k, c / k, ch) * inv;
        }
    }
    return gx;
}

}  // namespace dualstyle::nn
