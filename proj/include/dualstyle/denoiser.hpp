#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dualstyle/image.hpp"
#include "dualstyle/weights.hpp"

namespace dualstyle {

inline constexpr std::string_view kToyUnetArchitecture = "toy-unet-v1";
inline constexpr int kTimeEmbedWidth = 32;
inline constexpr int kToyUnetHidden = 16;

/// Guiding condition for a denoiser: an embedding vector or the null
/// condition, which is encoded as the all-zero vector.
class Conditioning {
public:
    static Conditioning null() { return Conditioning(); }
    static Conditioning embedding(std::vector<double> v) { return Conditioning(std::move(v)); }

    bool is_null() const noexcept { return !vector_.has_value(); }
    /// The vector fed to the network, zero-filled for the null condition.
    std::vector<double> as_vector(int width) const;

private:
    Conditioning() = default;
    explicit Conditioning(std::vector<double> v) : vector_(std::move(v)) {}

    std::optional<std::vector<double>> vector_;
};

/// Sinusoidal embedding of a (training-horizon) step: [cos(t f_i), sin(t f_i)]
/// with f_i = exp(-ln(10000) i / (width / 2)), i = 0 .. width/2 - 1.
std::vector<double> timestep_embedding(double t, int width = kTimeEmbedWidth);

/// Evaluates one of the registered denoiser architectures. Only
/// "toy-unet-v1" exists:
///   h   = conv_in(x) + (emb.weight [t_embed; c] + emb.bias)   broadcast over pixels
///   h  += block1(silu(h))
///   h  += block2(silu(h))
///   out = conv_out(h)
/// with 16 hidden channels and 3x3 zero-padded convolutions throughout.
/// Builds its layers from `weights` on every call; use Denoiser for repeated
/// evaluation.
ImageTensor toy_forward(std::string_view architecture, const WeightBundle& weights,
                        const ImageTensor& x, std::span<const double> t_embed,
                        const Conditioning& c);

/// Epsilon-prediction network. Immutable after construction, so one instance
/// may serve concurrent callers.
class Denoiser {
public:
    explicit Denoiser(WeightBundle weights);

    const WeightBundle& weights() const noexcept { return *weights_; }
    int embed_width() const noexcept { return embed_width_; }
    int channels() const noexcept { return channels_; }

    ImageTensor predict_eps(const ImageTensor& x_t, int t, const Conditioning& c) const;
    ImageTensor forward(const ImageTensor& x, std::span<const double> t_embed,
                        const Conditioning& c) const;

    struct Layers;  // defined in denoiser.cpp

private:
    std::shared_ptr<const WeightBundle> weights_;
    std::shared_ptr<const Layers> layers_;
    int embed_width_ = 0;
    int channels_ = 0;
};

Denoiser load_weights(const std::filesystem::path& path);

/// w * eps1 + (1 - w) * eps2 with w in [0, 1]; the endpoints return the
/// corresponding input unchanged.
ImageTensor blend_eps(const ImageTensor& eps1, const ImageTensor& eps2, double w);

}  // namespace dualstyle
