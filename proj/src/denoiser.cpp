#include "dualstyle/denoiser.hpp"

#include <array>
#include <cmath>
#include <string>

#include "dualstyle/errors.hpp"
#include "nn.hpp"

namespace dualstyle {

std::vector<double> Conditioning::as_vector(int width) const {
    if (!vector_) return std::vector<double>(width, 0.0);
    if (static_cast<int>(vector_->size()) != width) {
        throw DimensionError("conditioning has width " + std::to_string(vector_->size()) +
                             ", network expects " + std::to_string(width));
    }
    return *vector_;
}

std::vector<double> timestep_embedding(double t, int width) {
    const int half = width / 2;
    std::vector<double> out(width, 0.0);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        out[i] = std::cos(t * freq);
        out[half + i] = std::sin(t * freq);
    }
    return out;
}

struct Denoiser::Layers {
    nn::Conv3x3 conv_in;
    nn::Linear emb;
    nn::Conv3x3 block1;
    nn::Conv3x3 block2;
    nn::Conv3x3 conv_out;
    int t_train = 0;
};

namespace {

std::shared_ptr<const Denoiser::Layers> build_layers(const WeightBundle& w, int& channels);

}  // namespace

Denoiser::Denoiser(WeightBundle weights)
    : weights_(std::make_shared<const WeightBundle>(std::move(weights))) {
    if (weights_->architecture != kToyUnetArchitecture) {
        throw FormatError("architecture '" + weights_->architecture + "' is not a denoiser");
    }
    embed_width_ = weights_->embed_width;
    layers_ = build_layers(*weights_, channels_);
}

namespace {

std::shared_ptr<const Denoiser::Layers> build_layers(const WeightBundle& w, int& channels) {
    const auto& conv_in_w = w.get("conv_in.weight");
    if (conv_in_w.shape.size() != 4) throw CorruptWeightsError("conv_in.weight must be 4-D");
    channels = conv_in_w.shape[1];
    const int hid = kToyUnetHidden;
    const int cond = kTimeEmbedWidth + w.embed_width;
    if (w.embed_width < 0) throw CorruptWeightsError("negative embed_width");

    auto layers = std::make_shared<Denoiser::Layers>();
    const std::array<int, 4> in_shape{hid, channels, 3, 3};
    const std::array<int, 4> hid_shape{hid, hid, 3, 3};
    const std::array<int, 4> out_shape{channels, hid, 3, 3};
    const std::array<int, 2> emb_shape{hid, cond};
    const std::array<int, 1> hid_bias{hid};
    const std::array<int, 1> out_bias{channels};
    layers->conv_in = nn::Conv3x3(w.expect("conv_in.weight", in_shape), w.expect("conv_in.bias", hid_bias));
    layers->emb = nn::Linear(w.expect("emb.weight", emb_shape), w.expect("emb.bias", hid_bias));
    layers->block1 = nn::Conv3x3(w.expect("block1.weight", hid_shape), w.expect("block1.bias", hid_bias));
    layers->block2 = nn::Conv3x3(w.expect("block2.weight", hid_shape), w.expect("block2.bias", hid_bias));
    layers->conv_out = nn::Conv3x3(w.expect("conv_out.weight", out_shape), w.expect("conv_out.bias", out_bias));
    if (w.attributes.count("t_train")) layers->t_train = std::stoi(w.attribute("t_train"));
    return layers;
}

void add_residual(ImageTensor& h, const nn::Conv3x3& block) {
    const ImageTensor r = block.forward(nn::silu(h));
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += r[i];
}

}  // namespace

ImageTensor Denoiser::forward(const ImageTensor& x, std::span<const double> t_embed,
                              const Conditioning& c) const {
    if (x.channels() != channels_) {
        throw DimensionError("denoiser expects " + std::to_string(channels_) + " channels, got " +
                             std::to_string(x.channels()));
    }
    if (static_cast<int>(t_embed.size()) != kTimeEmbedWidth) {
        throw DimensionError("timestep embedding must have width " + std::to_string(kTimeEmbedWidth));
    }
    std::vector<double> joint(t_embed.begin(), t_embed.end());
    const auto cv = c.as_vector(embed_width_);
    joint.insert(joint.end(), cv.begin(), cv.end());
    const auto shift = layers_->emb.forward(joint);

    ImageTensor h = layers_->conv_in.forward(x);
    const int hid = h.channels();
    for (std::size_t p = 0; p < h.size(); p += hid) {
        for (int k = 0; k < hid; ++k) h[p + k] += shift[k];
    }
    add_residual(h, layers_->block1);
    add_residual(h, layers_->block2);
    return layers_->conv_out.forward(h);
}

ImageTensor Denoiser::predict_eps(const ImageTensor& x_t, int t, const Conditioning& c) const {
    if (t < 0 || (layers_->t_train > 0 && t >= layers_->t_train)) {
        throw ParameterError("step " + std::to_string(t) + " outside the training horizon");
    }
    const auto emb = timestep_embedding(t);
    return forward(x_t, emb, c);
}

ImageTensor toy_forward(std::string_view architecture, const WeightBundle& weights,
                        const ImageTensor& x, std::span<const double> t_embed,
                        const Conditioning& c) {
    if (architecture != kToyUnetArchitecture) {
        throw FormatError("unknown denoiser architecture '" + std::string(architecture) + "'");
    }
    WeightBundle copy = weights;
    copy.architecture = std::string(architecture);
    return Denoiser(std::move(copy)).forward(x, t_embed, c);
}

Denoiser load_weights(const std::filesystem::path& path) {
    return Denoiser(read_weight_file(path));
}

ImageTensor blend_eps(const ImageTensor& eps1, const ImageTensor& eps2, double w) {
    require_same_shape(eps1, eps2, "blend_eps");
    if (!(w >= 0.0 && w <= 1.0)) {
        throw ParameterError("blend weight w must lie in [0, 1], got " + std::to_string(w));
    }
    if (w == 1.0) return eps1;
    if (w == 0.0) return eps2;
    return lincomb(w, eps1, 1.0 - w, eps2);
}

}  // namespace dualstyle
