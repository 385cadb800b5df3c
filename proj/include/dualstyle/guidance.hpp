#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualstyle/image.hpp"
#include "dualstyle/schedule.hpp"
#include "dualstyle/weights.hpp"

namespace dualstyle {

/// Loss weights and contrastive settings.
struct GuidanceConfig {
    double lambda_d = 50.0;
    double lambda_c1 = 3.0;
    double lambda_c2 = 1.0;
    double lambda_aes = 10.0;
    double lambda_tv = 80.0;
    int patch_size = 4;
    double tau = 0.07;

    /// ConfigurationError unless the weights are non-negative, tau > 0 and
    /// patch_size tiles a height x width image into at least two patches.
    void validate(int height, int width) const;
    bool guidance_off() const noexcept {
        return lambda_d == 0.0 && lambda_c1 == 0.0 && lambda_c2 == 0.0 && lambda_aes == 0.0 &&
               lambda_tv == 0.0;
    }
};

/// Stand-in for a joint image/text embedding model ("toy-embed-v1").
///
/// Image side: 3x3 conv to 8 channels, SiLU, 4x4 mean pooling, flatten,
/// linear map to the embedding width, L2 normalisation. Prompt side: a
/// closed vocabulary of style tags, one-hot into a linear map, L2
/// normalisation. Both sides emit unit vectors.
class Embedder {
public:
    explicit Embedder(const WeightBundle& weights);

    int width() const noexcept { return width_; }
    const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }

    std::vector<double> embed_prompt(std::string_view tag) const;
    std::vector<double> embed_image(const ImageTensor& x) const;
    /// Vector-Jacobian product of embed_image at x.
    ImageTensor embed_image_backward(const ImageTensor& x, std::span<const double> grad_u) const;

private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
    int width_ = 0;
    std::vector<std::string> vocabulary_;
};

/// Multi-scale linear feature stack ("toy-features-v1" layer{0,1,2}):
/// layer i mean-pools by 1, 2, 4 and applies a fixed 3x3 convolution.
/// Bundles may stop after layer0 or layer1.
class FeatureExtractor {
public:
    explicit FeatureExtractor(const WeightBundle& weights);

    int layer_count() const noexcept { return static_cast<int>(pools_.size()); }
    std::vector<ImageTensor> features(const ImageTensor& x) const;
    /// Adjoint: sums the pull-back of each layer's gradient onto the image.
    ImageTensor backward(const Shape& input, std::span<const ImageTensor> grads) const;

private:
    struct Layer;
    std::shared_ptr<const std::vector<Layer>> layers_;
    std::vector<int> pools_;
};

/// Linear projection of a flattened P x P x C patch (tensor "patch.weight"
/// of the features bundle).
class PatchEncoder {
public:
    explicit PatchEncoder(const WeightBundle& weights);

    int patch_size() const noexcept { return patch_size_; }
    int dim() const noexcept { return dim_; }
    /// One embedding per non-overlapping patch, row-major over patch positions.
    std::vector<std::vector<double>> encode(const ImageTensor& x) const;
    /// Pulls per-patch embedding gradients back onto the image.
    ImageTensor backward(const Shape& input, const std::vector<std::vector<double>>& grads) const;

private:
    int patch_size_ = 0;
    int channels_ = 0;
    int dim_ = 0;
    std::vector<double> weight_;  // [dim][P*P*C]
};

/// R(x, e_prompt); a higher score is better.
class AestheticScorer {
public:
    virtual ~AestheticScorer() = default;
    virtual double score(const ImageTensor& x, std::span<const double> e_prompt) const = 0;
    virtual ImageTensor score_gradient(const ImageTensor& x, std::span<const double> e_prompt) const = 0;
};

class ConstantScorer final : public AestheticScorer {
public:
    explicit ConstantScorer(double value) : value_(value) {}
    double score(const ImageTensor&, std::span<const double>) const override { return value_; }
    ImageTensor score_gradient(const ImageTensor& x, std::span<const double>) const override {
        return ImageTensor(x.shape());
    }

private:
    double value_;
};

/// "toy-aesthetic-v1": head . u + gain * (u . e_prompt) + bias, where u is
/// the embedder's image embedding.
class LinearAestheticScorer final : public AestheticScorer {
public:
    LinearAestheticScorer(const WeightBundle& weights, std::shared_ptr<const Embedder> embedder);
    LinearAestheticScorer(std::vector<double> head, double gain, double bias,
                          std::shared_ptr<const Embedder> embedder);

    double score(const ImageTensor& x, std::span<const double> e_prompt) const override;
    ImageTensor score_gradient(const ImageTensor& x, std::span<const double> e_prompt) const override;

private:
    std::vector<double> head_;
    double gain_ = 0.0;
    double bias_ = 0.0;
    std::shared_ptr<const Embedder> embedder_;
};

/// Everything the loss terms need besides the images themselves.
struct GuidanceModels {
    std::shared_ptr<const Embedder> embedder;
    std::shared_ptr<const FeatureExtractor> extractor;
    std::shared_ptr<const PatchEncoder> patch_encoder;
    std::shared_ptr<const AestheticScorer> scorer;
};

/// Loads embedder.dsw, features.dsw and aesthetic.dsw from `dir`.
GuidanceModels load_guidance_models(const std::filesystem::path& dir);

// --- individual terms ------------------------------------------------------

/// Cosine distance 1 - <e_img, e_prompt> of two unit vectors.
double instruction_loss(std::span<const double> e_img, std::span<const double> e_prompt);

/// Mean over layers of the Euclidean distance between feature maps.
double content_loss(const ImageTensor& x_out, const ImageTensor& x_in, const FeatureExtractor& f);
ImageTensor content_loss_gradient(const ImageTensor& x_out, const ImageTensor& x_in,
                                  const FeatureExtractor& f);

/// Patch-wise InfoNCE on precomputed embeddings: for each location s,
/// -log softmax_j(<v_s, u_j> / tau) at j = s, summed over s.
double patch_nce(const std::vector<std::vector<double>>& v_out,
                 const std::vector<std::vector<double>>& u_in, double tau);

double patch_contrastive_loss(const ImageTensor& x_out, const ImageTensor& x_in,
                              const PatchEncoder& enc, const GuidanceConfig& cfg);
ImageTensor patch_contrastive_gradient(const ImageTensor& x_out, const ImageTensor& x_in,
                                       const PatchEncoder& enc, const GuidanceConfig& cfg);

double aesthetic_loss(const ImageTensor& x, std::span<const double> e_prompt,
                      const AestheticScorer& r);

/// Sum of absolute vertical and horizontal neighbour differences over all
/// channels.
double tv_loss(const ImageTensor& x);
/// Subgradient with sign(0) = 0.
ImageTensor tv_loss_gradient(const ImageTensor& x);

// --- composite -------------------------------------------------------------

struct LossTerms {
    double instruction = 0.0;
    double content = 0.0;
    double patch = 0.0;
    double aesthetic = 0.0;
    double tv = 0.0;

    double weighted_total(const GuidanceConfig& cfg) const noexcept {
        return cfg.lambda_d * instruction + cfg.lambda_c1 * content + cfg.lambda_c2 * patch +
               cfg.lambda_aes * aesthetic + cfg.lambda_tv * tv;
    }
};

/// Unweighted values of the five terms for image `x` against content `x0`.
LossTerms loss_terms(const ImageTensor& x, const ImageTensor& x0, std::span<const double> e_prompt,
                     const GuidanceConfig& cfg, const GuidanceModels& models);

double total_loss(const ImageTensor& x, const ImageTensor& x0, std::span<const double> e_prompt,
                  const GuidanceConfig& cfg, const GuidanceModels& models);

/// Gradient of total_loss with respect to `x`. Terms with zero weight are
/// skipped. NumericError names the offending term.
ImageTensor total_loss_gradient(const ImageTensor& x, const ImageTensor& x0,
                                std::span<const double> e_prompt, const GuidanceConfig& cfg,
                                const GuidanceModels& models);

/// State of one guided step. The losses are evaluated on the one-step
/// clean estimate x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t) with
/// `eps` (the blended prediction) held fixed.
struct GuidanceContext {
    const ImageTensor& eps;
    int t;
    const NoiseSchedule& schedule;
    const ImageTensor& content;
    std::span<const double> e_prompt;
    const GuidanceConfig& cfg;
    const GuidanceModels& models;
};

double guidance_objective(const ImageTensor& x_t, const GuidanceContext& ctx);
ImageTensor guidance_gradient(const ImageTensor& x_t, const GuidanceContext& ctx);

}  // namespace dualstyle
