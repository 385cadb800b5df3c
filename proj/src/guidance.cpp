#include "dualstyle/guidance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dualstyle/errors.hpp"
#include "dualstyle/solver.hpp"
#include "nn.hpp"

namespace dualstyle {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void require_unit(std::span<const double> v, const char* what) {
    const double n = std::sqrt(dot(v, v));
    if (std::abs(n - 1.0) > 1e-4) {
        throw NormalizationError(std::string(what) + " is not unit-norm (|v| = " + std::to_string(n) + ")");
    }
}

void check_finite(const ImageTensor& g, const char* term) {
    if (!g.all_finite()) throw NumericError(term, std::string("non-finite gradient in ") + term + " term");
}

void check_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NumericError(term, std::string("non-finite value of ") + term + " term");
}

void accumulate(ImageTensor& acc, double w, const ImageTensor& g) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * g[i];
}

std::vector<std::string> split_vocabulary(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

// --- config ----------------------------------------------------------------

void GuidanceConfig::validate(int height, int width) const {
    for (double l : {lambda_d, lambda_c1, lambda_c2, lambda_aes, lambda_tv}) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigurationError("loss weights must be finite and >= 0");
    }
    if (!(tau > 0.0)) throw ConfigurationError("temperature tau must be > 0");
    if (patch_size < 1 || height % patch_size != 0 || width % patch_size != 0) {
        throw ConfigurationError("patch_size " + std::to_string(patch_size) + " does not tile a " +
                                 std::to_string(height) + "x" + std::to_string(width) + " image");
    }
    if ((height / patch_size) * (width / patch_size) < 2) {
        throw ConfigurationError("patch contrast needs at least two patches");
    }
}

// --- embedder --------------------------------------------------------------

struct Embedder::Impl {
    nn::Conv3x3 conv;
    int pool = 4;
    nn::Linear proj;
    nn::Linear tag;
};

Embedder::Embedder(const WeightBundle& w) {
    if (w.architecture != "toy-embed-v1") {
        throw FormatError("architecture '" + w.architecture + "' is not an embedder");
    }
    auto impl = std::make_shared<Impl>();
    impl->conv = nn::Conv3x3(w.get("img.conv.weight"), w.get("img.conv.bias"));
    impl->proj = nn::Linear(w.get("img.proj.weight"), w.get("img.proj.bias"));
    impl->tag = nn::Linear(w.get("tag.weight"), w.get("tag.bias"));
    width_ = w.embed_width;
    if (impl->proj.out_features != width_ || impl->tag.out_features != width_) {
        throw CorruptWeightsError("embedder projections disagree with embed_width");
    }
    vocabulary_ = split_vocabulary(w.attribute("vocabulary"));
    if (static_cast<int>(vocabulary_.size()) != impl->tag.in_features) {
        throw CorruptWeightsError("vocabulary size does not match tag.weight");
    }
    impl_ = std::move(impl);
}

std::vector<double> Embedder::embed_prompt(std::string_view tag) const {
    auto it = std::find(vocabulary_.begin(), vocabulary_.end(), tag);
    if (it == vocabulary_.end()) {
        std::string known;
        for (const auto& v : vocabulary_) known += (known.empty() ? "" : ", ") + v;
        throw VocabularyError("unknown prompt tag '" + std::string(tag) + "' (known: " + known + ")");
    }
    std::vector<double> onehot(vocabulary_.size(), 0.0);
    onehot[it - vocabulary_.begin()] = 1.0;
    auto z = impl_->tag.forward(onehot);
    const double n = std::sqrt(dot(z, z));
    for (double& v : z) v /= n;
    return z;
}

std::vector<double> Embedder::embed_image(const ImageTensor& x) const {
    const ImageTensor pooled = nn::avg_pool(nn::silu(impl_->conv.forward(x)), impl_->pool);
    auto z = impl_->proj.forward(pooled.values());
    const double n = std::sqrt(dot(z, z));
    for (double& v : z) v /= n;
    return z;
}

ImageTensor Embedder::embed_image_backward(const ImageTensor& x, std::span<const double> grad_u) const {
    if (static_cast<int>(grad_u.size()) != width_) throw DimensionError("embedding gradient width mismatch");
    const ImageTensor pre = impl_->conv.forward(x);
    const ImageTensor pooled = nn::avg_pool(nn::silu(pre), impl_->pool);
    auto z = impl_->proj.forward(pooled.values());
    const double n = std::sqrt(dot(z, z));
    std::vector<double> u(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) u[i] = z[i] / n;
    const double ug = dot(u, grad_u);
    std::vector<double> gz(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) gz[i] = (grad_u[i] - u[i] * ug) / n;

    const auto gflat = impl_->proj.backward_input(gz);
    ImageTensor gpool(pooled.shape(), gflat);
    ImageTensor gact = nn::avg_pool_backward(gpool, impl_->pool);
    for (std::size_t i = 0; i < gact.size(); ++i) gact[i] *= nn::silu_grad(pre[i]);
    return impl_->conv.backward_input(gact);
}

// --- features --------------------------------------------------------------

struct FeatureExtractor::Layer {
    nn::Conv3x3 conv;
};

FeatureExtractor::FeatureExtractor(const WeightBundle& w) {
    if (w.architecture != "toy-features-v1") {
        throw FormatError("architecture '" + w.architecture + "' is not a feature extractor");
    }
    auto layers = std::make_shared<std::vector<Layer>>();
    constexpr std::array<int, 3> kPools{1, 2, 4};
    for (int i = 0; i < 3; ++i) {
        const std::string base = "layer" + std::to_string(i);
        if (i > 0 && !w.contains(base + ".weight")) break;
        layers->push_back({nn::Conv3x3(w.get(base + ".weight"), w.get(base + ".bias"))});
        pools_.push_back(kPools[i]);
    }
    layers_ = std::move(layers);
}

std::vector<ImageTensor> FeatureExtractor::features(const ImageTensor& x) const {
    std::vector<ImageTensor> out;
    out.reserve(layers_->size());
    for (std::size_t i = 0; i < layers_->size(); ++i) {
        out.push_back((*layers_)[i].conv.forward(nn::avg_pool(x, pools_[i])));
    }
    return out;
}

ImageTensor FeatureExtractor::backward(const Shape& input, std::span<const ImageTensor> grads) const {
    ImageTensor gx(input);
    for (std::size_t i = 0; i < layers_->size(); ++i) {
        const ImageTensor g = nn::avg_pool_backward((*layers_)[i].conv.backward_input(grads[i]), pools_[i]);
        require_same_shape(gx, g, "FeatureExtractor::backward");
        accumulate(gx, 1.0, g);
    }
    return gx;
}

// --- patch encoder ---------------------------------------------------------

PatchEncoder::PatchEncoder(const WeightBundle& w) {
    const auto& t = w.get("patch.weight");
    if (t.shape.size() != 2) throw CorruptWeightsError("patch.weight must be 2-D");
    patch_size_ = std::stoi(w.attribute("patch_size"));
    channels_ = std::stoi(w.attribute("channels"));
    dim_ = t.shape[0];
    if (t.shape[1] != patch_size_ * patch_size_ * channels_) {
        throw CorruptWeightsError("patch.weight does not match patch_size x patch_size x channels");
    }
    weight_ = nn::to_double(t.values);
}

std::vector<std::vector<double>> PatchEncoder::encode(const ImageTensor& x) const {
    const int P = patch_size_;
    if (x.channels() != channels_ || x.height() % P != 0 || x.width() % P != 0) {
        throw DimensionError("image " + x.shape().str() + " does not tile into " + std::to_string(P) +
                             "-pixel patches of " + std::to_string(channels_) + " channels");
    }
    const int in = P * P * channels_;
    std::vector<double> patch(in);
    std::vector<std::vector<double>> out;
    for (int py = 0; py < x.height() / P; ++py) {
        for (int px = 0; px < x.width() / P; ++px) {
            int k = 0;
            for (int dy = 0; dy < P; ++dy) {
                for (int dx = 0; dx < P; ++dx) {
                    for (int c = 0; c < channels_; ++c) patch[k++] = x.at(py * P + dy, px * P + dx, c);
                }
            }
            std::vector<double> v(dim_);
            for (int d = 0; d < dim_; ++d) v[d] = dot({&weight_[static_cast<std::size_t>(d) * in], static_cast<std::size_t>(in)}, patch);
            out.push_back(std::move(v));
        }
    }
    return out;
}

ImageTensor PatchEncoder::backward(const Shape& input, const std::vector<std::vector<double>>& grads) const {
    const int P = patch_size_;
    const int in = P * P * channels_;
    ImageTensor gx(input);
    const int cols = input.width / P;
    for (std::size_t s = 0; s < grads.size(); ++s) {
        const int py = static_cast<int>(s) / cols;
        const int px = static_cast<int>(s) % cols;
        std::vector<double> gp(in, 0.0);
        for (int d = 0; d < dim_; ++d) {
            const double g = grads[s][d];
            const double* row = &weight_[static_cast<std::size_t>(d) * in];
            for (int k = 0; k < in; ++k) gp[k] += g * row[k];
        }
        int k = 0;
        for (int dy = 0; dy < P; ++dy) {
            for (int dx = 0; dx < P; ++dx) {
                for (int c = 0; c < channels_; ++c) gx.at(py * P + dy, px * P + dx, c) += gp[k++];
            }
        }
    }
    return gx;
}

// --- aesthetic scorer ------------------------------------------------------

LinearAestheticScorer::LinearAestheticScorer(const WeightBundle& w, std::shared_ptr<const Embedder> embedder)
    : embedder_(std::move(embedder)) {
    if (w.architecture != "toy-aesthetic-v1") {
        throw FormatError("architecture '" + w.architecture + "' is not an aesthetic scorer");
    }
    const int width = embedder_->width();
    const std::array<int, 1> head_shape{width};
    const std::array<int, 1> scalar{1};
    head_ = nn::to_double(w.expect("head.weight", head_shape).values);
    gain_ = w.expect("prompt.gain", scalar).values[0];
    bias_ = w.expect("head.bias", scalar).values[0];
}

LinearAestheticScorer::LinearAestheticScorer(std::vector<double> head, double gain, double bias,
                                             std::shared_ptr<const Embedder> embedder)
    : head_(std::move(head)), gain_(gain), bias_(bias), embedder_(std::move(embedder)) {
    if (static_cast<int>(head_.size()) != embedder_->width()) throw DimensionError("scorer head width mismatch");
}

double LinearAestheticScorer::score(const ImageTensor& x, std::span<const double> e_prompt) const {
    const auto u = embedder_->embed_image(x);
    return dot(head_, u) + gain_ * dot(u, e_prompt) + bias_;
}

ImageTensor LinearAestheticScorer::score_gradient(const ImageTensor& x, std::span<const double> e_prompt) const {
    std::vector<double> gu(head_);
    for (std::size_t i = 0; i < gu.size(); ++i) gu[i] += gain_ * e_prompt[i];
    return embedder_->embed_image_backward(x, gu);
}

GuidanceModels load_guidance_models(const std::filesystem::path& dir) {
    GuidanceModels m;
    auto embedder = std::make_shared<const Embedder>(read_weight_file(dir / "embedder.dsw"));
    const WeightBundle features = read_weight_file(dir / "features.dsw");
    m.extractor = std::make_shared<const FeatureExtractor>(features);
    m.patch_encoder = std::make_shared<const PatchEncoder>(features);
    m.scorer = std::make_shared<const LinearAestheticScorer>(read_weight_file(dir / "aesthetic.dsw"), embedder);
    m.embedder = std::move(embedder);
    return m;
}

// --- terms -----------------------------------------------------------------

double instruction_loss(std::span<const double> e_img, std::span<const double> e_prompt) {
    if (e_img.size() != e_prompt.size()) throw DimensionError("embedding widths differ");
    require_unit(e_img, "image embedding");
    require_unit(e_prompt, "prompt embedding");
    return 1.0 - dot(e_img, e_prompt);
}

double content_loss(const ImageTensor& x_out, const ImageTensor& x_in, const FeatureExtractor& f) {
    require_same_shape(x_out, x_in, "content_loss");
    const auto a = f.features(x_out);
    const auto b = f.features(x_in);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += l2_distance(a[i], b[i]);
    return acc / static_cast<double>(a.size());
}

ImageTensor content_loss_gradient(const ImageTensor& x_out, const ImageTensor& x_in,
                                  const FeatureExtractor& f) {
    require_same_shape(x_out, x_in, "content_loss");
    const auto a = f.features(x_out);
    const auto b = f.features(x_in);
    std::vector<ImageTensor> grads;
    const double inv_layers = 1.0 / static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ImageTensor d = lincomb(1.0, a[i], -1.0, b[i]);
        const double n = l2_norm(d);
        grads.push_back(n == 0.0 ? ImageTensor(d.shape()) : scaled(inv_layers / n, d));
    }
    return f.backward(x_out.shape(), grads);
}

namespace {

/// Loss and, optionally, dLoss/dv_s for every location.
double patch_nce_impl(const std::vector<std::vector<double>>& v, const std::vector<std::vector<double>>& u,
                      double tau, std::vector<std::vector<double>>* grad_v) {
    if (v.size() != u.size()) throw DimensionError("patch embedding counts differ");
    if (v.size() < 2) throw ConfigurationError("patch contrast needs at least two patches");
    if (!(tau > 0.0)) throw ConfigurationError("temperature tau must be > 0");
    const std::size_t S = v.size();
    double total = 0.0;
    std::vector<double> logits(S);
    if (grad_v) grad_v->assign(S, std::vector<double>(v[0].size(), 0.0));
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < S; ++j) logits[j] = dot(v[s], u[j]) / tau;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        total += mx + std::log(z) - logits[s];
        if (grad_v) {
            auto& g = (*grad_v)[s];
            for (std::size_t j = 0; j < S; ++j) {
                const double p = std::exp(logits[j] - mx) / z - (j == s ? 1.0 : 0.0);
                if (p == 0.0) continue;
                for (std::size_t d = 0; d < g.size(); ++d) g[d] += p * u[j][d] / tau;
            }
        }
    }
    return total;
}

}  // namespace

double patch_nce(const std::vector<std::vector<double>>& v_out, const std::vector<std::vector<double>>& u_in,
                 double tau) {
    return patch_nce_impl(v_out, u_in, tau, nullptr);
}

double patch_contrastive_loss(const ImageTensor& x_out, const ImageTensor& x_in, const PatchEncoder& enc,
                              const GuidanceConfig& cfg) {
    require_same_shape(x_out, x_in, "patch_contrastive_loss");
    if (cfg.patch_size != enc.patch_size()) {
        throw ConfigurationError("patch_size " + std::to_string(cfg.patch_size) +
                                 " does not match the patch encoder (" + std::to_string(enc.patch_size()) + ")");
    }
    return patch_nce_impl(enc.encode(x_out), enc.encode(x_in), cfg.tau, nullptr);
}

ImageTensor patch_contrastive_gradient(const ImageTensor& x_out, const ImageTensor& x_in,
                                       const PatchEncoder& enc, const GuidanceConfig& cfg) {
    require_same_shape(x_out, x_in, "patch_contrastive_loss");
    if (cfg.patch_size != enc.patch_size()) {
        throw ConfigurationError("patch_size does not match the patch encoder");
    }
    std::vector<std::vector<double>> gv;
    patch_nce_impl(enc.encode(x_out), enc.encode(x_in), cfg.tau, &gv);
    return enc.backward(x_out.shape(), gv);
}

double aesthetic_loss(const ImageTensor& x, std::span<const double> e_prompt, const AestheticScorer& r) {
    return -r.score(x, e_prompt);
}

double tv_loss(const ImageTensor& x) {
    double acc = 0.0;
    for (int r = 0; r < x.height(); ++r) {
        for (int c = 0; c < x.width(); ++c) {
            for (int ch = 0; ch < x.channels(); ++ch) {
                const double v = x.at(r, c, ch);
                if (r + 1 < x.height()) acc += std::abs(x.at(r + 1, c, ch) - v);
                if (c + 1 < x.width()) acc += std::abs(x.at(r, c + 1, ch) - v);
            }
        }
    }
    return acc;
}

ImageTensor tv_loss_gradient(const ImageTensor& x) {
    auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : (d == 0.0 ? 0.0 : d)); };
    ImageTensor g(x.shape());
    for (int r = 0; r < x.height(); ++r) {
        for (int c = 0; c < x.width(); ++c) {
            for (int ch = 0; ch < x.channels(); ++ch) {
                const double v = x.at(r, c, ch);
                if (r + 1 < x.height()) {
                    const double s = sign(x.at(r + 1, c, ch) - v);
                    g.at(r + 1, c, ch) += s;
                    g.at(r, c, ch) -= s;
                }
                if (c + 1 < x.width()) {
                    const double s = sign(x.at(r, c + 1, ch) - v);
                    g.at(r, c + 1, ch) += s;
                    g.at(r, c, ch) -= s;
                }
            }
        }
    }
    return g;
}

// --- composite -------------------------------------------------------------

LossTerms loss_terms(const ImageTensor& x, const ImageTensor& x0, std::span<const double> e_prompt,
                     const GuidanceConfig& cfg, const GuidanceModels& models) {
    require_same_shape(x, x0, "total_loss");
    LossTerms t;
    t.instruction = instruction_loss(models.embedder->embed_image(x), e_prompt);
    check_finite(t.instruction, "instruction");
    t.content = content_loss(x, x0, *models.extractor);
    check_finite(t.content, "content");
    t.patch = patch_contrastive_loss(x, x0, *models.patch_encoder, cfg);
    check_finite(t.patch, "patch");
    t.aesthetic = aesthetic_loss(x, e_prompt, *models.scorer);
    check_finite(t.aesthetic, "aesthetic");
    t.tv = tv_loss(x);
    check_finite(t.tv, "tv");
    return t;
}

double total_loss(const ImageTensor& x, const ImageTensor& x0, std::span<const double> e_prompt,
                  const GuidanceConfig& cfg, const GuidanceModels& models) {
    return loss_terms(x, x0, e_prompt, cfg, models).weighted_total(cfg);
}

ImageTensor total_loss_gradient(const ImageTensor& x, const ImageTensor& x0,
                                std::span<const double> e_prompt, const GuidanceConfig& cfg,
                                const GuidanceModels& models) {
    require_same_shape(x, x0, "total_loss_gradient");
    ImageTensor g(x.shape());
    if (cfg.lambda_d != 0.0) {
        // d(1 - u.e)/du = -e
        std::vector<double> gu(e_prompt.begin(), e_prompt.end());
        for (double& v : gu) v = -v;
        const ImageTensor gi = models.embedder->embed_image_backward(x, gu);
        check_finite(gi, "instruction");
        accumulate(g, cfg.lambda_d, gi);
    }
    if (cfg.lambda_c1 != 0.0) {
        const ImageTensor gc = content_loss_gradient(x, x0, *models.extractor);
        check_finite(gc, "content");
        accumulate(g, cfg.lambda_c1, gc);
    }
    if (cfg.lambda_c2 != 0.0) {
        const ImageTensor gp = patch_contrastive_gradient(x, x0, *models.patch_encoder, cfg);
        check_finite(gp, "patch");
        accumulate(g, cfg.lambda_c2, gp);
    }
    if (cfg.lambda_aes != 0.0) {
        const ImageTensor ga = models.scorer->score_gradient(x, e_prompt);
        check_finite(ga, "aesthetic");
        accumulate(g, -cfg.lambda_aes, ga);
    }
    if (cfg.lambda_tv != 0.0) {
        const ImageTensor gt = tv_loss_gradient(x);
        check_finite(gt, "tv");
        accumulate(g, cfg.lambda_tv, gt);
    }
    return g;
}

double guidance_objective(const ImageTensor& x_t, const GuidanceContext& ctx) {
    const ImageTensor x0_hat = predict_x0(x_t, ctx.eps, ctx.t, ctx.schedule);
    return total_loss(x0_hat, ctx.content, ctx.e_prompt, ctx.cfg, ctx.models);
}

ImageTensor guidance_gradient(const ImageTensor& x_t, const GuidanceContext& ctx) {
    require_same_shape(x_t, ctx.eps, "guidance_gradient");
    if (ctx.cfg.guidance_off()) return ImageTensor(x_t.shape());
    const ImageTensor x0_hat = predict_x0(x_t, ctx.eps, ctx.t, ctx.schedule);
    // d x0_hat / d x_t = 1 / sqrt(abar_t) with eps held fixed.
    return scaled(1.0 / std::sqrt(ctx.schedule.alpha_bar(ctx.t)),
                  total_loss_gradient(x0_hat, ctx.content, ctx.e_prompt, ctx.cfg, ctx.models));
}

}  // namespace dualstyle
