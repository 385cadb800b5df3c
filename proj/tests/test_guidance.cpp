#include <gtest/gtest.h>

#include <cmath>
#include <iomanip>
#include <numbers>

#include "dualstyle/errors.hpp"
#include "dualstyle/guidance.hpp"
#include "dualstyle/image_io.hpp"
#include "dualstyle/selfcheck.hpp"
#include "dualstyle/solver.hpp"
#include "support.hpp"

using namespace dualstyle;
using dualstyle::testing::fixture_dir;
using dualstyle::testing::fixture_models;
using dualstyle::testing::max_abs_diff;
using dualstyle::testing::uniform_image;

namespace {

const GuidanceModels& gm() { return fixture_models().guidance; }

const ImageTensor& disc() {
    static const ImageTensor x = read_png(fixture_dir() / "content_disc.png");
    return x;
}

const ImageTensor& blocks() {
    static const ImageTensor x = read_png(fixture_dir() / "content_blocks.png");
    return x;
}

GuidanceConfig only(double GuidanceConfig::*field, double value) {
    GuidanceConfig cfg;
    cfg.lambda_d = cfg.lambda_c1 = cfg.lambda_c2 = cfg.lambda_aes = cfg.lambda_tv = 0.0;
    cfg.*field = value;
    return cfg;
}

ImageTensor from_rows(int h, int w, std::vector<double> v) { return ImageTensor(Shape{h, w, 1}, std::move(v)); }

// Recorded once from the committed fixtures.
constexpr double kGoldenContentDiscBlocks = 28.314726761647762;
constexpr double kGoldenAestheticDisc = -0.27220750977274394;

}  // namespace

TEST(InstructionLoss, Examples) {
    const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0}, c{-1.0, 0.0};
    EXPECT_EQ(instruction_loss(a, a), 0.0);
    EXPECT_EQ(instruction_loss(a, b), 1.0);
    EXPECT_EQ(instruction_loss(a, c), 2.0);
}

TEST(InstructionLoss, RangeOnFixtureEmbeddings) {
    for (const auto& tag : gm().embedder->vocabulary()) {
        const auto e = gm().embedder->embed_prompt(tag);
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const double l = instruction_loss(gm().embedder->embed_image(uniform_image({32, 32, 3}, seed)), e);
            EXPECT_GE(l, 0.0);
            EXPECT_LE(l, 2.0);
        }
    }
}

TEST(Embedder, UnitNormOutputs) {
    for (const auto& tag : gm().embedder->vocabulary()) {
        const auto e = gm().embedder->embed_prompt(tag);
        double n = 0.0;
        for (double v : e) n += v * v;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6) << tag;
        EXPECT_EQ(e, gm().embedder->embed_prompt(tag));
    }
    const auto u = gm().embedder->embed_image(disc());
    double n = 0.0;
    for (double v : u) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
}

TEST(Embedder, UnknownTag) {
    try {
        gm().embedder->embed_prompt("cubism");
        FAIL() << "expected VocabularyError";
    } catch (const VocabularyError& e) {
        EXPECT_NE(std::string(e.what()).find("oil-painting"), std::string::npos);
    }
}

TEST(ContentLoss, IdenticalImages) { EXPECT_EQ(content_loss(disc(), disc(), *gm().extractor), 0.0); }

TEST(ContentLoss, UnitImpulseThroughIdentityLayer) {
    WeightBundle b;
    b.architecture = "toy-features-v1";
    std::vector<float> k(3 * 3 * 9, 0.0f);
    for (int c = 0; c < 3; ++c) k[(c * 3 + c) * 9 + 4] = 1.0f;
    b.add("layer0.weight", {3, 3, 3, 3}, k);
    b.add("layer0.bias", {3}, {0.0f, 0.0f, 0.0f});
    const FeatureExtractor identity(b);
    ASSERT_EQ(identity.layer_count(), 1);
    ImageTensor x_in = uniform_image({8, 8, 3}, 1);
    ImageTensor x_out = x_in;
    x_out.at(3, 5, 1) += 1.0;
    EXPECT_NEAR(content_loss(x_out, x_in, identity), 1.0, 1e-12);
}

TEST(ContentLoss, GoldenOnFixtureImages) {
    const double v = content_loss(disc(), blocks(), *gm().extractor);
    EXPECT_NEAR(v, kGoldenContentDiscBlocks, 1e-9) << std::setprecision(17) << v;
}

TEST(PatchNce, SymmetricEmbeddingsGiveLn2PerLocation) {
    const std::vector<std::vector<double>> same{{0.6, 0.8}, {0.6, 0.8}};
    EXPECT_NEAR(patch_nce(same, same, 0.07), 2.0 * std::numbers::ln2, 1e-12);
}

TEST(PatchNce, ScalarOracle) {
    const std::vector<std::vector<double>> u{{1.0, 0.0}, {0.5, std::sqrt(0.75)}};
    const double tau = 0.07;
    const double per = -std::log(std::exp(1.0 / tau) / (std::exp(1.0 / tau) + std::exp(0.5 / tau)));
    EXPECT_NEAR(patch_nce(u, u, tau), 2.0 * per, 1e-12);
}

TEST(PatchNce, SeparatedPositivesApproachZero) {
    const std::vector<std::vector<double>> u{{1.0, 0.0}, {0.0, 1.0}};
    EXPECT_LT(patch_nce(u, u, 0.01), 1e-40);
}

TEST(PatchContrastive, NonNegative) {
    const GuidanceConfig cfg;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        EXPECT_GE(patch_contrastive_loss(uniform_image({32, 32, 3}, seed), disc(), *gm().patch_encoder, cfg), 0.0);
    }
}

TEST(AestheticLoss, ConstantScorer) {
    EXPECT_EQ(aesthetic_loss(disc(), std::vector<double>{1.0}, ConstantScorer(5.0)), -5.0);
}

TEST(AestheticLoss, PromptAlignedScorer) {
    const LinearAestheticScorer r(std::vector<double>(gm().embedder->width(), 0.0), 1.0, 0.0, gm().embedder);
    const auto e = gm().embedder->embed_image(disc());
    EXPECT_NEAR(aesthetic_loss(disc(), e, r), -1.0, 1e-12);
}

TEST(AestheticLoss, GoldenOnFixture) {
    const auto e = gm().embedder->embed_prompt("oil-painting");
    const double v = aesthetic_loss(disc(), e, *gm().scorer);
    EXPECT_NEAR(v, kGoldenAestheticDisc, 1e-9) << std::setprecision(17) << v;
}

TEST(TvLoss, Examples) {
    EXPECT_EQ(tv_loss(ImageTensor(5, 4, 3, 0.3)), 0.0);
    EXPECT_EQ(tv_loss(from_rows(2, 2, {0, 1, 0, 0})), 2.0);
    EXPECT_EQ(tv_loss(from_rows(2, 2, {0, 1, 1, 0})), 4.0);
}

TEST(TvLoss, Homogeneity) {
    const auto x = uniform_image({8, 8, 3}, 2);
    const double base = tv_loss(x);
    for (double c : {-2.5, -1.0, 0.0, 0.3, 7.0}) {
        EXPECT_NEAR(tv_loss(scaled(c, x)), std::abs(c) * base, 1e-10 * std::max(1.0, std::abs(c) * base));
    }
}

TEST(TvLoss, SubgradientAtKink) {
    const auto g = tv_loss_gradient(ImageTensor(3, 3, 1, 0.2));
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(TotalLoss, AllWeightsZero) {
    const GuidanceConfig cfg = only(&GuidanceConfig::lambda_d, 0.0);
    const auto e = gm().embedder->embed_prompt("swirl");
    EXPECT_EQ(total_loss(blocks(), disc(), e, cfg, gm()), 0.0);
    const auto g = total_loss_gradient(blocks(), disc(), e, cfg, gm());
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(TotalLoss, TvOnlyOnConstantImage) {
    const auto e = gm().embedder->embed_prompt("swirl");
    const ImageTensor flat(32, 32, 3, 0.1);
    EXPECT_EQ(total_loss(flat, disc(), e, only(&GuidanceConfig::lambda_tv, 1.0), gm()), 0.0);
}

TEST(TotalLoss, DefaultWeightsCombineComponents) {
    const GuidanceConfig cfg;
    EXPECT_EQ(cfg.lambda_d, 50.0);
    EXPECT_EQ(cfg.lambda_c1, 3.0);
    EXPECT_EQ(cfg.lambda_c2, 1.0);
    EXPECT_EQ(cfg.lambda_aes, 10.0);
    EXPECT_EQ(cfg.lambda_tv, 80.0);
    EXPECT_EQ(cfg.tau, 0.07);
    const auto e = gm().embedder->embed_prompt("watercolor");
    const ImageTensor& x = blocks();
    const double expected = 50.0 * instruction_loss(gm().embedder->embed_image(x), e) +
                            3.0 * content_loss(x, disc(), *gm().extractor) +
                            1.0 * patch_contrastive_loss(x, disc(), *gm().patch_encoder, cfg) +
                            10.0 * aesthetic_loss(x, e, *gm().scorer) + 80.0 * tv_loss(x);
    EXPECT_NEAR(total_loss(x, disc(), e, cfg, gm()), expected, 1e-9 * std::abs(expected));
    const auto terms = loss_terms(x, disc(), e, cfg, gm());
    EXPECT_NEAR(terms.weighted_total(cfg), expected, 1e-9 * std::abs(expected));
}

TEST(TotalLossGradient, ScalesLinearlyInEachWeight) {
    const auto e = gm().embedder->embed_prompt("stripes");
    const auto x = lincomb(0.7, blocks(), 0.3, disc());
    for (auto field : {&GuidanceConfig::lambda_d, &GuidanceConfig::lambda_c1, &GuidanceConfig::lambda_c2,
                       &GuidanceConfig::lambda_aes, &GuidanceConfig::lambda_tv}) {
        const auto g1 = total_loss_gradient(x, disc(), e, only(field, 1.0), gm());
        for (double c : {0.5, 3.0, 80.0}) {
            const auto gc = total_loss_gradient(x, disc(), e, only(field, c), gm());
            for (std::size_t i = 0; i < gc.size(); ++i) {
                EXPECT_NEAR(gc[i], c * g1[i], 1e-10 * std::max(1.0, std::abs(c * g1[i])));
            }
        }
    }
}

TEST(TotalLossGradient, NonFiniteInputNamesTerm) {
    auto x = blocks();
    x[5] = std::nan("");
    const auto e = gm().embedder->embed_prompt("stripes");
    try {
        total_loss_gradient(x, disc(), e, only(&GuidanceConfig::lambda_tv, 1.0), gm());
        FAIL() << "expected NumericError";
    } catch (const NumericError& err) {
        EXPECT_FALSE(err.term().empty());
    }
}

TEST(GuidanceGradient, OffIsZero) {
    const auto s = default_schedule();
    const auto e = gm().embedder->embed_prompt("sketch");
    const auto eps = uniform_image({32, 32, 3}, 3);
    const GuidanceConfig cfg = only(&GuidanceConfig::lambda_d, 0.0);
    const GuidanceContext ctx{eps, 100, s, disc(), e, cfg, gm()};
    for (double v : guidance_gradient(blocks(), ctx).values()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(guidance_objective(blocks(), ctx), 0.0);
}

TEST(GuidanceGradient, TvOnlyOnConstantLatent) {
    const auto s = default_schedule();
    const auto e = gm().embedder->embed_prompt("sketch");
    const ImageTensor eps(32, 32, 3);
    const GuidanceConfig cfg = only(&GuidanceConfig::lambda_tv, 1.0);
    const GuidanceContext ctx{eps, 100, s, disc(), e, cfg, gm()};
    for (double v : guidance_gradient(ImageTensor(32, 32, 3, 0.4), ctx).values()) EXPECT_EQ(v, 0.0);
}

TEST(GuidanceGradient, ChainsThroughCleanEstimate) {
    const auto s = default_schedule();
    const int t = 250;
    const auto e = gm().embedder->embed_prompt("flat-color");
    const auto eps = uniform_image({32, 32, 3}, 4);
    const GuidanceConfig cfg;
    const GuidanceContext ctx{eps, t, s, disc(), e, cfg, gm()};
    const auto x_t = forward_noise(blocks(), t, eps, s);
    const auto x0_hat = predict_x0(x_t, eps, t, s);
    EXPECT_NEAR(guidance_objective(x_t, ctx), total_loss(x0_hat, disc(), e, cfg, gm()), 1e-9);
    const auto direct = total_loss_gradient(x0_hat, disc(), e, cfg, gm());
    const auto chained = guidance_gradient(x_t, ctx);
    EXPECT_LE(max_abs_diff(chained, scaled(1.0 / std::sqrt(s.alpha_bar(t)), direct)), 1e-9);
}

TEST(GradientOracle, EveryTermMatchesFiniteDifferences) {
    for (const auto& r : gradient_checks(fixture_models(), disc(), "oil-painting", 64, 21)) {
        EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
    }
}

TEST(GradientOracle, SecondImageAndPrompt) {
    for (const auto& r : gradient_checks(fixture_models(), blocks(), "stippled", 64, 22)) {
        EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
    }
}

TEST(GuidanceConfigValidation, Bounds) {
    GuidanceConfig cfg;
    EXPECT_NO_THROW(cfg.validate(32, 32));
    EXPECT_THROW(cfg.validate(30, 32), ConfigurationError);
    cfg.patch_size = 32;
    EXPECT_THROW(cfg.validate(32, 32), ConfigurationError);
    cfg = GuidanceConfig{};
    cfg.tau = 0.0;
    EXPECT_THROW(cfg.validate(32, 32), ConfigurationError);
    cfg = GuidanceConfig{};
    cfg.lambda_aes = -1.0;
    EXPECT_THROW(cfg.validate(32, 32), ConfigurationError);
}
