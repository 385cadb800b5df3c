#include <gtest/gtest.h>

#include <algorithm>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "dualstyle/errors.hpp"
#include "dualstyle/image_io.hpp"
#include "dualstyle/pipeline.hpp"
#include "support.hpp"

using namespace dualstyle;
using dualstyle::testing::fixture_dir;
using dualstyle::testing::fixture_models;

namespace {

const ImageTensor& disc() {
    static const ImageTensor x = read_png(fixture_dir() / "content_disc.png");
    return x;
}

StylizeConfig quick() {
    StylizeConfig cfg;
    cfg.T = 10;
    cfg.T1 = 30;
    cfg.seed = 3;
    return cfg;
}

StylizeConfig unguided(StylizeConfig cfg) {
    auto& g = cfg.guidance;
    g.lambda_d = g.lambda_c1 = g.lambda_c2 = g.lambda_aes = g.lambda_tv = 0.0;
    return cfg;
}

// Recorded once from a seeded run on the committed fixtures.
constexpr double kGoldenContentMetric = 22.988433719116998;

}  // namespace

TEST(StylizeConfig, Defaults) {
    const StylizeConfig cfg;
    EXPECT_EQ(cfg.T, 50);
    EXPECT_EQ(cfg.T1, 150);
    EXPECT_EQ(cfg.noise_init, NoiseInit::ForwardNoisedContent);
    EXPECT_EQ(cfg.sampler, Sampler::PlmsGuided);
    EXPECT_NO_THROW(cfg.validate({32, 32, 3}, 1000));
}

TEST(StylizeConfig, ValidationNamesTheBound) {
    auto expect_param = [](StylizeConfig cfg, const std::string& needle) {
        try {
            cfg.validate({32, 32, 3}, 1000);
            ADD_FAILURE() << "no error for " << needle;
        } catch (const ParameterError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    StylizeConfig cfg;
    cfg.w = 1.5;
    expect_param(cfg, "[0, 1]");
    cfg = StylizeConfig{};
    cfg.T = 0;
    expect_param(cfg, "T");
    cfg = StylizeConfig{};
    cfg.T1 = 40;
    expect_param(cfg, "T1");
    cfg = StylizeConfig{};
    cfg.horizon = 2000;
    expect_param(cfg, "horizon");
    cfg = StylizeConfig{};
    cfg.guidance.patch_size = 5;
    EXPECT_THROW(cfg.validate({32, 32, 3}, 1000), ConfigurationError);
}

TEST(StylizeConfig, ParseEnums) {
    EXPECT_EQ(parse_noise_init("forward-noised-content"), NoiseInit::ForwardNoisedContent);
    EXPECT_EQ(parse_noise_init("gaussian"), NoiseInit::Gaussian);
    EXPECT_EQ(parse_sampler("ancestral-guided"), Sampler::AncestralGuided);
    EXPECT_EQ(parse_sampler("plms-guided"), Sampler::PlmsGuided);
    EXPECT_EQ(parse_sampler(to_string(Sampler::AncestralGuided)), Sampler::AncestralGuided);
    EXPECT_THROW(parse_sampler("euler"), ConfigurationError);
    EXPECT_THROW(parse_noise_init(""), ConfigurationError);
}

TEST(Timeline, DefaultSplit) {
    const Timeline tl = make_timeline(StylizeConfig{});
    EXPECT_EQ(tl.plan.size(), 150);
    EXPECT_EQ(tl.free_steps, 100);
    EXPECT_EQ(tl.guided_steps(), 50);
    EXPECT_EQ(tl.plan.timesteps.front(), 499);
    EXPECT_EQ(tl.handoff(), tl.plan.timesteps[100]);
}

TEST(Timeline, UnitSteps) {
    StylizeConfig cfg;
    cfg.horizon = 0;
    const Timeline tl = make_timeline(cfg);
    EXPECT_EQ(tl.plan.timesteps.front(), 149);
    EXPECT_EQ(tl.plan.timesteps.back(), 0);
    EXPECT_EQ(tl.handoff(), 49);
}

TEST(LearnableNoise, NoFreeStepsReturnsInitialisation) {
    const auto& m = fixture_models();
    StylizeConfig cfg = quick();
    cfg.T1 = cfg.T;
    const auto x = generate_learnable_noise(disc(), cfg, *m.natural, *m.artistic, m.schedule);
    Rng rng(cfg.seed);
    const auto expected = forward_noise(disc(), make_timeline(cfg).plan.timesteps.front(),
                                        rng.normal_image(disc().shape()), m.schedule);
    EXPECT_EQ(x, expected);
    cfg.noise_init = NoiseInit::Gaussian;
    Rng rng2(cfg.seed);
    EXPECT_EQ(generate_learnable_noise(disc(), cfg, *m.natural, *m.artistic, m.schedule),
              rng2.normal_image(disc().shape()));
}

TEST(LearnableNoise, NoiseFreeScheduleKeepsContent) {
    const auto& m = fixture_models();
    const auto flat = NoiseSchedule::from_betas(std::vector<double>(1000, 0.0));
    for (Sampler sampler : {Sampler::PlmsGuided, Sampler::AncestralGuided}) {
        StylizeConfig cfg = quick();
        cfg.sampler = sampler;
        EXPECT_EQ(generate_learnable_noise(disc(), cfg, *m.natural, *m.artistic, flat), disc()) << to_string(sampler);
    }
}

TEST(LearnableNoise, RejectsInvertedStepCounts) {
    const auto& m = fixture_models();
    StylizeConfig cfg = quick();
    cfg.T1 = cfg.T - 1;
    EXPECT_THROW(generate_learnable_noise(disc(), cfg, *m.natural, *m.artistic, m.schedule), ParameterError);
}

TEST(Stylize, DefaultRunRecordsPhases) {
    const RunReport r = stylize(disc(), "oil-painting", StylizeConfig{}, fixture_models());
    EXPECT_EQ(r.free_steps, 100);
    EXPECT_EQ(r.trace.size(), 50u);
    EXPECT_EQ(r.image.shape(), disc().shape());
    for (double v : r.image.values()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(r.handoff_step, r.trace.front().step);
    EXPECT_GT(r.wall_seconds, 0.0);
}

TEST(Stylize, Deterministic) {
    for (Sampler sampler : {Sampler::PlmsGuided, Sampler::AncestralGuided}) {
        StylizeConfig cfg = quick();
        cfg.sampler = sampler;
        const RunReport a = stylize(disc(), "swirl", cfg, fixture_models());
        const RunReport b = stylize(disc(), "swirl", cfg, fixture_models());
        EXPECT_EQ(a.image, b.image);
        EXPECT_EQ(content_hash(a.image), content_hash(b.image));
    }
}

TEST(Stylize, SeedMatters) {
    StylizeConfig cfg = quick();
    const RunReport a = stylize(disc(), "swirl", cfg, fixture_models());
    cfg.seed += 1;
    const RunReport b = stylize(disc(), "swirl", cfg, fixture_models());
    EXPECT_NE(a.image, b.image);
}

TEST(Stylize, BlendEndpointsReduceToSingleModel) {
    const auto& m = fixture_models();
    const auto cond = Conditioning::embedding(m.guidance.embedder->embed_prompt("sketch"));
    for (Sampler sampler : {Sampler::PlmsGuided, Sampler::AncestralGuided}) {
        StylizeConfig cfg = unguided(quick());
        cfg.sampler = sampler;
        cfg.w = 1.0;
        EXPECT_EQ(stylize(disc(), "sketch", cfg, m).image, sample_single(disc(), cond, *m.natural, cfg, m.schedule));
        cfg.w = 0.0;
        EXPECT_EQ(stylize(disc(), "sketch", cfg, m).image, sample_single(disc(), cond, *m.artistic, cfg, m.schedule));
    }
}

TEST(Stylize, UnknownPrompt) {
    EXPECT_THROW(stylize(disc(), "cubism", quick(), fixture_models()), VocabularyError);
}

TEST(Stylize, GuidanceLowersInstructionLoss) {
    StylizeConfig off = quick();
    off.guidance.lambda_d = 0.0;
    StylizeConfig on = quick();
    const RunReport a = stylize(disc(), "stripes", off, fixture_models());
    const RunReport b = stylize(disc(), "stripes", on, fixture_models());
    EXPECT_LT(b.final_terms.instruction, a.final_terms.instruction);
}

TEST(ContentMetric, IdenticalImages) {
    EXPECT_EQ(content_metric(disc(), disc(), *fixture_models().guidance.extractor), 0.0);
}

TEST(ContentMetric, GoldenSeededRun) {
    const RunReport r = stylize(disc(), "oil-painting", quick(), fixture_models());
    EXPECT_NEAR(r.content_metric, kGoldenContentMetric, 1e-9) << std::setprecision(17) << r.content_metric;
    EXPECT_EQ(r.content_metric, content_metric(r.image, disc(), *fixture_models().guidance.extractor));
}

TEST(Reports, JsonAndCsv) {
    const RunReport r = stylize(disc(), "watercolor", quick(), fixture_models());
    const auto j = nlohmann::json::parse(report_json(r));
    EXPECT_EQ(j["prompt"], "watercolor");
    EXPECT_EQ(j["config"]["T"], 10);
    EXPECT_EQ(j["config"]["lambda_d"], 50.0);
    EXPECT_EQ(j["free_steps"], 20);
    EXPECT_EQ(j["guided_steps"], 10);
    EXPECT_DOUBLE_EQ(j["content_metric"].get<double>(), r.content_metric);
    EXPECT_DOUBLE_EQ(j["final_losses"]["L_tv"].get<double>(), r.final_terms.tv);

    std::istringstream csv(trace_csv(r));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,L_inst,L_c,L_c_patch,L_aes,L_tv,L_total");
    int rows = 0;
    while (std::getline(csv, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
        ++rows;
    }
    EXPECT_EQ(rows, 10);
}

TEST(ContentMetric, LearnableNoiseBeatsGaussianInit) {
    StylizeConfig cfg;
    const RunReport learnable = stylize(disc(), "oil-painting", cfg, fixture_models());
    cfg.noise_init = NoiseInit::Gaussian;
    const RunReport gaussian = stylize(disc(), "oil-painting", cfg, fixture_models());
    EXPECT_LT(learnable.content_metric, gaussian.content_metric);
}
