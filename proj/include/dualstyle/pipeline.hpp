#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dualstyle/denoiser.hpp"
#include "dualstyle/guidance.hpp"
#include "dualstyle/image.hpp"
#include "dualstyle/rng.hpp"
#include "dualstyle/schedule.hpp"
#include "dualstyle/solver.hpp"

namespace dualstyle {

enum class NoiseInit { ForwardNoisedContent, Gaussian };
enum class Sampler { AncestralGuided, PlmsGuided };

std::string_view to_string(NoiseInit v) noexcept;
std::string_view to_string(Sampler v) noexcept;
NoiseInit parse_noise_init(std::string_view s);
Sampler parse_sampler(std::string_view s);

struct StylizeConfig {
    int T = 50;
    int T1 = 150;
    double w = 0.5;
    GuidanceConfig guidance;
    std::uint64_t seed = 0;
    NoiseInit noise_init = NoiseInit::ForwardNoisedContent;
    Sampler sampler = Sampler::PlmsGuided;
    /// Training steps covered by the T1 sampling steps, so the run starts at
    /// step horizon - 1. 0 means T1: one training step per sampling step, as
    /// in the unit-decrement loops.
    int horizon = 500;

    int effective_horizon() const noexcept { return horizon > 0 ? horizon : T1; }
    /// ParameterError / ConfigurationError naming the violated bound.
    void validate(const Shape& image, int t_train) const;
};

/// Where the T1 sampling steps sit on the training horizon: the first
/// T1 - T are free (null-conditioned) steps, the last T are guided.
struct Timeline {
    StepPlan plan;
    int free_steps = 0;

    int guided_steps() const noexcept { return plan.size() - free_steps; }
    /// Training step at which the guided phase starts.
    int handoff() const { return plan.timesteps.at(free_steps); }
};
Timeline make_timeline(const StylizeConfig& cfg);

/// The two denoisers, the guidance models and the noise schedule.
struct StylizeModels {
    std::shared_ptr<const Denoiser> natural;   // eps_theta1
    std::shared_ptr<const Denoiser> artistic;  // eps_theta2
    GuidanceModels guidance;
    NoiseSchedule schedule = default_schedule();
};

/// Loads denoiser_natural.dsw, denoiser_artistic.dsw and the guidance models
/// from `dir`; ConfigurationError if their widths disagree.
StylizeModels load_models(const std::filesystem::path& dir);

struct TraceRow {
    int step = 0;  // training step of the guided move
    LossTerms terms;
    double total = 0.0;
};

struct RunReport {
    ImageTensor image;
    std::vector<TraceRow> trace;  // one row per guided step
    LossTerms final_terms;        // evaluated on `image`
    double content_metric = 0.0;
    int free_steps = 0;
    int handoff_step = 0;
    double wall_seconds = 0.0;
    std::string prompt;
    StylizeConfig config;
};

/// Initialises x at the start of the timeline (forward-noised content, or a
/// pure Gaussian draw) and runs the free steps with the null condition and
/// the blended prediction. Returns the latent at the handoff step.
ImageTensor generate_learnable_noise(const ImageTensor& x0, const StylizeConfig& cfg,
                                     const Denoiser& natural, const Denoiser& artistic,
                                     const NoiseSchedule& s, Rng& rng);
ImageTensor generate_learnable_noise(const ImageTensor& x0, const StylizeConfig& cfg,
                                     const Denoiser& natural, const Denoiser& artistic,
                                     const NoiseSchedule& s);

/// Learnable noise followed by T guided steps conditioned on the prompt.
RunReport stylize(const ImageTensor& x0, std::string_view prompt, const StylizeConfig& cfg,
                  const StylizeModels& models);

/// Unguided sampling with one denoiser over the same timeline and random
/// stream as stylize(); the reference for the w = 0 / w = 1 reductions.
ImageTensor sample_single(const ImageTensor& x0, const Conditioning& guided_condition,
                          const Denoiser& d, const StylizeConfig& cfg, const NoiseSchedule& s);

/// Content loss of `x_out` against `x_in` under the given extractor.
double content_metric(const ImageTensor& x_out, const ImageTensor& x_in, const FeatureExtractor& f);

/// Structured plain-text (JSON) report and the per-step loss CSV.
std::string report_json(const RunReport& r);
std::string trace_csv(const RunReport& r);

inline constexpr double kLatentClip = 3.0;

}  // namespace dualstyle
