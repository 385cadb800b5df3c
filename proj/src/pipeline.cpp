#include "dualstyle/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "dualstyle/errors.hpp"

namespace dualstyle {

std::string_view to_string(NoiseInit v) noexcept {
    return v == NoiseInit::Gaussian ? "gaussian" : "forward-noised-content";
}

std::string_view to_string(Sampler v) noexcept {
    return v == Sampler::AncestralGuided ? "ancestral-guided" : "plms-guided";
}

NoiseInit parse_noise_init(std::string_view s) {
    if (s == "forward-noised-content") return NoiseInit::ForwardNoisedContent;
    if (s == "gaussian") return NoiseInit::Gaussian;
    throw ConfigurationError("noise_init must be forward-noised-content or gaussian, got '" +
                             std::string(s) + "'");
}

Sampler parse_sampler(std::string_view s) {
    if (s == "plms-guided") return Sampler::PlmsGuided;
    if (s == "ancestral-guided") return Sampler::AncestralGuided;
    throw ConfigurationError("sampler must be plms-guided or ancestral-guided, got '" +
                             std::string(s) + "'");
}

void StylizeConfig::validate(const Shape& image, int t_train) const {
    if (T < 1) throw ParameterError("T must be >= 1, got " + std::to_string(T));
    if (T1 < T) {
        throw ParameterError("T1 must be >= T, got T1 = " + std::to_string(T1) + ", T = " + std::to_string(T));
    }
    if (!(w >= 0.0 && w <= 1.0)) throw ParameterError("w must lie in [0, 1], got " + std::to_string(w));
    if (horizon < 0) throw ParameterError("horizon must be >= 0");
    const int h = effective_horizon();
    if (h < T1) {
        throw ParameterError("horizon " + std::to_string(h) + " is shorter than T1 = " + std::to_string(T1));
    }
    if (h > t_train) {
        throw ParameterError("horizon " + std::to_string(h) + " exceeds the training horizon " +
                             std::to_string(t_train));
    }
    guidance.validate(image.height, image.width);
}

Timeline make_timeline(const StylizeConfig& cfg) {
    Timeline tl;
    tl.plan = plan_steps(cfg.T1, cfg.effective_horizon());
    tl.free_steps = cfg.T1 - cfg.T;
    return tl;
}

StylizeModels load_models(const std::filesystem::path& dir) {
    StylizeModels m;
    m.natural = std::make_shared<const Denoiser>(load_weights(dir / "denoiser_natural.dsw"));
    m.artistic = std::make_shared<const Denoiser>(load_weights(dir / "denoiser_artistic.dsw"));
    m.guidance = load_guidance_models(dir);
    if (m.natural->channels() != m.artistic->channels()) {
        throw ConfigurationError("the two denoisers expect different channel counts");
    }
    const int width = m.guidance.embedder->width();
    if (m.natural->embed_width() != width || m.artistic->embed_width() != width) {
        throw ConfigurationError("denoiser conditioning width does not match the embedder width " +
                                 std::to_string(width));
    }
    return m;
}

namespace {

/// Moves along a timeline one plan position at a time.
class Stepper {
public:
    Stepper(const Timeline& tl, Sampler sampler, const NoiseSchedule& s) : tl_(tl), sampler_(sampler), s_(s) {
        std::vector<int> kept(tl.plan.timesteps.rbegin(), tl.plan.timesteps.rend());
        if (kept.front() != 0) kept.insert(kept.begin(), 0);
        kept_ = kept;
        respaced_ = s.respaced(kept_);
    }

    /// Posterior variance of the move out of plan position k; 0 at step 0.
    double variance(int k) const {
        const int j = index_of(tl_.plan.timesteps.at(k));
        return j == 0 ? 0.0 : posterior_variance(j, respaced_);
    }

    /// One move from position k given the prediction `eps` at x. `grad` (may be
    /// null) is subtracted after scaling by the move's posterior variance.
    void advance(SamplerState& st, int k, const ImageTensor& eps, const ImageTensor* grad, Rng& rng) const {
        const int t = tl_.plan.timesteps.at(k);
        if (t == 0) {
            // A plan that already reached step 0 has nowhere left to go; the
            // grid is not extrapolated past its first step.
        } else if (sampler_ == Sampler::PlmsGuided) {
            const ImageTensor eff = plms_effective_eps(st.eps_history, eps);
            st.eps_history.push(eps);
            st.x = transfer(st.x, eff, t, tl_.plan.next(k), s_);
            if (grad) st.x = lincomb(1.0, st.x, -variance(k), *grad);
        } else {
            const int j = index_of(t);
            ImageTensor mu = posterior_mean(st.x, eps, j, respaced_);
            const double var = posterior_variance(j, respaced_);
            if (grad) mu = lincomb(1.0, mu, -var, *grad);
            const ImageTensor z = rng.normal_image(mu.shape());
            st.x = lincomb(1.0, mu, std::sqrt(var), z);
        }
        st.x.clip(-kLatentClip, kLatentClip);
        if (!st.x.all_finite()) {
            throw DivergenceError(t, "latent became non-finite at step " + std::to_string(t));
        }
        st.step_cursor = k + 1;
    }

private:
    int index_of(int t) const {
        return static_cast<int>(std::lower_bound(kept_.begin(), kept_.end(), t) - kept_.begin());
    }

    const Timeline& tl_;
    Sampler sampler_;
    const NoiseSchedule& s_;
    std::vector<int> kept_;
    NoiseSchedule respaced_ = NoiseSchedule::from_betas({0.0});
};

ImageTensor initial_latent(const ImageTensor& x0, const StylizeConfig& cfg, const Timeline& tl,
                           const NoiseSchedule& s, Rng& rng) {
    const ImageTensor draw = rng.normal_image(x0.shape());
    if (cfg.noise_init == NoiseInit::Gaussian) return draw;
    return forward_noise(x0, tl.plan.timesteps.front(), draw, s);
}

ImageTensor blended(const Denoiser& a, const Denoiser& b, double w, const ImageTensor& x, int t,
                    const Conditioning& c) {
    if (w == 1.0) return a.predict_eps(x, t, c);
    if (w == 0.0) return b.predict_eps(x, t, c);
    return blend_eps(a.predict_eps(x, t, c), b.predict_eps(x, t, c), w);
}

ImageTensor run_free_phase(const ImageTensor& x0, const StylizeConfig& cfg, const Timeline& tl,
                           const Denoiser& natural, const Denoiser& artistic, const NoiseSchedule& s,
                           Rng& rng) {
    if (x0.channels() != natural.channels() || x0.channels() != artistic.channels()) {
        throw DimensionError("content has " + std::to_string(x0.channels()) +
                             " channels, denoisers expect " + std::to_string(natural.channels()));
    }
    const Stepper stepper(tl, cfg.sampler, s);
    SamplerState st{initial_latent(x0, cfg, tl, s, rng), {}, 0};
    const Conditioning null = Conditioning::null();
    for (int k = 0; k < tl.free_steps; ++k) {
        const ImageTensor eps = blended(natural, artistic, cfg.w, st.x, tl.plan.timesteps[k], null);
        stepper.advance(st, k, eps, nullptr, rng);
    }
    return std::move(st.x);
}

}  // namespace

ImageTensor generate_learnable_noise(const ImageTensor& x0, const StylizeConfig& cfg,
                                     const Denoiser& natural, const Denoiser& artistic,
                                     const NoiseSchedule& s, Rng& rng) {
    if (cfg.T1 < cfg.T) {
        throw ParameterError("T1 must be >= T, got T1 = " + std::to_string(cfg.T1) + ", T = " +
                             std::to_string(cfg.T));
    }
    cfg.validate(x0.shape(), s.t_train());
    return run_free_phase(x0, cfg, make_timeline(cfg), natural, artistic, s, rng);
}

ImageTensor generate_learnable_noise(const ImageTensor& x0, const StylizeConfig& cfg,
                                     const Denoiser& natural, const Denoiser& artistic,
                                     const NoiseSchedule& s) {
    Rng rng(cfg.seed);
    return generate_learnable_noise(x0, cfg, natural, artistic, s, rng);
}

RunReport stylize(const ImageTensor& x0, std::string_view prompt, const StylizeConfig& cfg,
                  const StylizeModels& models) {
    const auto started = std::chrono::steady_clock::now();
    const NoiseSchedule& s = models.schedule;
    cfg.validate(x0.shape(), s.t_train());
    const std::vector<double> e_prompt = models.guidance.embedder->embed_prompt(prompt);
    const Conditioning cond = Conditioning::embedding(e_prompt);
    const Timeline tl = make_timeline(cfg);
    const Stepper stepper(tl, cfg.sampler, s);

    Rng rng(cfg.seed);
    SamplerState st{run_free_phase(x0, cfg, tl, *models.natural, *models.artistic, s, rng), {}, tl.free_steps};

    RunReport report;
    report.prompt = std::string(prompt);
    report.config = cfg;
    report.free_steps = tl.free_steps;
    report.handoff_step = tl.handoff();
    report.trace.reserve(tl.guided_steps());
    const bool guided = !cfg.guidance.guidance_off();

    for (int k = tl.free_steps; k < tl.plan.size(); ++k) {
        const int t = tl.plan.timesteps[k];
        const ImageTensor eps = blended(*models.natural, *models.artistic, cfg.w, st.x, t, cond);
        const GuidanceContext ctx{eps, t, s, x0, e_prompt, cfg.guidance, models.guidance};

        TraceRow row;
        row.step = t;
        row.terms = loss_terms(predict_x0(st.x, eps, t, s), x0, e_prompt, cfg.guidance, models.guidance);
        row.total = row.terms.weighted_total(cfg.guidance);
        report.trace.push_back(row);

        if (guided && stepper.variance(k) > 0.0) {
            const ImageTensor grad = guidance_gradient(st.x, ctx);
            stepper.advance(st, k, eps, &grad, rng);
        } else {
            stepper.advance(st, k, eps, nullptr, rng);
        }
    }

    st.x.clip(-1.0, 1.0);
    report.image = std::move(st.x);
    report.final_terms = loss_terms(report.image, x0, e_prompt, cfg.guidance, models.guidance);
    report.content_metric = content_metric(report.image, x0, *models.guidance.extractor);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

ImageTensor sample_single(const ImageTensor& x0, const Conditioning& guided_condition, const Denoiser& d,
                          const StylizeConfig& cfg, const NoiseSchedule& s) {
    cfg.validate(x0.shape(), s.t_train());
    const Timeline tl = make_timeline(cfg);
    const Stepper stepper(tl, cfg.sampler, s);
    Rng rng(cfg.seed);
    SamplerState st{run_free_phase(x0, cfg, tl, d, d, s, rng), {}, tl.free_steps};
    for (int k = tl.free_steps; k < tl.plan.size(); ++k) {
        const ImageTensor eps = d.predict_eps(st.x, tl.plan.timesteps[k], guided_condition);
        stepper.advance(st, k, eps, nullptr, rng);
    }
    st.x.clip(-1.0, 1.0);
    return std::move(st.x);
}

double content_metric(const ImageTensor& x_out, const ImageTensor& x_in, const FeatureExtractor& f) {
    return content_loss(x_out, x_in, f);
}

namespace {

nlohmann::ordered_json terms_json(const LossTerms& t) {
    return {{"L_inst", t.instruction}, {"L_c", t.content}, {"L_c_patch", t.patch},
            {"L_aes", t.aesthetic}, {"L_tv", t.tv}};
}

}  // namespace

std::string report_json(const RunReport& r) {
    const auto& c = r.config;
    const auto& g = c.guidance;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(content_hash(r.image)));

    nlohmann::ordered_json j;
    j["prompt"] = r.prompt;
    j["seed"] = c.seed;
    j["config"] = {{"T", c.T},
                   {"T1", c.T1},
                   {"w", c.w},
                   {"horizon", c.effective_horizon()},
                   {"noise_init", to_string(c.noise_init)},
                   {"sampler", to_string(c.sampler)},
                   {"lambda_d", g.lambda_d},
                   {"lambda_c1", g.lambda_c1},
                   {"lambda_c2", g.lambda_c2},
                   {"lambda_aes", g.lambda_aes},
                   {"lambda_tv", g.lambda_tv},
                   {"patch_size", g.patch_size},
                   {"tau", g.tau}};
    j["free_steps"] = r.free_steps;
    j["guided_steps"] = r.trace.size();
    j["handoff_step"] = r.handoff_step;
    j["wall_seconds"] = r.wall_seconds;
    j["content_metric"] = r.content_metric;
    j["final_losses"] = terms_json(r.final_terms);
    j["final_total"] = r.final_terms.weighted_total(g);
    j["image_hash"] = hash;
    j["image_shape"] = {r.image.height(), r.image.width(), r.image.channels()};
    return j.dump(2) + "\n";
}

std::string trace_csv(const RunReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "step,L_inst,L_c,L_c_patch,L_aes,L_tv,L_total\n";
    for (const auto& row : r.trace) {
        const auto& t = row.terms;
        out << row.step << ',' << t.instruction << ',' << t.content << ',' << t.patch << ',' << t.aesthetic
            << ',' << t.tv << ',' << row.total << '\n';
    }
    return out.str();
}

}  // namespace dualstyle
