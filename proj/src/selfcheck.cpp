#include "dualstyle/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dualstyle/guidance.hpp"
#include "dualstyle/schedule.hpp"
#include "dualstyle/solver.hpp"

namespace dualstyle {

GradientCheckStats check_gradient(const ScalarFunction& f, const ImageTensor& grad, const ImageTensor& x,
                                  int probes, double h, Rng& rng, const ProbeFilter& skip) {
    require_same_shape(x, grad, "check_gradient");
    GradientCheckStats stats;
    ImageTensor probe = x;
    int attempts = 0;
    while (stats.probes < probes) {
        if (++attempts > 100 * probes) break;
        const auto i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(x.size())) % x.size();
        if (skip && skip(x, i)) {
            ++stats.skipped;
            continue;
        }
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
        stats.max_rel_error = std::max(stats.max_rel_error, std::abs(fd - grad[i]) / denom);
        ++stats.probes;
    }
    return stats;
}

bool near_tv_kink(const ImageTensor& x, std::size_t index, double radius) {
    const int C = x.channels();
    const int W = x.width();
    const int ch = static_cast<int>(index % C);
    const int col = static_cast<int>((index / C) % W);
    const int row = static_cast<int>(index / (static_cast<std::size_t>(C) * W));
    const double v = x.at(row, col, ch);
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
        const int r = row + dr[k], c = col + dc[k];
        if (r < 0 || r >= x.height() || c < 0 || c >= W) continue;
        if (std::abs(x.at(r, c, ch) - v) <= radius) return true;
    }
    return false;
}

double forward_noise_equivalence(int cases, int max_t, std::uint64_t seed) {
    const NoiseSchedule s = default_schedule();
    Rng rng(seed);
    double worst = 0.0;
    const Shape shape{8, 8, 3};
    for (int n = 0; n < cases; ++n) {
        ImageTensor x0(shape);
        for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = 2.0 * rng.uniform() - 1.0;
        const int t = static_cast<int>(rng.uniform() * (max_t + 1)) % (max_t + 1);
        std::vector<ImageTensor> eps;
        for (int k = 0; k <= t; ++k) eps.push_back(rng.normal_image(shape));

        // Unroll the chain: x_t = prod sqrt(alpha) x0 + sum_k c_k eps_k with
        // c_k = sqrt(beta_k) prod_{j>k} sqrt(1 - beta_j).
        ImageTensor combined(shape);
        double variance = 0.0;
        for (int k = 0; k <= t; ++k) {
            double c = std::sqrt(s.beta(k));
            for (int j = k + 1; j <= t; ++j) c *= std::sqrt(1.0 - s.beta(j));
            variance += c * c;
            for (std::size_t i = 0; i < combined.size(); ++i) combined[i] += c * eps[k][i];
        }
        const ImageTensor eps_bar = scaled(1.0 / std::sqrt(variance), combined);
        const ImageTensor closed = forward_noise(x0, t, eps_bar, s);
        const ImageTensor chain = stepwise_noise(x0, t, eps, s);
        for (std::size_t i = 0; i < closed.size(); ++i) worst = std::max(worst, std::abs(closed[i] - chain[i]));
    }
    return worst;
}

double analytic_solver_error(bool multistep, int T, double sigma, const NoiseSchedule& s) {
    const StepPlan plan = plan_steps(T, s.t_train());
    const auto marginal_sd = [&](int t) {
        const double ab = s.alpha_bar(t);
        return std::sqrt(ab * sigma * sigma + 1.0 - ab);
    };
    const EpsFunction eps = [&](const ImageTensor& x, int t) {
        const double ab = s.alpha_bar(t);
        return scaled(std::sqrt(1.0 - ab) / (ab * sigma * sigma + 1.0 - ab), x);
    };
    Rng rng(3);
    const ImageTensor start = rng.normal_image({4, 4, 1});
    const int t0 = plan.timesteps.front();
    const ImageTensor x = multistep ? integrate_plms(start, plan, eps, s) : integrate_euler(start, plan, eps, s);
    const ImageTensor exact = scaled(marginal_sd(0) / marginal_sd(t0), start);
    return l2_distance(x, exact) / l2_norm(exact);
}

AnalyticSolverErrors analytic_solver_errors(double sigma) {
    const NoiseSchedule s = default_schedule();
    return {analytic_solver_error(false, 25, sigma, s), analytic_solver_error(false, 100, sigma, s),
            analytic_solver_error(true, 25, sigma, s)};
}

namespace {

CheckResult gradient_result(const std::string& name, const GradientCheckStats& st, int probes) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "max relative error %.3g over %d probes (%d skipped)", st.max_rel_error,
                  st.probes, st.skipped);
    return {name, st.probes == probes && st.max_rel_error < 1e-3, buf};
}

}  // namespace

std::vector<CheckResult> gradient_checks(const StylizeModels& models, const ImageTensor& content,
                                         std::string_view prompt, int probes, std::uint64_t seed) {
    const double h = 1e-3;
    const GuidanceModels& gm = models.guidance;
    const std::vector<double> e = gm.embedder->embed_prompt(prompt);
    const GuidanceConfig cfg;

    Rng rng(seed);
    ImageTensor x(content.shape());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(content[i] + 0.3 * rng.normal(), -1.0, 1.0);

    const ProbeFilter tv_kink = [h](const ImageTensor& img, std::size_t i) { return near_tv_kink(img, i, h); };
    std::vector<CheckResult> out;

    {
        std::vector<double> gu(e);
        for (double& v : gu) v = -v;
        const auto g = gm.embedder->embed_image_backward(x, gu);
        const auto f = [&](const ImageTensor& y) { return instruction_loss(gm.embedder->embed_image(y), e); };
        out.push_back(gradient_result("gradient: instruction", check_gradient(f, g, x, probes, h, rng), probes));
    }
    {
        const auto g = content_loss_gradient(x, content, *gm.extractor);
        const auto f = [&](const ImageTensor& y) { return content_loss(y, content, *gm.extractor); };
        out.push_back(gradient_result("gradient: content", check_gradient(f, g, x, probes, h, rng), probes));
    }
    {
        const auto g = patch_contrastive_gradient(x, content, *gm.patch_encoder, cfg);
        const auto f = [&](const ImageTensor& y) { return patch_contrastive_loss(y, content, *gm.patch_encoder, cfg); };
        out.push_back(gradient_result("gradient: patch contrast", check_gradient(f, g, x, probes, h, rng), probes));
    }
    {
        const auto g = scaled(-1.0, gm.scorer->score_gradient(x, e));
        const auto f = [&](const ImageTensor& y) { return aesthetic_loss(y, e, *gm.scorer); };
        out.push_back(gradient_result("gradient: aesthetic", check_gradient(f, g, x, probes, h, rng), probes));
    }
    {
        const auto g = tv_loss_gradient(x);
        const auto f = [](const ImageTensor& y) { return tv_loss(y); };
        out.push_back(gradient_result("gradient: total variation", check_gradient(f, g, x, probes, h, rng, tv_kink), probes));
    }
    {
        const auto g = total_loss_gradient(x, content, e, cfg, gm);
        const auto f = [&](const ImageTensor& y) { return total_loss(y, content, e, cfg, gm); };
        out.push_back(gradient_result("gradient: composite", check_gradient(f, g, x, probes, h, rng, tv_kink), probes));
    }
    {
        // Through the clean estimate at a mid-range step, eps held fixed.
        const int t = 40;
        const ImageTensor eps = rng.normal_image(x.shape());
        const ImageTensor x_t = forward_noise(x, t, eps, models.schedule);
        const GuidanceContext ctx{eps, t, models.schedule, content, e, cfg, gm};
        const auto g = guidance_gradient(x_t, ctx);
        const auto f = [&](const ImageTensor& y) { return guidance_objective(y, ctx); };
        // A kink of the TV term at x0_hat lies within h / sqrt(abar) of x_t.
        const double reach = h / std::sqrt(models.schedule.alpha_bar(t));
        const ProbeFilter kink = [&](const ImageTensor& y, std::size_t i) {
            return near_tv_kink(predict_x0(y, eps, t, models.schedule), i, reach);
        };
        out.push_back(gradient_result("gradient: guidance at x_t", check_gradient(f, g, x_t, probes, h, rng, kink), probes));
    }
    return out;
}

std::vector<CheckResult> run_self_checks(const StylizeModels& models, const ImageTensor& content,
                                         std::string_view prompt) {
    std::vector<CheckResult> out;
    {
        const double worst = forward_noise_equivalence(50, 20, 1);
        char buf[96];
        std::snprintf(buf, sizeof buf, "max |closed - stepwise| = %.3g", worst);
        out.push_back({"forward noising: closed form vs chain", worst < 1e-5, buf});
    }
    for (auto& r : gradient_checks(models, content, prompt, 64, 2)) out.push_back(std::move(r));
    {
        StylizeConfig cfg;
        cfg.T = 10;
        cfg.T1 = 30;
        cfg.seed = 7;
        const RunReport a = stylize(content, prompt, cfg, models);
        const RunReport b = stylize(content, prompt, cfg, models);
        char buf[96];
        std::snprintf(buf, sizeof buf, "hashes %016llx / %016llx", static_cast<unsigned long long>(content_hash(a.image)),
                      static_cast<unsigned long long>(content_hash(b.image)));
        out.push_back({"determinism: repeated stylize run", a.image == b.image, buf});
    }
    return out;
}

}  // namespace dualstyle
