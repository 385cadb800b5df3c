#include "dualstyle/solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dualstyle/errors.hpp"

namespace dualstyle {

StepPlan plan_steps(int T, int horizon) {
    if (horizon < 1) throw ParameterError("horizon must be >= 1");
    if (T < 1 || T > horizon) {
        throw ParameterError("step count T = " + std::to_string(T) + " must lie in [1, " +
                             std::to_string(horizon) + "]");
    }
    StepPlan plan;
    plan.timesteps.reserve(T);
    for (int k = 0; k < T; ++k) {
        const auto offset = static_cast<long long>(k) * horizon / T;
        const int t = horizon - 1 - static_cast<int>(offset);
        if (plan.timesteps.empty() || t < plan.timesteps.back()) plan.timesteps.push_back(t);
    }
    return plan;
}

AlphaBarAt interpolate_alpha_bar(double t, const NoiseSchedule& s) {
    const auto ab = s.alpha_bars();
    const int n = s.t_train();
    if (!(t >= 0.0 && t <= n - 1)) {
        throw ParameterError("continuous time " + std::to_string(t) + " outside [0, " +
                             std::to_string(n - 1) + "]");
    }
    if (n == 1) return {ab[0], 0.0};
    const int k = std::clamp(static_cast<int>(std::ceil(t)) - 1, 0, n - 2);
    const double slope = ab[k + 1] - ab[k];
    return {ab[k] + (t - k) * slope, slope};
}

ImageTensor ode_derivative(const ImageTensor& x, double t, const ImageTensor& eps_pred,
                           const NoiseSchedule& s) {
    require_same_shape(x, eps_pred, "ode_derivative");
    const auto [abar, slope] = interpolate_alpha_bar(t, s);
    if (!(abar < 1.0) || !(abar > 0.0)) {
        throw SingularityError("alpha_bar(" + std::to_string(t) + ") = " + std::to_string(abar) +
                               " makes the derivative singular");
    }
    const double cx = -slope / (2.0 * abar);
    const double ce = slope / (2.0 * abar * std::sqrt(1.0 - abar));
    return lincomb(cx, x, ce, eps_pred);
}

ImageTensor transfer(const ImageTensor& x_t, const ImageTensor& eps, int t, int t_next,
                     const NoiseSchedule& s) {
    require_same_shape(x_t, eps, "transfer");
    if (t_next > t || t_next < 0) {
        throw ParameterError("transfer needs t >= t_next >= 0, got " + std::to_string(t) +
                             " -> " + std::to_string(t_next));
    }
    if (t_next == t) return x_t;
    const double abar = s.alpha_bar(t);
    const double abar_next = s.alpha_bar(t_next);
    // sqrt(abar_next / abar) x + (sqrt(1 - abar_next) - sqrt(abar_next (1 - abar) / abar)) eps
    const double cx = std::sqrt(abar_next) / std::sqrt(abar);
    const double ce = std::sqrt(1.0 - abar_next) - cx * std::sqrt(1.0 - abar);
    return lincomb(cx, x_t, ce, eps);
}

ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps, int t,
                       const NoiseSchedule& s) {
    const double abar = s.alpha_bar(t);
    const double inv = 1.0 / std::sqrt(abar);
    return lincomb(inv, x_t, -inv * std::sqrt(1.0 - abar), eps);
}

void EpsHistory::push(ImageTensor eps) {
    if (!items_.empty()) require_same_shape(items_.front(), eps, "EpsHistory::push");
    items_.push_front(std::move(eps));
    if (size() > kCapacity) items_.pop_back();
}

ImageTensor plms_effective_eps(const EpsHistory& history, const ImageTensor& eps_t) {
    const int n = history.size();
    if (n == 0) return eps_t;
    for (int i = 0; i < std::min(n, 3); ++i) require_same_shape(eps_t, history[i], "plms_effective_eps");
    ImageTensor out(eps_t.shape());
    if (n < 3) {
        const auto& e1 = history[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (3.0 * eps_t[i] - e1[i]) / 2.0;
        return out;
    }
    const auto& e1 = history[0];
    const auto& e2 = history[1];
    const auto& e3 = history[2];
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (55.0 * eps_t[i] - 59.0 * e1[i] + 37.0 * e2[i] - 9.0 * e3[i]) / 24.0;
    }
    return out;
}

ImageTensor integrate_euler(ImageTensor x, const StepPlan& plan, const EpsFunction& eps,
                            const NoiseSchedule& s) {
    for (int k = 0; k < plan.size(); ++k) {
        const int t = plan.timesteps[k];
        const int t_next = plan.next(k);
        if (t == t_next) continue;
        const ImageTensor e = eps(x, t);
        const ImageTensor d = ode_derivative(x, t, e, s);
        x = lincomb(1.0, x, static_cast<double>(t - t_next), d);
    }
    return x;
}

void plms_step(SamplerState& state, const StepPlan& plan, const ImageTensor& eps_t,
               const NoiseSchedule& s) {
    const int k = state.step_cursor;
    const ImageTensor eff = plms_effective_eps(state.eps_history, eps_t);
    state.eps_history.push(eps_t);
    state.x = transfer(state.x, eff, plan.timesteps.at(k), plan.next(k), s);
    ++state.step_cursor;
}

ImageTensor integrate_plms(ImageTensor x, const StepPlan& plan, const EpsFunction& eps,
                           const NoiseSchedule& s) {
    SamplerState state{std::move(x), {}, 0};
    while (state.step_cursor < plan.size()) {
        const ImageTensor e = eps(state.x, plan.timesteps[state.step_cursor]);
        plms_step(state, plan, e, s);
    }
    return std::move(state.x);
}

}  // namespace dualstyle
