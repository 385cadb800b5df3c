#include "dualstyle/schedule.hpp"

#include <cmath>
#include <string>

#include "dualstyle/errors.hpp"

namespace dualstyle {

NoiseSchedule::NoiseSchedule(std::vector<double> betas, std::vector<double> alpha_bars)
    : betas_(std::move(betas)), alpha_bars_(std::move(alpha_bars)) {
    alphas_.reserve(betas_.size());
    for (double b : betas_) alphas_.push_back(1.0 - b);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ScheduleError("schedule needs at least one step");
    std::vector<double> alpha_bars;
    alpha_bars.reserve(betas.size());
    double acc = 1.0;
    for (std::size_t i = 0; i < betas.size(); ++i) {
        const double b = betas[i];
        if (!(b >= 0.0 && b < 1.0)) {
            throw ScheduleError("beta[" + std::to_string(i) + "] = " + std::to_string(b) +
                                " outside [0, 1)");
        }
        acc *= 1.0 - b;
        alpha_bars.push_back(acc);
    }
    return NoiseSchedule(std::move(betas), std::move(alpha_bars));
}

int NoiseSchedule::check(int t) const {
    if (t < 0 || t >= t_train()) {
        throw ParameterError("step " + std::to_string(t) + " outside [0, " +
                             std::to_string(t_train()) + ")");
    }
    return t;
}

NoiseSchedule NoiseSchedule::respaced(std::span<const int> kept) const {
    if (kept.empty()) throw ScheduleError("respacing needs at least one kept step");
    std::vector<double> betas;
    std::vector<double> alpha_bars;
    int prev = -1;
    for (int t : kept) {
        check(t);
        if (t <= prev) throw ScheduleError("respaced steps must be strictly increasing");
        const double abar = alpha_bars_[t];
        const double prev_abar = prev < 0 ? 1.0 : alpha_bars_[prev];
        betas.push_back(1.0 - abar / prev_abar);
        alpha_bars.push_back(abar);
        prev = t;
    }
    return NoiseSchedule(std::move(betas), std::move(alpha_bars));
}

NoiseSchedule make_linear_schedule(int t_train, double beta_start, double beta_end) {
    if (t_train < 1) throw ScheduleError("t_train must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ScheduleError("need 0 < beta_start <= beta_end < 1, got [" +
                            std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    }
    std::vector<double> betas(t_train);
    for (int i = 0; i < t_train; ++i) {
        betas[i] = t_train == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) * i / (t_train - 1);
    }
    return NoiseSchedule::from_betas(std::move(betas));
}

NoiseSchedule default_schedule() { return make_linear_schedule(1000, 1e-4, 0.02); }

ImageTensor forward_noise(const ImageTensor& x0, int t, const ImageTensor& eps,
                          const NoiseSchedule& s) {
    require_same_shape(x0, eps, "forward_noise");
    const double abar = s.alpha_bar(t);
    return lincomb(std::sqrt(abar), x0, std::sqrt(1.0 - abar), eps);
}

ImageTensor stepwise_noise(const ImageTensor& x0, int t, std::span<const ImageTensor> eps_seq,
                           const NoiseSchedule& s) {
    s.alpha_bar(t);
    if (eps_seq.size() != static_cast<std::size_t>(t) + 1) {
        throw DimensionError("stepwise_noise needs " + std::to_string(t + 1) +
                             " noise tensors, got " + std::to_string(eps_seq.size()));
    }
    ImageTensor x = x0;
    for (int k = 0; k <= t; ++k) {
        require_same_shape(x0, eps_seq[k], "stepwise_noise");
        const double b = s.beta(k);
        x = lincomb(std::sqrt(1.0 - b), x, std::sqrt(b), eps_seq[k]);
    }
    return x;
}

ImageTensor posterior_mean(const ImageTensor& x_t, const ImageTensor& eps_pred, int t,
                           const NoiseSchedule& s) {
    require_same_shape(x_t, eps_pred, "posterior_mean");
    if (t == 0) throw NoPosteriorError("posterior_mean undefined at t = 0");
    const double beta = s.beta(t);
    const double one_minus_abar = 1.0 - s.alpha_bar(t);
    const double eps_coef = beta == 0.0 ? 0.0 : beta / std::sqrt(one_minus_abar);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    return lincomb(inv_sqrt_alpha, x_t, -inv_sqrt_alpha * eps_coef, eps_pred);
}

double posterior_variance(int t, const NoiseSchedule& s) {
    if (t == 0) throw NoPosteriorError("posterior_variance undefined at t = 0");
    const double beta = s.beta(t);
    if (beta == 0.0) return 0.0;
    return beta * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
}

}  // namespace dualstyle
