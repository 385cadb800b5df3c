#pragma once

#include <span>
#include <vector>

#include "dualstyle/image.hpp"

namespace dualstyle {

/// Per-step betas of the forward noising chain together with the derived
/// alphas (1 - beta) and cumulative products alpha_bar. Step indices are
/// zero-based: alpha_bar(t) is the product of alphas[0..t]. Immutable once
/// built.
class NoiseSchedule {
public:
    /// Betas must lie in [0, 1). Zero betas are accepted so that degenerate
    /// (noise-free) schedules can be expressed; make_linear_schedule is the
    /// strict constructor.
    static NoiseSchedule from_betas(std::vector<double> betas);

    int t_train() const noexcept { return static_cast<int>(betas_.size()); }

    std::span<const double> betas() const noexcept { return betas_; }
    std::span<const double> alphas() const noexcept { return alphas_; }
    std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

    double beta(int t) const { return betas_.at(check(t)); }
    double alpha(int t) const { return alphas_.at(check(t)); }
    double alpha_bar(int t) const { return alpha_bars_.at(check(t)); }

    /// Schedule over the ascending subset `kept` of this schedule's steps,
    /// with alpha_bar'[j] = alpha_bar[kept[j]] and
    /// beta'[j] = 1 - alpha_bar[kept[j]] / alpha_bar[kept[j-1]].
    /// Posterior statistics of the result describe jumps between kept steps.
    NoiseSchedule respaced(std::span<const int> kept) const;

private:
    NoiseSchedule(std::vector<double> betas, std::vector<double> alpha_bars);
    int check(int t) const;

    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

/// Betas interpolated linearly from beta_start to beta_end inclusive.
NoiseSchedule make_linear_schedule(int t_train, double beta_start, double beta_end);

/// Default training schedule: 1000 steps from 1e-4 to 0.02.
NoiseSchedule default_schedule();

/// Closed form: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
ImageTensor forward_noise(const ImageTensor& x0, int t, const ImageTensor& eps,
                          const NoiseSchedule& s);

/// Runs the chain x_k = sqrt(1 - beta_k) x_{k-1} + sqrt(beta_k) eps_k for
/// k = 0..t starting from x0. `eps_seq` must hold t + 1 tensors.
ImageTensor stepwise_noise(const ImageTensor& x0, int t, std::span<const ImageTensor> eps_seq,
                           const NoiseSchedule& s);

/// Mean of p(x_{t-1} | x_t) under the epsilon parameterisation. Requires t >= 1.
ImageTensor posterior_mean(const ImageTensor& x_t, const ImageTensor& eps_pred, int t,
                           const NoiseSchedule& s);

/// Fixed posterior variance beta_t (1 - abar_{t-1}) / (1 - abar_t). Requires t >= 1.
double posterior_variance(int t, const NoiseSchedule& s);

}  // namespace dualstyle
