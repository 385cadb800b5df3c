#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "dualstyle/image.hpp"
#include "dualstyle/schedule.hpp"

namespace dualstyle {

/// Strictly decreasing training-horizon steps visited by a sampler.
struct StepPlan {
    std::vector<int> timesteps;

    int size() const noexcept { return static_cast<int>(timesteps.size()); }
    /// Step reached after evaluating at position k; the last one lands on 0.
    int next(int k) const { return k + 1 < size() ? timesteps.at(k + 1) : 0; }
};

/// T steps t_k = (horizon - 1) - floor(k * horizon / T), k = 0..T-1.
StepPlan plan_steps(int T, int horizon);

/// alpha_bar extended to real t by linear interpolation between grid points,
/// together with its slope. On an integer t the segment below t is used, so
/// the slope is the one a reverse-time step out of t traverses.
struct AlphaBarAt {
    double value;
    double slope;
};
AlphaBarAt interpolate_alpha_bar(double t, const NoiseSchedule& s);

/// Probability-flow derivative along the reverse (generative) direction:
///   -abar'(t) * ( x / (2 abar) - eps / (2 abar sqrt(1 - abar)) ).
/// A reverse Euler step from t to t - h is x + h * ode_derivative(...).
ImageTensor ode_derivative(const ImageTensor& x, double t, const ImageTensor& eps_pred,
                           const NoiseSchedule& s);

/// Pseudo-numerical transfer from step t to t_next <= t:
///   sqrt(abar_next) (x - sqrt(1 - abar_t) eps) / sqrt(abar_t) + sqrt(1 - abar_next) eps.
ImageTensor transfer(const ImageTensor& x_t, const ImageTensor& eps, int t, int t_next,
                     const NoiseSchedule& s);

/// One-step estimate of the clean image, (x - sqrt(1 - abar_t) eps) / sqrt(abar_t).
ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps, int t,
                       const NoiseSchedule& s);

/// Previous epsilon predictions, newest first, at most kCapacity entries.
class EpsHistory {
public:
    static constexpr int kCapacity = 4;

    void push(ImageTensor eps);
    int size() const noexcept { return static_cast<int>(items_.size()); }
    const ImageTensor& operator[](int i) const { return items_.at(i); }
    void clear() noexcept { items_.clear(); }

private:
    std::deque<ImageTensor> items_;
};

/// Linear-multistep combination of the current prediction with its history:
///   >= 3 prior: (55 e0 - 59 e1 + 37 e2 - 9 e3) / 24
///   1-2 prior:  (3 e0 - e1) / 2
///   none:       e0
ImageTensor plms_effective_eps(const EpsHistory& history, const ImageTensor& eps_t);

struct SamplerState {
    ImageTensor x;
    EpsHistory eps_history;
    int step_cursor = 0;
};

using EpsFunction = std::function<ImageTensor(const ImageTensor& x, int t)>;

/// Integrates the probability-flow ODE with explicit Euler over `plan`.
ImageTensor integrate_euler(ImageTensor x, const StepPlan& plan, const EpsFunction& eps,
                            const NoiseSchedule& s);

/// Pseudo linear multistep: transfer() driven by plms_effective_eps().
ImageTensor integrate_plms(ImageTensor x, const StepPlan& plan, const EpsFunction& eps,
                           const NoiseSchedule& s);

/// Advances `state` by one multistep move: records `eps_t` (the prediction at
/// the current step) and transfers to plan.next(cursor).
void plms_step(SamplerState& state, const StepPlan& plan, const ImageTensor& eps_t,
               const NoiseSchedule& s);

}  // namespace dualstyle
