#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dualstyle/image.hpp"
#include "dualstyle/pipeline.hpp"
#include "dualstyle/rng.hpp"

namespace dualstyle {

struct GradientCheckStats {
    int probes = 0;
    int skipped = 0;
    double max_rel_error = 0.0;
};

using ScalarFunction = std::function<double(const ImageTensor&)>;
using ProbeFilter = std::function<bool(const ImageTensor& x, std::size_t index)>;

/// Compares `grad` (the analytic gradient of f at x) with central differences
/// of step h on `probes` random coordinates. The relative error of a probe is
/// |fd - g| / max(|fd|, |g|, 1e-6). Coordinates accepted by `skip` are
/// redrawn and counted in `skipped`.
GradientCheckStats check_gradient(const ScalarFunction& f, const ImageTensor& grad, const ImageTensor& x,
                                  int probes, double h, Rng& rng, const ProbeFilter& skip = {});

/// True when moving x[index] by up to `radius` can flip the sign of one of
/// the absolute differences in the TV term.
bool near_tv_kink(const ImageTensor& x, std::size_t index, double radius);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Largest |closed-form - stepwise| over `cases` random (x0, t <= max_t) draws.
double forward_noise_equivalence(int cases, int max_t, std::uint64_t seed);

/// Global errors of the samplers on a problem with an exact denoiser: data
/// distributed as N(0, sigma^2) per pixel, for which the optimal prediction
/// is eps = sqrt(1 - abar) x / (abar sigma^2 + 1 - abar) and the flow carries
/// x to x * sqrt((abar' sigma^2 + 1 - abar') / (abar sigma^2 + 1 - abar)).
struct AnalyticSolverErrors {
    double euler_coarse = 0.0;  // T = 25
    double euler_fine = 0.0;    // T = 100
    double plms_coarse = 0.0;   // T = 25
};
double analytic_solver_error(bool multistep, int T, double sigma, const NoiseSchedule& s);
AnalyticSolverErrors analytic_solver_errors(double sigma = 0.5);

/// Per-term and composite gradient checks at the content image's shape.
std::vector<CheckResult> gradient_checks(const StylizeModels& models, const ImageTensor& content,
                                         std::string_view prompt, int probes, std::uint64_t seed);

/// The `verify` suite: forward-noising equivalence, gradient checks and a
/// repeated-run determinism check.
std::vector<CheckResult> run_self_checks(const StylizeModels& models, const ImageTensor& content,
                                         std::string_view prompt);

}  // namespace dualstyle
