#include "dualstyle/rng.hpp"

#include <cmath>
#include <numbers>

namespace dualstyle {

double Rng::uniform() noexcept {
    const std::uint64_t bits = engine_() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Rng::normal() noexcept {
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
}

ImageTensor Rng::normal_image(const Shape& shape) noexcept {
    ImageTensor out(shape);
    for (double& v : out.values()) v = normal();
    return out;
}

}  // namespace dualstyle
