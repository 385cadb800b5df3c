#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "dualstyle/image.hpp"

namespace dualstyle {

/// The single stochastic stream of a run: std::mt19937_64 (whose output
/// sequence is fixed by the standard) feeding a Box-Muller transform.
/// Draws are consumed in pairs; the second member of each pair is kept
/// for the next call, so the sequence depends only on the seed and on
/// the number of draws made so far.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in the open interval (0, 1) with 53 random bits.
    double uniform() noexcept;
    double normal() noexcept;
    ImageTensor normal_image(const Shape& shape) noexcept;

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

}  // namespace dualstyle
