#pragma once

#include <filesystem>
#include <string>

#include "dualstyle/image.hpp"
#include "dualstyle/pipeline.hpp"
#include "dualstyle/rng.hpp"

namespace dualstyle::testing {

inline std::filesystem::path fixture_dir() { return DUALSTYLE_FIXTURE_DIR; }

inline ImageTensor uniform_image(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    ImageTensor x(shape);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = lo + (hi - lo) * rng.uniform();
    return x;
}

inline double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Fixture models, loaded once per test binary.
const StylizeModels& fixture_models();

}  // namespace dualstyle::testing
