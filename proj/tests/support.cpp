#include "support.hpp"

namespace dualstyle::testing {

const StylizeModels& fixture_models() {
    static const StylizeModels models = load_models(fixture_dir());
    return models;
}

}  // namespace dualstyle::testing
