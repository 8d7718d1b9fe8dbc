#pragma once

#include "hypertone/verify.hpp"

namespace testing {

inline hypertone::GcnConfig small_config(hypertone::CondMode mode) { return hypertone::gradcheck_config(mode); }
using hypertone::generator_gradcheck;

}  // namespace testing
