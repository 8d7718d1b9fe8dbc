#pragma once

#include "hypertone/conditioning.hpp"
#include "hypertone/gradcheck.hpp"

namespace hypertone {

/// Small 2-block generator used for end-to-end gradient verification.
GcnConfig gradcheck_config(CondMode mode);

/// Finite-difference check of the training-loss gradient w.r.t. every trainable
/// parameter (generator + conditioning network) at 64-bit precision. Every
/// parameter is moved off its initial value, including the zero-initialised
/// conditioning output layers, so that all gradient paths are exercised.
GradCheckResult generator_gradcheck(CondMode mode, std::uint64_t seed,
                                    DeltaGranularity gran = DeltaGranularity::per_channel, std::size_t n = 24);

}  // namespace hypertone
