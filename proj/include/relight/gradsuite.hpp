#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relight/gradcheck.hpp"
#include "relight/prnet.hpp"

namespace relight {

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks of every differentiable primitive on small random
// inputs drawn from `seed`. Inputs of kinked ops are kept away from the kink.
std::vector<NamedGradCheck> primitive_gradchecks(std::uint64_t seed, const GradCheckOptions& options = {});

// Checks the full network output and the three-branch training loss with
// respect to every parameter, in 64-bit. Defaults to the 16 x 16, 4 x 8
// light configuration and a 1e-5 step.
std::vector<NamedGradCheck> network_gradchecks(std::uint64_t seed,
                                               const PRNetConfig& config = PRNetConfig::grad_check(),
                                               double step = 1e-5);

}  // namespace relight
