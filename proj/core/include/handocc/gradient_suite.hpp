#pragma once

// Finite-difference checks over every differentiable building block, the
// attention blocks, forward kinematics and the full training loss of a tiny
// network. Shared by the command-line tool and the acceptance checks.

#include <cstdint>
#include <string>
#include <vector>

#include "handocc/grad_check.hpp"

namespace handocc {

struct GradientCase {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

/// Runs every case once with inputs drawn from `seed`. Each element is checked
/// at 1e-5 and, while its error exceeds `accept`, again at 1e-4, 1e-6, 1e-3
/// and 1e-7.
std::vector<GradientCase> run_gradient_suite(std::uint64_t seed, double accept = 1e-5);

}  // namespace handocc
