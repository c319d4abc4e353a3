#pragma once

#include "xsep/autodiff.hpp"

#include <string>
#include <vector>

// The finite-difference validation suite: every autodiff primitive, every
// loss, the ISTFT layer, and the full network-through-ISTFT pipeline at toy
// dimensions. Shared by the `gradcheck` CLI subcommand and the acceptance
// suite.

namespace xsep {

struct GradCheckCase {
  std::string name;
  ad::FdReport report;
  Scalar tolerance = 0.0;
};

std::vector<GradCheckCase> run_gradient_checks(std::uint64_t seed = 2024);

bool all_gradient_checks_passed(const std::vector<GradCheckCase>& cases);

}  // namespace xsep
