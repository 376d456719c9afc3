#pragma once

#include <string>
#include <vector>

#include "vimd/tensor.hpp"

namespace vimd {

struct GradReport {
  std::string component;
  float max_rel;
  float tol;
  bool ok() const { return max_rel < tol; }
};

// Finite-difference audit of every primitive plus the full combined
// objective on a 2-class, 1-layer, D=8 pipeline at 32^2 input. Primitives
// are held to 1e-3 relative, the full objective to 5e-3.
std::vector<GradReport> gradcheck_suite(uint64_t seed);

}  // namespace vimd
