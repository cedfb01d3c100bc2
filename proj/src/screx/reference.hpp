#pragma once

#include <span>
#include <vector>

#include "screx/model.hpp"

namespace screx {

// Plain serial inference, written independently of forward.cpp and kept as a
// correctness oracle for the parallel kernels and as the baseline in the
// benchmark target.  Same accumulation order, no pragmas, no shared helpers.
struct ReferenceRecord {
  std::vector<double> output;
  std::vector<std::vector<double>> preact;  // per relu layer
};

ReferenceRecord reference_forward(const ModelGraph& m, std::span<const double> x);

}  // namespace screx
