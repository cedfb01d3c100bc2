#pragma once

#include <span>

#include "screx/model.hpp"

namespace screx {

// Residuals of one next-layer probe system solved under the two candidate
// mappings of a layer (A side active vs B side active).
struct ProbeResiduals {
  double active_a = 0;
  double active_b = 0;
};

struct SignDecision {
  bool a_is_active = true;
  double margin_log10 = kNan;  // decades between the two residuals
  bool tie = false;
  int probes_used = 0;
};

// Adopts the mapping with the lower residual.  A decisive first probe
// (margin >= decisive_margin decades) settles the layer alone; otherwise the
// available probes vote and the best agreeing margin is reported.  Margins
// at or below tie_margin decades are flagged.
SignDecision select_sign(std::span<const ProbeResiduals> probes, double decisive_margin = 1.0,
                         double tie_margin = 0.05);

}  // namespace screx
