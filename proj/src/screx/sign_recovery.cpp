#include "screx/sign_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace screx {

namespace {

double probe_margin(const ProbeResiduals& p) {
  if (p.active_a == p.active_b) return 0.0;
  if (p.active_a == 0 || p.active_b == 0) return std::numeric_limits<double>::infinity();
  return std::abs(std::log10(p.active_b / p.active_a));
}

}  // namespace

SignDecision select_sign(std::span<const ProbeResiduals> probes, double decisive_margin,
                         double tie_margin) {
  if (probes.empty()) throw std::invalid_argument("select_sign: no probes");
  SignDecision d;
  const double m0 = probe_margin(probes[0]);
  if (m0 >= decisive_margin) {
    d.a_is_active = probes[0].active_a < probes[0].active_b;
    d.margin_log10 = m0;
    d.probes_used = 1;
  } else {
    int votes_a = 0;
    for (const ProbeResiduals& p : probes)
      if (p.active_a < p.active_b) ++votes_a;
    d.a_is_active = 2 * votes_a > int(probes.size());
    d.margin_log10 = 0;
    for (const ProbeResiduals& p : probes)
      if ((p.active_a < p.active_b) == d.a_is_active)
        d.margin_log10 = std::max(d.margin_log10, probe_margin(p));
    d.probes_used = int(probes.size());
  }
  d.tie = !(d.margin_log10 > tie_margin);
  return d;
}

}  // namespace screx
