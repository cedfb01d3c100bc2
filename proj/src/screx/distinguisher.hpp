#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "screx/oracle.hpp"

namespace screx {

struct DegenerateClusters : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InsufficientData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Two-centroid partition of a trace set.  The A/B naming is arbitrary until
// sign recovery ties one side to the active state.
struct ClusterModel {
  std::vector<double> centroid_a, centroid_b;
  double inertia = 0;
};

// Lloyd iterations with k=2 until the assignment reaches a fixpoint or 100
// rounds, best of 8 seeded restarts by inertia.  Throws DegenerateClusters
// when the traces cannot be split (e.g. all identical).
ClusterModel fit_two_clusters(std::span<const Trace> traces, uint64_t seed = 0);

// Nearest centroid by Euclidean distance; exact ties go to the A side.
StateLabel classify(const Trace& t, const ClusterModel& m);

// Majority vote over an odd number of traces.
StateLabel classify_majority(std::span<const Trace> traces, const ClusterModel& m);

// P[majority of n independent per-trace decisions is correct] for per-trace
// success probability p: sum_{k>n/2} C(n,k) p^k (1-p)^(n-k).
double majority_success_rate(double p, int n);

// Per-sample signal-to-noise ratio: variance across the two class means over
// the mean of the class variances.  0/0 is reported as 0, a clean split with
// zero within-class variance as +inf.  Each class needs at least two traces.
std::vector<double> snr(std::span<const Trace> traces, std::span<const StateLabel> labels);

// Aligns per-neuron cluster labellings inside one layer so that the A side
// means the same physical mask value everywhere: neuron 0 is the reference
// and a neuron's labels are swapped when crossing the centroids pairs them
// better.  Returns one swap flag per neuron.
std::vector<bool> align_layer(std::span<const ClusterModel> models);

// Matches a single centroid (a neuron whose traces never split) against an
// aligned reference model; returns the nearer side's label.
StateLabel nearest_side(std::span<const double> centroid, const ClusterModel& ref);

}  // namespace screx
