#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "screx/distinguisher.hpp"
#include "screx/oracle.hpp"
#include "screx/signature.hpp"

namespace screx {

struct SamplerSpec {
  enum class Kind { normal, uniform } kind = Kind::normal;
  double lo = -1.0, hi = 1.0;
};

struct SearchConfig {
  double delta_rel = 0;  // 0 = precision default: 2^-45 (binary64), 2^-18 (binary32)
  double delta_abs = 0;  // > 0 overrides the relative stop distance
  SamplerSpec sampler;
  int max_pair_attempts = 2000;
  int oversample_min = 4;       // points = n_coords + 1 + max(min, ceil(0.1 n))
  int calibration_traces = 200;
  double constant_fraction = 0.995;  // one-sided label fraction calling a neuron constant
  uint64_t attack_seed = 1;

  double delta_for(Precision p, double gap0) const {
    if (delta_abs > 0) return delta_abs;
    const double rel = delta_rel > 0 ? delta_rel
                       : (p == Precision::binary32 ? 0x1.0p-18 : 0x1.0p-45);
    return rel * gap0;
  }
  int points_for(int n_coords) const {
    const int extra = std::max(oversample_min, (n_coords + 9) / 10);
    return n_coords + 1 + extra;
  }
};

struct PairNotFound : std::runtime_error {
  PairNotFound(const std::string& msg, double a_fraction, uint64_t samples)
      : std::runtime_error(msg), label_a_fraction(a_fraction), samples(samples) {}
  double label_a_fraction;
  uint64_t samples;
};
struct NoisyPairAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One located boundary crossing: the surviving endpoint of the bisection,
// its distance to the discarded endpoint, the endpoint side labels, and the
// original (far) pair for later orientation of the recovered hyperplane.
struct CriticalPoint {
  std::vector<double> x;
  double gap = 0;
  StateLabel state_x = StateLabel::A_side;
  StateLabel state_y = StateLabel::B_side;
  std::vector<double> x_far, y_far;
};

// Sampling statistics gathered while hunting for state pairs; feeds neuron
// kind classification and keeps a few labelled inputs around for later use
// (orientation checks, margin biases for constant units).
struct PairStats {
  uint64_t samples = 0;
  uint64_t label_a = 0;
  std::vector<std::vector<double>> kept_inputs;
  std::vector<StateLabel> kept_labels;

  double a_fraction() const { return samples ? double(label_a) / double(samples) : 0.0; }
  void record(const std::vector<double>& x, StateLabel s, size_t keep_cap = 128);
};

// Per-neuron state access through the side channel.  In ideal mode the
// oracle's exact side answer is used; otherwise each decision draws
// `repeats` traces (odd) and majority-votes them against the calibrated
// cluster model.  Labels can be globally flipped (symmetry tests) or swapped
// (layer alignment).  Nonces are derived from (neuron uid, per-neuron
// sequence) so parallel searches stay deterministic.
class StateProbe {
 public:
  StateProbe(VictimOracle& oracle, const NeuronRef& ref, bool flip_labels);

  // trace-mode calibration; returns false when the traces will not split
  // (constant-state candidate)
  bool calibrate(const SearchConfig& cfg, PairStats& stats);
  void set_cluster_model(ClusterModel cm) { cm_ = std::move(cm); has_cm_ = true; }
  const ClusterModel* cluster_model() const { return has_cm_ ? &cm_ : nullptr; }
  void set_swap(bool swap) { swap_ = swap; }

  StateLabel state(std::span<const double> x);
  uint64_t traces_used() const { return traces_used_; }
  const NeuronRef& ref() const { return ref_; }
  bool ideal() const;
  bool noisy() const;
  Precision precision() const;
  // mean calibration trace; used to side-match constant-state neurons
  const std::vector<double>& mean_trace() const { return mean_trace_; }

 private:
  uint64_t next_nonce();

  VictimOracle* oracle_;
  NeuronRef ref_;
  bool flip_ = false;
  bool swap_ = false;
  bool has_cm_ = false;
  ClusterModel cm_;
  std::vector<double> mean_trace_;
  uint64_t seq_ = 0;
  uint64_t traces_used_ = 0;
};

// Draws a fresh input from the configured sampler; deterministic in
// (attack_seed, neuron uid, attempt).
std::vector<double> draw_input(const SearchConfig& cfg, int dim, uint64_t uid, uint32_t attempt);

// First loop of the boundary search: keep X, redraw Y until the probed
// states differ.  Throws PairNotFound with the observed label fraction.
struct StatePair {
  std::vector<double> x, y;
  StateLabel state_x, state_y;
};
StatePair sample_state_pair(StateProbe& probe, const SearchConfig& cfg, int dim,
                            uint32_t& attempt_counter, PairStats& stats);

// Midpoint bisection until ||X-Y||_2 <= delta; returns the surviving X.
// In noisy mode the endpoint states are re-voted once at the end and the
// pair is aborted on disagreement.
CriticalPoint bisect_critical(StateProbe& probe, const StatePair& pair, double delta,
                              Precision oracle_precision, bool verify);

struct CriticalPointSet {
  NeuronRef ref;
  std::vector<CriticalPoint> points;
  PairStats stats;
  uint64_t traces_used = 0;
};

// `count` fresh pairs bisected to critical points; sampling statistics
// accumulate into `stats`.
std::vector<CriticalPoint> collect_critical_points(StateProbe& probe, const SearchConfig& cfg,
                                                   int dim, int count, uint32_t& attempt_counter,
                                                   PairStats& stats);

// Convenience wrapper returning the aggregate.
CriticalPointSet collect_critical_point_set(StateProbe& probe, const SearchConfig& cfg, int dim,
                                            int count);

// Threshold classification given the resolved active fraction and, when
// available, the solved layer-input rows (dead column => input-off).
NeuronKind classify_neuron_kind(double active_fraction,
                                const std::vector<std::vector<double>>* coord_rows,
                                const SearchConfig& cfg, double dead_col_tol = 1e-9);

}  // namespace screx
