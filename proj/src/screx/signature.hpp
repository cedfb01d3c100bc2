#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "screx/oracle.hpp"

namespace screx {

enum class NeuronKind : int { normal = 0, always_on = 1, always_off = 2, input_off = 3 };
const char* neuron_kind_name(NeuronKind k);

struct RankDeficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooFewPoints : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolveOptions {
  double cond_tol = 1e-8;      // identifiability: second-smallest/largest singular value
  double dead_col_tol = 1e-9;  // column is structurally dead below this
};

// Hyperplane estimate for one neuron over its layer-input coordinates:
// unit-norm weights, matching bias, and the smallest singular value of the
// augmented point matrix as the fit residual.
struct SignatureEstimate {
  std::vector<double> weights;
  double bias = 0;
  double residual = 0;
  NeuronKind kind = NeuronKind::normal;
  bool oriented = false;          // true once the A side is the positive side
  std::vector<int> dead_coords;   // zeroed, unidentifiable coordinates
};

// Least-squares hyperplane through coordinate rows: the right singular
// vector of [rows | 1] with the smallest singular value.  Structurally dead
// columns are dropped and reported; identifiability is checked on the
// column-scaled matrix.  Throws TooFewPoints / RankDeficient.
SignatureEstimate solve_signature(const std::vector<std::vector<double>>& coord_rows,
                                  const SolveOptions& opt = {});

// Bias from the weights and one critical point's coordinates.
double recover_bias(std::span<const double> weights, std::span<const double> coords);

// Flips (weights, bias) so that `label` sits on the claimed side: A-side
// inputs get positive pre-activations.  `coords` must come from a point well
// off the hyperplane.
void orient_signature(SignatureEstimate& sig, std::span<const double> coords, StateLabel label);

// Probe-side system for recovering special units of the previous layer and
// for scoring a sign hypothesis: the probe's own unknowns over the normal
// units' activations, plus one pass-through block per special unit whose
// relu is replaced by an explicit 0/1 gate per point.
struct JointSystem {
  std::vector<std::vector<double>> normal_acts;  // z x m_norm, hypothesis-dependent
  struct Special {
    int unit = 0;                       // previous-layer unit being passed through
    std::vector<uint8_t> active;        // per-point gate under the hypothesis
    bool varying = false;               // gates differ across points -> own bias column
    std::vector<std::vector<double>> coords;  // z x n_coords(unit), layer-input coordinates
  };
  std::vector<Special> specials;
};

struct JointSolution {
  double residual = 0;
  double cond_ratio = 0;
  std::vector<std::vector<double>> blocks;  // per special: scaled weights (gamma * theta)
  std::vector<double> block_bias;           // per special: gamma * beta, NaN when merged
                                            // into the shared constant column
};

// Columns: [normal acts | per special: gated coords (+ gate indicator when
// varying) | 1].  Solved by the same nullspace route as solve_signature.
JointSolution solve_joint(const JointSystem& sys, const SolveOptions& opt = {});

// Unit-norm signature from a recovered pass-through block.
SignatureEstimate signature_from_block(std::span<const double> block, double block_bias,
                                       NeuronKind kind);

}  // namespace screx
