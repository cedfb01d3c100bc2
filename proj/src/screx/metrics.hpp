#pragma once

#include <string>
#include <vector>

#include "screx/model.hpp"
#include "screx/search.hpp"
#include "screx/signature.hpp"

namespace screx {

// Per-unit scale factors resolving the positive-scalar ambiguity between a
// victim's fused affine maps and an extracted copy: alpha = <w, w_hat> /
// <w_hat, w_hat> per unit, applied to the unit's row and bias with the
// inverse pushed into the next layer's incoming coefficients.  Negative
// alpha on a unit whose state was recovered (anything but always-on) means
// the sign recovery failed there.
struct AlignResult {
  ModelGraph model;
  std::vector<std::vector<double>> alphas;     // per relu layer, per unit
  std::vector<std::vector<bool>> sign_failed;  // alpha <= 0 on a sign-carrying unit
};
AlignResult align_scales(const ModelGraph& victim, const ModelGraph& extracted,
                         const std::vector<std::vector<NeuronKind>>* kinds = nullptr);

// max |theta - theta_hat| per relu layer over fused weights and bias, after
// alignment.  Units whose extracted row is identically zero (pinned or
// failed) are excluded.
std::vector<double> layer_weight_errors(const ModelGraph& victim, const ModelGraph& aligned);

struct Dataset {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& d, int dim, const std::string& path);

struct EvalOptions {
  int samples = 10000;
  uint64_t seed = 7;
  SamplerSpec sampler;
  bool compare_softmax = false;       // eps-delta over softmax outputs
  std::vector<double> eps_grid;       // empty = powers of two, 2^0 .. 2^-48
  const Dataset* dataset = nullptr;   // optional labelled data for accuracy
};

struct EvalResult {
  double fidelity = kNan;
  std::vector<double> mean_act_err;  // per relu layer
  std::vector<std::pair<double, double>> eps_delta;
  double hybrid_agreement = kNan;
  double accuracy_victim = kNan;
  double accuracy_extracted = kNan;
};

// Label agreement, per-layer activation error and the (eps, delta) table
// between the victim and an aligned extracted model; optionally scores a
// hybrid model's agreement with the victim as well.
EvalResult evaluate(const ModelGraph& victim, const ModelGraph& aligned, const EvalOptions& opt,
                    const ModelGraph* hybrid = nullptr);

// Aligned extracted layers up to the last relu, victim head segment after.
ModelGraph make_hybrid(const ModelGraph& victim, const ModelGraph& aligned);

}  // namespace screx
