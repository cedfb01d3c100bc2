#pragma once

#include <memory>
#include <string>
#include <vector>

#include "screx/fuse.hpp"
#include "screx/report.hpp"
#include "screx/search.hpp"
#include "screx/signature.hpp"

namespace screx {

struct ModeFlags {
  bool perfect_prefix = false;  // map points through the victim's true prefix
  bool flip_labels = false;     // invert every side label (symmetry checks)
};

struct PipelineConfig {
  OracleConfig oracle;
  SearchConfig search;
  ModeFlags modes;
  int last_layer_samples = 0;  // 0 = auto
  int head_fit_iters = 2000;
  int hypothesis_fit_iters = 300;  // cheaper logistic fits for sign scoring
  std::string checkpoint_dir;     // per-layer extracted prefix dumps
  std::string cache_dir;          // per-neuron critical point caches
};

struct ExtractedNeuron {
  NeuronRef ref;
  SignatureEstimate sig;
  NeuronKind kind = NeuronKind::normal;
  double active_fraction = kNan;  // under the resolved mapping
  bool failed = false;
  std::string failure;
};

struct ExtractedLayer {
  int relu_index = 0;
  bool a_is_active = true;
  double sign_margin_log10 = kNan;
  bool sign_tie = false;
  std::vector<ExtractedNeuron> units;
};

struct HeadFit {
  std::vector<double> weights;  // [out][in], row-major
  std::vector<double> bias;
  int in = 0, out = 0;
  double loss = 0;
};

struct ExtractionOutcome {
  ModelGraph extracted;
  std::vector<ExtractedLayer> layers;
  HeadFit head;
  ExtractionReport report;
};

// Runs the full three-stage extraction against a fresh oracle wrapping the
// victim: per relu layer, side-channel critical point search, least-squares
// signature recovery, and residual-based sign selection, then the output
// head fit.  Deterministic for fixed seeds.
ExtractionOutcome extract_model(const ModelGraph& victim, const PipelineConfig& cfg);

// Least-squares / softmax-regression head fits (exposed for tests).
HeadFit fit_head_ols(const std::vector<std::vector<double>>& feats,
                     const std::vector<std::vector<double>>& targets);
HeadFit fit_head_logistic(const std::vector<std::vector<double>>& feats,
                          const std::vector<int>& labels, int classes, int iters,
                          double lr = 0.1);

// Topology copy with zeroed weights and neutral batchnorms: what a black-box
// attacker knows about the victim.
ModelGraph strip_weights(const ModelGraph& m);

}  // namespace screx
