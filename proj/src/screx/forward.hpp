#pragma once

#include <span>
#include <vector>

#include "screx/model.hpp"

namespace screx {

// Full instrumented pass: final output plus every relu layer's pre- and
// post-activation tensors.  All arithmetic runs in the model's precision
// (round-to-nearest); recorded values are widened to double unchanged.
struct ForwardRecord {
  std::vector<double> output;
  std::vector<std::vector<double>> preact;  // per relu layer, flat tensors
  std::vector<std::vector<double>> act;

  double preact_of(const ModelGraph& m, const NeuronRef& ref) const;
};

ForwardRecord forward(const ModelGraph& m, std::span<const double> x);

// Output vector only.
std::vector<double> forward_output(const ModelGraph& m, std::span<const double> x);

// Pre-activation of a single neuron; stops computing after its relu layer.
double preactivation(const ModelGraph& m, std::span<const double> x, const NeuronRef& ref);

// Activations feeding the relu at `relu_index` would see as segment input,
// i.e. the previous relu layer's output (or the input itself for the first).
std::vector<double> activations_before(const ModelGraph& m, std::span<const double> x,
                                       int relu_index);

// argmax over the output vector, ties broken by the lowest index.
// Throws if the model has fewer than two outputs.
int hard_label(const ModelGraph& m, std::span<const double> x);
int argmax_lowest(std::span<const double> v);

}  // namespace screx
