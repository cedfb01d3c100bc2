#pragma once

#include <span>
#include <vector>

#include "screx/model.hpp"

namespace screx {

// A segment is the run of linear nodes feeding one relu (or the output
// head): optional fixed reshaping ops (avgpool/flatten), exactly one
// learnable op (dense or convolution), an optional batchnorm.  Each unit of
// the segment then acts as a single affine map over its coordinate row: the
// full input vector for dense units, the receptive-field patch at the
// targeted position for convolutional ones.
struct SegmentInfo {
  int relu_index = -1;     // -1 for the output head segment
  int first_node = 0;      // graph range [first_node, end_node]
  int end_node = 0;        // node index of the relu / last node for head
  int learnable_node = 0;  // dense or conv node
  bool has_batchnorm = false;
  TensorShape seg_input_shape;    // previous relu output (or model input)
  TensorShape learn_input_shape;  // after the fixed ops
  TensorShape out_shape;
  LayerKind learn_kind = LayerKind::dense;
  int n_units = 0;   // dense rows / conv channels
  int n_coords = 0;  // unknowns per unit, bias excluded
  int kernel = 0, stride = 1, pad = 0;
  int target_row = -1, target_col = -1;  // probed position for conv units
  std::vector<LayerKind> fixed_ops;      // nodes before the learnable op

  bool is_conv() const { return learn_kind != LayerKind::dense; }
};

// Splits the graph into per-relu segments plus the head segment (last entry).
// Throws if a segment holds more than one learnable op.
std::vector<SegmentInfo> analyze_segments(const ModelGraph& m);

// Applies the segment's fixed ops (avgpool/flatten) in binary64.
std::vector<double> apply_fixed_ops(const SegmentInfo& seg, std::span<const double> seg_input);

// Coordinate row of `unit` given the learnable op's input tensor: identity
// for dense, padded receptive-field patch at the target position for conv.
// Patch order matches the weight layout ([in_c][ky][kx]; [ky][kx] for
// depthwise).
std::vector<double> unit_coords(const SegmentInfo& seg, std::span<const double> learn_input,
                                int unit);

// Same patch extraction at an explicit output position instead of the
// segment's own target.
std::vector<double> unit_coords_at(const SegmentInfo& seg, std::span<const double> learn_input,
                                   int unit, int row, int col);

// Victim-side fused affine parameters of a segment: per unit, the weight row
// over its coordinate system with batchnorm folded in, plus the fused bias.
struct FusedLayer {
  std::vector<std::vector<double>> weights;  // [unit][n_coords]
  std::vector<double> bias;                  // [unit]
};
FusedLayer fused_layer_params(const ModelGraph& m, const SegmentInfo& seg);

// Fused pre-activation of one unit: dot(fused weights, coords(unit)) + bias,
// computed in binary64 from the segment's input tensor.
double fused_preactivation(const FusedLayer& fl, const SegmentInfo& seg,
                           std::span<const double> seg_input, int unit);

}  // namespace screx
