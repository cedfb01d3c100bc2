#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace screx {

enum class Precision { binary32, binary64 };

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct TensorShape {
  std::vector<int> dims;  // {C,H,W} for images, {N} for flat vectors

  int count() const {
    int n = 1;
    for (int d : dims) n *= d;
    return n;
  }
  bool operator==(const TensorShape&) const = default;
  std::string str() const;
};

enum class LayerKind {
  dense,
  conv2d,
  depthwise_conv2d,
  batchnorm,
  relu,
  avgpool,  // global average pool, CxHxW -> Cx1x1
  flatten,  // row-major C,H,W -> C*H*W
};

const char* layer_kind_name(LayerKind k);

// One node of the layer list.  Weight layouts (row-major, documented in the
// model file format):
//   dense:            weights[out][in], bias[out]
//   conv2d:           weights[out_c][in_c][k][k], bias[out_c]
//   depthwise_conv2d: weights[c][k][k], bias[c]   (one group per channel)
//   batchnorm:        bn_scale/bn_shift/bn_mean/bn_var, one entry per channel
struct LayerNode {
  LayerKind kind = LayerKind::relu;
  int out_units = 0;  // dense rows / conv output channels
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool has_bias = false;
  std::vector<double> weights;
  std::vector<double> bias;
  std::vector<double> bn_scale, bn_shift, bn_mean, bn_var;
  // effective per-channel affine, folded from the batchnorm fields in the
  // model's precision when the graph is finalized
  std::vector<double> bn_s, bn_t;
};

constexpr double kBatchNormEps = 1e-5;

// Addresses one scalar pre-activation feeding a relu node: a flat unit for
// dense layers, a (channel, row, col) site for convolutional ones.
struct NeuronRef {
  int relu_index = 0;  // ordinal among the graph's relu nodes
  int unit = 0;        // dense unit or conv channel
  int row = -1, col = -1;

  bool is_conv() const { return row >= 0; }
  uint64_t uid() const {
    return (uint64_t(relu_index) << 40) | (uint64_t(unit) << 20) |
           (uint64_t(row + 1) << 10) | uint64_t(col + 1);
  }
  std::string str() const;
};

struct ModelGraph {
  Precision precision = Precision::binary64;
  TensorShape input_shape;
  std::vector<LayerNode> layers;

  // derived by finalize()
  std::vector<TensorShape> out_shapes;  // per layer
  std::vector<int> relu_nodes;          // graph indices of relu layers

  // Validates shape chaining and layer invariants, computes out_shapes,
  // folds batchnorm statistics into (bn_s, bn_t) in the model's precision.
  // Throws std::runtime_error on inconsistency.
  void finalize();

  int n_relu_layers() const { return int(relu_nodes.size()); }
  const TensorShape& shape_before(int layer) const {
    return layer == 0 ? input_shape : out_shapes[layer - 1];
  }
  // Units addressable by the attack in a relu layer: dense width or channel
  // count (convolutional layers share their kernel across positions).
  int relu_layer_units(int relu_index) const;
  bool relu_layer_is_conv(int relu_index) const;

  int64_t param_count() const;  // learnable parameters: weights, biases, bn scale+shift
};

double quantize(double v, Precision p);
void quantize_inplace(std::span<double> v, Precision p);

}  // namespace screx
