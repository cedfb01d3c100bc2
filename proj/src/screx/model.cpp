#include "screx/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace screx {

std::string TensorShape::str() const {
  std::ostringstream os;
  for (size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  return os.str();
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::depthwise_conv2d: return "depthwise_conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

std::string NeuronRef::str() const {
  std::ostringstream os;
  os << "L" << relu_index << ":u" << unit;
  if (is_conv()) os << "@(" << row << "," << col << ")";
  return os.str();
}

double quantize(double v, Precision p) {
  return p == Precision::binary32 ? double(float(v)) : v;
}

void quantize_inplace(std::span<double> v, Precision p) {
  if (p == Precision::binary32)
    for (double& x : v) x = double(float(x));
}

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

[[noreturn]] void fail(int layer, const std::string& what) {
  throw std::runtime_error("model: layer " + std::to_string(layer) + ": " + what);
}

}  // namespace

void ModelGraph::finalize() {
  out_shapes.clear();
  relu_nodes.clear();
  if (input_shape.dims.empty()) throw std::runtime_error("model: empty input shape");
  for (int d : input_shape.dims)
    if (d < 1) throw std::runtime_error("model: non-positive input dim");

  TensorShape cur = input_shape;
  bool prev_linear = false;  // a linear op appeared since the last relu
  for (size_t i = 0; i < layers.size(); ++i) {
    LayerNode& L = layers[i];
    switch (L.kind) {
      case LayerKind::dense: {
        if (cur.dims.size() != 1) fail(i, "dense expects a flat input");
        const int in = cur.dims[0];
        if (L.out_units < 1) fail(i, "dense needs out_units");
        if (int(L.weights.size()) != L.out_units * in) fail(i, "dense weight size");
        if (L.has_bias && int(L.bias.size()) != L.out_units) fail(i, "dense bias size");
        cur = TensorShape{{L.out_units}};
        prev_linear = true;
        break;
      }
      case LayerKind::conv2d:
      case LayerKind::depthwise_conv2d: {
        if (cur.dims.size() != 3) fail(i, "conv expects CxHxW input");
        const int in_c = cur.dims[0], h = cur.dims[1], w = cur.dims[2];
        if (L.kernel < 1 || L.stride < 1 || L.pad < 0) fail(i, "conv hyperparams");
        const int oh = conv_out_dim(h, L.kernel, L.stride, L.pad);
        const int ow = conv_out_dim(w, L.kernel, L.stride, L.pad);
        if (oh < 1 || ow < 1) fail(i, "conv output collapses");
        if (L.kind == LayerKind::depthwise_conv2d) {
          if (L.out_units != in_c) fail(i, "depthwise conv must keep channel count");
          if (int(L.weights.size()) != in_c * L.kernel * L.kernel) fail(i, "depthwise weight size");
        } else {
          if (L.out_units < 1) fail(i, "conv needs out_units");
          if (int(L.weights.size()) != L.out_units * in_c * L.kernel * L.kernel)
            fail(i, "conv weight size");
        }
        if (L.has_bias && int(L.bias.size()) != L.out_units) fail(i, "conv bias size");
        cur = TensorShape{{L.out_units, oh, ow}};
        prev_linear = true;
        break;
      }
      case LayerKind::batchnorm: {
        const int c = cur.dims[0];
        if (int(L.bn_scale.size()) != c || int(L.bn_shift.size()) != c ||
            int(L.bn_mean.size()) != c || int(L.bn_var.size()) != c)
          fail(i, "batchnorm parameter size");
        L.bn_s.resize(c);
        L.bn_t.resize(c);
        for (int j = 0; j < c; ++j) {
          if (!(L.bn_var[j] > 0)) fail(i, "batchnorm variance must be positive");
          double s = L.bn_scale[j] / std::sqrt(L.bn_var[j] + kBatchNormEps);
          double t = L.bn_shift[j] - s * L.bn_mean[j];
          L.bn_s[j] = quantize(s, precision);
          L.bn_t[j] = quantize(t, precision);
        }
        prev_linear = true;
        break;
      }
      case LayerKind::relu: {
        if (!prev_linear) fail(i, "relu must follow a linear segment");
        relu_nodes.push_back(int(i));
        prev_linear = false;
        break;
      }
      case LayerKind::avgpool: {
        if (cur.dims.size() != 3) fail(i, "avgpool expects CxHxW input");
        cur = TensorShape{{cur.dims[0], 1, 1}};
        prev_linear = true;
        break;
      }
      case LayerKind::flatten: {
        cur = TensorShape{{cur.count()}};
        prev_linear = true;
        break;
      }
    }
    out_shapes.push_back(cur);
  }
}

int ModelGraph::relu_layer_units(int relu_index) const {
  const TensorShape& s = out_shapes[relu_nodes.at(relu_index)];
  return s.dims[0];  // channels for conv, width for dense
}

bool ModelGraph::relu_layer_is_conv(int relu_index) const {
  return out_shapes[relu_nodes.at(relu_index)].dims.size() == 3;
}

int64_t ModelGraph::param_count() const {
  int64_t n = 0;
  for (const LayerNode& L : layers) {
    n += int64_t(L.weights.size()) + int64_t(L.bias.size());
    n += int64_t(L.bn_scale.size()) + int64_t(L.bn_shift.size());
  }
  return n;
}

}  // namespace screx
