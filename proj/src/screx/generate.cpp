#include "screx/generate.hpp"

#include <cmath>
#include <stdexcept>

#include "screx/forward.hpp"
#include "screx/rng.hpp"

namespace screx {

namespace {

// A distinct counter block per tensor keeps draws independent of layer sizes.
struct WeightRng {
  CounterRng rng;
  uint64_t tensor = 0;
  explicit WeightRng(uint64_t seed) : rng(seed, rng_stream::weights) {}

  void fill_gaussian(std::vector<double>& v, double stddev) {
    rng.fill_gaussian(v, ++tensor, 0);
    for (double& x : v) x *= stddev;
  }
  void fill_uniform(std::vector<double>& v, double lo, double hi) {
    rng.fill_uniform(v, lo, hi, ++tensor, 0);
  }
};

LayerNode simple_node(LayerKind k) {
  LayerNode L;
  L.kind = k;
  return L;
}

LayerNode dense_node(WeightRng& wr, int in, int out) {
  LayerNode L;
  L.kind = LayerKind::dense;
  L.out_units = out;
  L.has_bias = true;
  L.weights.resize(size_t(out) * in);
  L.bias.resize(out);
  wr.fill_gaussian(L.weights, std::sqrt(2.0 / in));
  wr.fill_gaussian(L.bias, 0.3);
  return L;
}

LayerNode conv_node(WeightRng& wr, LayerKind kind, int in_c, int out_c, int k, int stride,
                    int pad) {
  LayerNode L;
  L.kind = kind;
  L.out_units = out_c;
  L.kernel = k;
  L.stride = stride;
  L.pad = pad;
  L.has_bias = false;
  const int per_out = (kind == LayerKind::depthwise_conv2d ? 1 : in_c) * k * k;
  L.weights.resize(size_t(out_c) * per_out);
  wr.fill_gaussian(L.weights, std::sqrt(2.0 / per_out));
  return L;
}

LayerNode batchnorm_node(WeightRng& wr, int c) {
  LayerNode L;
  L.kind = LayerKind::batchnorm;
  L.bn_scale.resize(c);
  L.bn_shift.resize(c);
  L.bn_mean.resize(c);
  L.bn_var.resize(c);
  wr.fill_uniform(L.bn_scale, 0.8, 1.2);
  wr.fill_gaussian(L.bn_shift, 0.1);
  wr.fill_gaussian(L.bn_mean, 0.1);
  wr.fill_uniform(L.bn_var, 0.5, 1.5);
  return L;
}

// Sets every batchnorm's running statistics to the values a training run
// would have produced: per-channel mean and variance of the pre-normalized
// activations under standard normal inputs.  Front to back, since each
// batchnorm changes the statistics downstream.
void calibrate_batchnorm(ModelGraph& m, uint64_t seed, int n_samples = 256) {
  m.finalize();
  CounterRng rng(seed ^ 0x5A5A5A5A, rng_stream::weights);
  std::vector<std::vector<double>> inputs(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    inputs[i].resize(m.input_shape.count());
    rng.fill_gaussian(inputs[i], 0xBADC0DE + i, 0);
  }
  for (size_t li = 0; li < m.layers.size(); ++li) {
    if (m.layers[li].kind != LayerKind::batchnorm) continue;
    const TensorShape& shape = m.shape_before(int(li));
    const int c = shape.dims[0];
    const int plane = shape.count() / c;
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    // activations feeding this batchnorm; truncate the graph at li
    ModelGraph prefix = m;
    prefix.layers.resize(li);
    prefix.finalize();
    for (int i = 0; i < n_samples; ++i) {
      std::vector<double> a = forward_output(prefix, inputs[i]);
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < plane; ++p) mean[ch] += a[size_t(ch) * plane + p];
    }
    for (int ch = 0; ch < c; ++ch) mean[ch] /= double(n_samples) * plane;
    for (int i = 0; i < n_samples; ++i) {
      std::vector<double> a = forward_output(prefix, inputs[i]);
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < plane; ++p) {
          const double d = a[size_t(ch) * plane + p] - mean[ch];
          var[ch] += d * d;
        }
    }
    for (int ch = 0; ch < c; ++ch) {
      m.layers[li].bn_mean[ch] = mean[ch];
      m.layers[li].bn_var[ch] = std::max(var[ch] / (double(n_samples) * plane), 1e-6);
    }
    m.finalize();  // downstream statistics see the updated normalization
  }
}

void quantize_model(ModelGraph& m) {
  if (m.precision != Precision::binary32) return;
  for (LayerNode& L : m.layers) {
    quantize_inplace(L.weights, m.precision);
    quantize_inplace(L.bias, m.precision);
    quantize_inplace(L.bn_scale, m.precision);
    quantize_inplace(L.bn_shift, m.precision);
    quantize_inplace(L.bn_mean, m.precision);
    quantize_inplace(L.bn_var, m.precision);
  }
}

}  // namespace

ModelGraph make_mlp(const std::vector<int>& dims, Precision p, uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in and out dims");
  WeightRng wr(seed);
  ModelGraph m;
  m.precision = p;
  m.input_shape = TensorShape{{dims[0]}};
  for (size_t i = 1; i < dims.size(); ++i) {
    m.layers.push_back(dense_node(wr, dims[i - 1], dims[i]));
    if (i + 1 < dims.size()) m.layers.push_back(simple_node(LayerKind::relu));
  }
  quantize_model(m);
  m.finalize();
  return m;
}

ModelGraph make_mobilenet_short(Precision p, uint64_t seed) {
  WeightRng wr(seed);
  ModelGraph m;
  m.precision = p;
  m.input_shape = TensorShape{{3, 32, 32}};

  auto add_bn_relu = [&](int c) {
    m.layers.push_back(batchnorm_node(wr, c));
    m.layers.push_back(simple_node(LayerKind::relu));
  };
  auto add_dw_separable = [&](int in_c, int out_c, int dw_stride) {
    m.layers.push_back(conv_node(wr, LayerKind::depthwise_conv2d, in_c, in_c, 3, dw_stride, 1));
    add_bn_relu(in_c);
    m.layers.push_back(conv_node(wr, LayerKind::conv2d, in_c, out_c, 1, 1, 0));
    add_bn_relu(out_c);
  };

  m.layers.push_back(conv_node(wr, LayerKind::conv2d, 3, 12, 3, 2, 1));  // 12x16x16
  add_bn_relu(12);
  add_dw_separable(12, 8, 1);   // 8x16x16
  add_dw_separable(8, 16, 2);   // 16x8x8
  add_dw_separable(16, 16, 1);  // 16x8x8
  add_dw_separable(16, 32, 2);  // 32x4x4
  add_dw_separable(32, 64, 1);  // 64x4x4
  m.layers.push_back(simple_node(LayerKind::avgpool));
  m.layers.push_back(simple_node(LayerKind::flatten));
  m.layers.push_back(dense_node(wr, 64, 10));

  calibrate_batchnorm(m, seed);
  quantize_model(m);
  m.finalize();
  return m;
}

ModelGraph make_from_arch(const std::string& arch, Precision p, uint64_t seed) {
  if (arch == "mobilenet-short") return make_mobilenet_short(p, seed);
  const std::string prefix = "mlp:";
  if (arch.rfind(prefix, 0) == 0) {
    std::vector<int> dims;
    size_t pos = prefix.size();
    while (pos < arch.size()) {
      size_t dash = arch.find('-', pos);
      if (dash == std::string::npos) dash = arch.size();
      dims.push_back(std::stoi(arch.substr(pos, dash - pos)));
      pos = dash + 1;
    }
    return make_mlp(dims, p, seed);
  }
  throw std::invalid_argument("unknown architecture spec: " + arch);
}

}  // namespace screx
