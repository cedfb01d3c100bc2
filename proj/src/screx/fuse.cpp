#include "screx/fuse.hpp"

#include <stdexcept>

namespace screx {

std::vector<SegmentInfo> analyze_segments(const ModelGraph& m) {
  std::vector<SegmentInfo> segs;
  int start = 0;
  const int n_nodes = int(m.layers.size());
  for (int rel = 0; rel <= m.n_relu_layers(); ++rel) {
    const bool head = rel == m.n_relu_layers();
    const int end = head ? n_nodes - 1 : m.relu_nodes[rel];

    SegmentInfo seg;
    seg.relu_index = head ? -1 : rel;
    seg.first_node = start;
    seg.end_node = end;
    seg.seg_input_shape = m.shape_before(start);
    seg.learnable_node = -1;
    for (int li = start; li <= end; ++li) {
      const LayerKind k = m.layers[li].kind;
      if (k == LayerKind::dense || k == LayerKind::conv2d || k == LayerKind::depthwise_conv2d) {
        if (seg.learnable_node >= 0)
          throw std::runtime_error("segment holds more than one learnable op");
        seg.learnable_node = li;
        seg.learn_kind = k;
      } else if (k == LayerKind::batchnorm) {
        seg.has_batchnorm = true;
      } else if (k == LayerKind::relu && li != end) {
        throw std::runtime_error("unexpected relu inside segment");
      }
    }
    if (seg.learnable_node < 0) throw std::runtime_error("segment has no learnable op");
    for (int li = start; li < seg.learnable_node; ++li)
      seg.fixed_ops.push_back(m.layers[li].kind);
    seg.learn_input_shape = m.shape_before(seg.learnable_node);
    seg.out_shape = m.out_shapes[seg.learnable_node];
    seg.n_units = seg.out_shape.dims[0];

    const LayerNode& L = m.layers[seg.learnable_node];
    if (seg.learn_kind == LayerKind::dense) {
      seg.n_coords = seg.learn_input_shape.dims[0];
    } else {
      const int in_c = seg.learn_input_shape.dims[0];
      seg.kernel = L.kernel;
      seg.stride = L.stride;
      seg.pad = L.pad;
      seg.n_coords =
          (seg.learn_kind == LayerKind::depthwise_conv2d ? 1 : in_c) * L.kernel * L.kernel;
      seg.target_row = seg.out_shape.dims[1] / 2;
      seg.target_col = seg.out_shape.dims[2] / 2;
    }
    segs.push_back(seg);
    start = end + 1;
  }
  return segs;
}

std::vector<double> apply_fixed_ops(const SegmentInfo& seg, std::span<const double> seg_input) {
  if (int(seg_input.size()) != seg.seg_input_shape.count())
    throw std::invalid_argument("apply_fixed_ops: segment input size mismatch");
  std::vector<double> cur(seg_input.begin(), seg_input.end());
  TensorShape shape = seg.seg_input_shape;
  for (LayerKind k : seg.fixed_ops) {
    // avgpool is the only value-changing fixed op; flatten is a no-op on the
    // flat buffer
    if (k == LayerKind::avgpool) {
      const int c = shape.dims[0];
      const int plane = shape.dims[1] * shape.dims[2];
      std::vector<double> pooled(c);
      for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int i = 0; i < plane; ++i) s += cur[size_t(ch) * plane + i];
        pooled[ch] = s / plane;
      }
      cur.swap(pooled);
      shape = TensorShape{{c, 1, 1}};
    } else if (k == LayerKind::flatten) {
      shape = TensorShape{{shape.count()}};
    }
  }
  return cur;
}

std::vector<double> unit_coords(const SegmentInfo& seg, std::span<const double> learn_input,
                                int unit) {
  return unit_coords_at(seg, learn_input, unit, seg.target_row, seg.target_col);
}

std::vector<double> unit_coords_at(const SegmentInfo& seg, std::span<const double> learn_input,
                                   int unit, int row, int col) {
  if (int(learn_input.size()) != seg.learn_input_shape.count())
    throw std::invalid_argument("unit_coords: input size mismatch");
  if (unit < 0 || unit >= seg.n_units) throw std::out_of_range("unit_coords: unit");
  if (seg.learn_kind == LayerKind::dense)
    return std::vector<double>(learn_input.begin(), learn_input.end());

  const int in_c = seg.learn_input_shape.dims[0];
  const int h = seg.learn_input_shape.dims[1];
  const int w = seg.learn_input_shape.dims[2];
  const int k = seg.kernel;
  const int y0 = row * seg.stride - seg.pad;
  const int x0 = col * seg.stride - seg.pad;
  const bool depthwise = seg.learn_kind == LayerKind::depthwise_conv2d;
  std::vector<double> patch;
  patch.reserve(seg.n_coords);
  const int ic_lo = depthwise ? unit : 0;
  const int ic_hi = depthwise ? unit + 1 : in_c;
  for (int ic = ic_lo; ic < ic_hi; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int iy = y0 + ky, ix = x0 + kx;
        patch.push_back((iy < 0 || iy >= h || ix < 0 || ix >= w)
                            ? 0.0
                            : learn_input[(size_t(ic) * h + iy) * w + ix]);
      }
  return patch;
}

FusedLayer fused_layer_params(const ModelGraph& m, const SegmentInfo& seg) {
  const LayerNode& L = m.layers[seg.learnable_node];
  FusedLayer fl;
  fl.weights.resize(seg.n_units);
  fl.bias.assign(seg.n_units, 0.0);

  const LayerNode* bn = nullptr;
  for (int li = seg.learnable_node + 1; li <= seg.end_node; ++li)
    if (m.layers[li].kind == LayerKind::batchnorm) bn = &m.layers[li];

  for (int u = 0; u < seg.n_units; ++u) {
    const double s = bn ? bn->bn_s[u] : 1.0;
    const double t = bn ? bn->bn_t[u] : 0.0;
    std::vector<double>& w = fl.weights[u];
    w.resize(seg.n_coords);
    // dense rows and both conv kernel layouts are contiguous per unit
    const size_t base = size_t(u) * seg.n_coords;
    for (int i = 0; i < seg.n_coords; ++i) w[i] = s * L.weights[base + i];
    fl.bias[u] = t + (L.has_bias ? s * L.bias[u] : 0.0);
  }
  return fl;
}

double fused_preactivation(const FusedLayer& fl, const SegmentInfo& seg,
                           std::span<const double> seg_input, int unit) {
  std::vector<double> li = apply_fixed_ops(seg, seg_input);
  std::vector<double> row = unit_coords(seg, li, unit);
  double acc = 0;
  for (int i = 0; i < seg.n_coords; ++i) acc += fl.weights[unit][i] * row[i];
  return acc + fl.bias[unit];
}

}  // namespace screx
