#include "screx/forward.hpp"

#include <algorithm>

#include <stdexcept>

namespace screx {

namespace {

// Accumulation order is part of the numeric contract: weights in index order
// first, bias added last.  The serial reference in reference.cpp follows the
// same order so both paths agree to the last ulp.

template <class T>
void dense_layer(const LayerNode& L, const std::vector<T>& in, std::vector<T>& out) {
  const int n_in = int(in.size());
  out.resize(L.out_units);
  const double* w = L.weights.data();
#pragma omp parallel for schedule(static) if (size_t(L.out_units) * n_in > 8192)
  for (int o = 0; o < L.out_units; ++o) {
    T acc = 0;
    const double* row = w + size_t(o) * n_in;
    for (int i = 0; i < n_in; ++i) acc += T(row[i]) * in[i];
    if (L.has_bias) acc += T(L.bias[o]);
    out[o] = acc;
  }
}

// One output scalar of a conv node; accumulation order (ic, ky, kx) matches
// the full kernel below so both paths agree bit for bit.
template <class T>
T conv_scalar(const LayerNode& L, const TensorShape& in_shape, const T* in, int oc, int oy,
              int ox) {
  const int in_c = in_shape.dims[0], h = in_shape.dims[1], w = in_shape.dims[2];
  const int k = L.kernel;
  const bool depthwise = L.kind == LayerKind::depthwise_conv2d;
  const int y0 = oy * L.stride - L.pad;
  const int x0 = ox * L.stride - L.pad;
  const int ky_lo = std::max(0, -y0), ky_hi = std::min(k, h - y0);
  const int kx_lo = std::max(0, -x0), kx_hi = std::min(k, w - x0);
  T acc = 0;
  if (k == 1 && !depthwise && ky_lo == 0 && ky_hi == 1 && kx_lo == 0 && kx_hi == 1) {
    // pointwise: one pixel per channel
    const double* wk = L.weights.data() + size_t(oc) * in_c;
    const T* px = in + size_t(y0) * w + x0;
    const size_t plane = size_t(h) * w;
    for (int ic = 0; ic < in_c; ++ic) acc += T(wk[ic]) * px[size_t(ic) * plane];
  } else {
    const int ic_lo = depthwise ? oc : 0;
    const int ic_hi = depthwise ? oc + 1 : in_c;
    for (int ic = ic_lo; ic < ic_hi; ++ic) {
      const double* wk =
          L.weights.data() + (depthwise ? size_t(oc) : size_t(oc) * in_c + ic) * k * k;
      const T* plane = in + size_t(ic) * h * w;
      for (int ky = ky_lo; ky < ky_hi; ++ky) {
        const double* wrow = wk + size_t(ky) * k;
        const T* irow = plane + size_t(y0 + ky) * w + x0;
        for (int kx = kx_lo; kx < kx_hi; ++kx) acc += T(wrow[kx]) * irow[kx];
      }
    }
  }
  if (L.has_bias) acc += T(L.bias[oc]);
  return acc;
}

template <class T>
void conv_layer(const LayerNode& L, const TensorShape& in_shape, const std::vector<T>& in,
                std::vector<T>& out) {
  const int h = in_shape.dims[1], w = in_shape.dims[2];
  const int k = L.kernel, s = L.stride, p = L.pad;
  const int oh = (h + 2 * p - k) / s + 1;
  const int ow = (w + 2 * p - k) / s + 1;
  out.resize(size_t(L.out_units) * oh * ow);
#pragma omp parallel for collapse(2) schedule(static) if (size_t(L.out_units) * oh * ow > 2048)
  for (int oc = 0; oc < L.out_units; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        out[(size_t(oc) * oh + oy) * ow + ox] = conv_scalar(L, in_shape, in.data(), oc, oy, ox);
}

template <class T>
void batchnorm_layer(const LayerNode& L, const TensorShape& in_shape, const std::vector<T>& in,
                     std::vector<T>& out) {
  const int c = in_shape.dims[0];
  const int plane = in_shape.count() / c;
  out.resize(in.size());
#pragma omp parallel for schedule(static) if (in.size() > 8192)
  for (int ch = 0; ch < c; ++ch) {
    const T s = T(L.bn_s[ch]), t = T(L.bn_t[ch]);
    for (int i = 0; i < plane; ++i) {
      const size_t idx = size_t(ch) * plane + i;
      out[idx] = s * in[idx] + t;
    }
  }
}

template <class T>
void relu_layer(const std::vector<T>& in, std::vector<T>& out) {
  out.resize(in.size());
#pragma omp parallel for schedule(static) if (in.size() > 8192)
  for (long i = 0; i < long(in.size()); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <class T>
void avgpool_layer(const TensorShape& in_shape, const std::vector<T>& in, std::vector<T>& out) {
  const int c = in_shape.dims[0];
  const int plane = in_shape.dims[1] * in_shape.dims[2];
  out.resize(c);
#pragma omp parallel for schedule(static) if (in.size() > 8192)
  for (int ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (int i = 0; i < plane; ++i) acc += in[size_t(ch) * plane + i];
    out[ch] = acc / T(plane);
  }
}

template <class T>
struct PassState {
  std::vector<T> cur, next;
};

template <class T>
void apply_node(const ModelGraph& m, size_t li, PassState<T>& st) {
  const LayerNode& L = m.layers[li];
  const TensorShape& in_shape = m.shape_before(int(li));
  switch (L.kind) {
    case LayerKind::dense: dense_layer(L, st.cur, st.next); break;
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d: conv_layer(L, in_shape, st.cur, st.next); break;
    case LayerKind::batchnorm: batchnorm_layer(L, in_shape, st.cur, st.next); break;
    case LayerKind::relu: relu_layer(st.cur, st.next); break;
    case LayerKind::avgpool: avgpool_layer(in_shape, st.cur, st.next); break;
    case LayerKind::flatten: st.next = st.cur; break;
  }
  st.cur.swap(st.next);
}

template <class T>
std::vector<T> load_input(const ModelGraph& m, std::span<const double> x) {
  if (int(x.size()) != m.input_shape.count())
    throw std::invalid_argument("forward: input size " + std::to_string(x.size()) +
                                " does not match shape " + m.input_shape.str());
  std::vector<T> v(x.size());
  for (size_t i = 0; i < x.size(); ++i) v[i] = T(x[i]);
  return v;
}

template <class T>
ForwardRecord run_instrumented(const ModelGraph& m, std::span<const double> x) {
  ForwardRecord rec;
  PassState<T> st;
  st.cur = load_input<T>(m, x);
  for (size_t li = 0; li < m.layers.size(); ++li) {
    if (m.layers[li].kind == LayerKind::relu)
      rec.preact.emplace_back(st.cur.begin(), st.cur.end());
    apply_node(m, li, st);
    if (m.layers[li].kind == LayerKind::relu)
      rec.act.emplace_back(st.cur.begin(), st.cur.end());
  }
  rec.output.assign(st.cur.begin(), st.cur.end());
  return rec;
}

// Runs the graph up to the target's learnable op, then evaluates only the
// target scalar and folds the trailing batchnorm; identical value to reading
// the full pass, at a fraction of the last segment's cost.
template <class T>
double run_preactivation(const ModelGraph& m, std::span<const double> x, const NeuronRef& ref) {
  const int target_node = m.relu_nodes.at(ref.relu_index);
  const TensorShape& s = m.shape_before(target_node);
  if (s.dims.size() == 3) {
    if (!ref.is_conv()) throw std::invalid_argument("neuron ref lacks position for conv layer");
    if (ref.unit >= s.dims[0] || ref.row >= s.dims[1] || ref.col >= s.dims[2])
      throw std::out_of_range("neuron ref out of bounds: " + ref.str());
  } else {
    if (ref.is_conv()) throw std::invalid_argument("neuron ref has position for dense layer");
    if (ref.unit >= s.dims[0]) throw std::out_of_range("neuron ref out of bounds: " + ref.str());
  }
  int learn = -1;
  const LayerNode* bn = nullptr;
  for (int li = target_node - 1; li >= 0; --li) {
    const LayerKind k = m.layers[li].kind;
    if (k == LayerKind::relu) break;
    if (k == LayerKind::batchnorm) bn = &m.layers[li];
    if (k == LayerKind::dense || k == LayerKind::conv2d || k == LayerKind::depthwise_conv2d) {
      learn = li;
      break;
    }
  }
  if (learn < 0) throw std::logic_error("preactivation: relu without a learnable op");

  PassState<T> st;
  st.cur = load_input<T>(m, x);
  for (int li = 0; li < learn; ++li) apply_node(m, li, st);

  const LayerNode& L = m.layers[learn];
  T v;
  if (L.kind == LayerKind::dense) {
    const int n_in = int(st.cur.size());
    T acc = 0;
    const double* row = L.weights.data() + size_t(ref.unit) * n_in;
    for (int i = 0; i < n_in; ++i) acc += T(row[i]) * st.cur[i];
    if (L.has_bias) acc += T(L.bias[ref.unit]);
    v = acc;
  } else {
    v = conv_scalar(L, m.shape_before(learn), st.cur.data(), ref.unit, ref.row, ref.col);
  }
  if (bn) v = T(bn->bn_s[ref.unit]) * v + T(bn->bn_t[ref.unit]);
  return double(v);
}

template <class T>
std::vector<double> run_activations_before(const ModelGraph& m, std::span<const double> x,
                                           int relu_index) {
  int stop = 0;  // run every node before the previous relu's successor
  if (relu_index > 0) stop = m.relu_nodes.at(relu_index - 1) + 1;
  PassState<T> st;
  st.cur = load_input<T>(m, x);
  for (int li = 0; li < stop; ++li) apply_node(m, li, st);
  return std::vector<double>(st.cur.begin(), st.cur.end());
}

}  // namespace

double ForwardRecord::preact_of(const ModelGraph& m, const NeuronRef& ref) const {
  const TensorShape& s = m.shape_before(m.relu_nodes.at(ref.relu_index));
  const std::vector<double>& v = preact.at(ref.relu_index);
  if (s.dims.size() == 3)
    return v.at((size_t(ref.unit) * s.dims[1] + ref.row) * s.dims[2] + ref.col);
  return v.at(ref.unit);
}

ForwardRecord forward(const ModelGraph& m, std::span<const double> x) {
  return m.precision == Precision::binary32 ? run_instrumented<float>(m, x)
                                            : run_instrumented<double>(m, x);
}

std::vector<double> forward_output(const ModelGraph& m, std::span<const double> x) {
  return forward(m, x).output;
}

double preactivation(const ModelGraph& m, std::span<const double> x, const NeuronRef& ref) {
  return m.precision == Precision::binary32 ? run_preactivation<float>(m, x, ref)
                                            : run_preactivation<double>(m, x, ref);
}

std::vector<double> activations_before(const ModelGraph& m, std::span<const double> x,
                                       int relu_index) {
  return m.precision == Precision::binary32 ? run_activations_before<float>(m, x, relu_index)
                                            : run_activations_before<double>(m, x, relu_index);
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

int hard_label(const ModelGraph& m, std::span<const double> x) {
  if (m.out_shapes.back().count() < 2)
    throw std::logic_error("hard_label: model is not a classifier");
  std::vector<double> out = forward_output(m, x);
  return argmax_lowest(out);
}

}  // namespace screx
