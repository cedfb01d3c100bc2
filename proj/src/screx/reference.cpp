#include "screx/reference.hpp"

#include <stdexcept>

namespace screx {

namespace {

template <class T>
ReferenceRecord run(const ModelGraph& m, std::span<const double> x) {
  if (int(x.size()) != m.input_shape.count())
    throw std::invalid_argument("reference_forward: input size mismatch");

  ReferenceRecord rec;
  std::vector<T> cur(x.begin(), x.end());
  TensorShape shape = m.input_shape;

  for (size_t li = 0; li < m.layers.size(); ++li) {
    const LayerNode& L = m.layers[li];
    std::vector<T> next;

    if (L.kind == LayerKind::dense) {
      const int n_in = shape.dims[0];
      next.resize(L.out_units);
      for (int o = 0; o < L.out_units; ++o) {
        T sum = 0;
        for (int i = 0; i < n_in; ++i) sum = sum + T(L.weights[size_t(o) * n_in + i]) * cur[i];
        if (L.has_bias) sum = sum + T(L.bias[o]);
        next[o] = sum;
      }
      shape = TensorShape{{L.out_units}};

    } else if (L.kind == LayerKind::conv2d || L.kind == LayerKind::depthwise_conv2d) {
      const int ci = shape.dims[0], hi = shape.dims[1], wi = shape.dims[2];
      const int k = L.kernel;
      const int ho = (hi + 2 * L.pad - k) / L.stride + 1;
      const int wo = (wi + 2 * L.pad - k) / L.stride + 1;
      next.assign(size_t(L.out_units) * ho * wo, T(0));
      auto in_at = [&](int c, int y, int xx) -> T {
        if (y < 0 || y >= hi || xx < 0 || xx >= wi) return T(0);
        return cur[(size_t(c) * hi + y) * wi + xx];
      };
      for (int oc = 0; oc < L.out_units; ++oc)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            T sum = 0;
            if (L.kind == LayerKind::depthwise_conv2d) {
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  sum = sum + T(L.weights[(size_t(oc) * k + ky) * k + kx]) *
                                  in_at(oc, oy * L.stride - L.pad + ky, ox * L.stride - L.pad + kx);
            } else {
              for (int ic = 0; ic < ci; ++ic)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx)
                    sum = sum + T(L.weights[((size_t(oc) * ci + ic) * k + ky) * k + kx]) *
                                    in_at(ic, oy * L.stride - L.pad + ky, ox * L.stride - L.pad + kx);
            }
            if (L.has_bias) sum = sum + T(L.bias[oc]);
            next[(size_t(oc) * ho + oy) * wo + ox] = sum;
          }
      shape = TensorShape{{L.out_units, ho, wo}};

    } else if (L.kind == LayerKind::batchnorm) {
      const int c = shape.dims[0];
      const int plane = shape.count() / c;
      next.resize(cur.size());
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < plane; ++i)
          next[size_t(ch) * plane + i] = T(L.bn_s[ch]) * cur[size_t(ch) * plane + i] + T(L.bn_t[ch]);

    } else if (L.kind == LayerKind::relu) {
      rec.preact.emplace_back(cur.begin(), cur.end());
      next.resize(cur.size());
      for (size_t i = 0; i < cur.size(); ++i) next[i] = cur[i] > T(0) ? cur[i] : T(0);

    } else if (L.kind == LayerKind::avgpool) {
      const int c = shape.dims[0];
      const int plane = shape.dims[1] * shape.dims[2];
      next.resize(c);
      for (int ch = 0; ch < c; ++ch) {
        T sum = 0;
        for (int i = 0; i < plane; ++i) sum = sum + cur[size_t(ch) * plane + i];
        next[ch] = sum / T(plane);
      }
      shape = TensorShape{{c, 1, 1}};

    } else {  // flatten
      next = cur;
      shape = TensorShape{{shape.count()}};
    }
    cur.swap(next);
  }
  rec.output.assign(cur.begin(), cur.end());
  return rec;
}

}  // namespace

ReferenceRecord reference_forward(const ModelGraph& m, std::span<const double> x) {
  return m.precision == Precision::binary32 ? run<float>(m, x) : run<double>(m, x);
}

}  // namespace screx
