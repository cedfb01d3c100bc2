#include "screx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "screx/forward.hpp"
#include "screx/fuse.hpp"
#include "screx/rng.hpp"

namespace screx {

namespace {

double unit_alpha(std::span<const double> w, std::span<const double> w_hat) {
  double num = 0, den = 0;
  for (size_t i = 0; i < w.size(); ++i) {
    num += w[i] * w_hat[i];
    den += w_hat[i] * w_hat[i];
  }
  return den > 0 ? num / den : 0.0;
}

// Divides every coefficient of `node` that reads unit `u` of the previous
// layer by alpha.  `next_learn_in` is the next segment's learn-input shape
// (after its fixed pooling/flatten ops), which fixes how many dense columns
// one previous-layer unit owns.
void compensate_incoming(LayerNode& node, const TensorShape& prev_out,
                         const TensorShape& next_learn_in, int u, double alpha) {
  if (node.kind == LayerKind::dense) {
    const int per_unit = next_learn_in.count() / prev_out.dims[0];
    const int in = int(node.weights.size()) / node.out_units;
    for (int o = 0; o < node.out_units; ++o)
      for (int j = 0; j < per_unit; ++j)
        node.weights[size_t(o) * in + size_t(u) * per_unit + j] /= alpha;
  } else if (node.kind == LayerKind::conv2d) {
    const int in_c = prev_out.dims[0];
    const int kk = node.kernel * node.kernel;
    for (int o = 0; o < node.out_units; ++o)
      for (int j = 0; j < kk; ++j) node.weights[(size_t(o) * in_c + u) * kk + j] /= alpha;
  } else if (node.kind == LayerKind::depthwise_conv2d) {
    const int kk = node.kernel * node.kernel;
    for (int j = 0; j < kk; ++j) node.weights[size_t(u) * kk + j] /= alpha;
  } else {
    throw std::logic_error("compensate_incoming: unexpected layer kind");
  }
}

}  // namespace

AlignResult align_scales(const ModelGraph& victim, const ModelGraph& extracted,
                         const std::vector<std::vector<NeuronKind>>* kinds) {
  std::vector<SegmentInfo> vsegs = analyze_segments(victim);
  AlignResult res;
  res.model = extracted;
  std::vector<SegmentInfo> esegs = analyze_segments(res.model);
  if (vsegs.size() != esegs.size())
    throw std::invalid_argument("align_scales: relu layer counts differ");

  const int n_relu = int(vsegs.size()) - 1;
  res.alphas.resize(n_relu);
  res.sign_failed.resize(n_relu);
  for (int r = 0; r < n_relu; ++r) {
    const SegmentInfo& vs = vsegs[r];
    const SegmentInfo& es = esegs[r];
    if (vs.n_units != es.n_units || vs.n_coords != es.n_coords)
      throw std::invalid_argument("align_scales: segment shapes differ");
    FusedLayer truth = fused_layer_params(victim, vs);
    LayerNode& node = res.model.layers[es.learnable_node];
    LayerNode& next = res.model.layers[esegs[r + 1].learnable_node];

    res.alphas[r].assign(vs.n_units, 1.0);
    res.sign_failed[r].assign(vs.n_units, false);
    for (int u = 0; u < vs.n_units; ++u) {
      std::span<const double> w_hat(node.weights.data() + size_t(u) * es.n_coords,
                                    size_t(es.n_coords));
      double norm2 = 0;
      for (double v : w_hat) norm2 += v * v;
      if (norm2 == 0) continue;  // pinned or failed unit
      const double alpha = unit_alpha(truth.weights[u], w_hat);
      const bool always_on = kinds && (*kinds)[r][u] == NeuronKind::always_on;
      if (alpha <= 0 && !always_on) {
        res.sign_failed[r][u] = true;
        continue;
      }
      if (alpha == 0) continue;
      res.alphas[r][u] = alpha;
      for (int j = 0; j < es.n_coords; ++j) node.weights[size_t(u) * es.n_coords + j] *= alpha;
      if (node.has_bias) node.bias[u] *= alpha;
      compensate_incoming(next, es.out_shape, esegs[r + 1].learn_input_shape, u, alpha);
    }
  }
  res.model.finalize();
  return res;
}

std::vector<double> layer_weight_errors(const ModelGraph& victim, const ModelGraph& aligned) {
  std::vector<SegmentInfo> vsegs = analyze_segments(victim);
  std::vector<SegmentInfo> esegs = analyze_segments(aligned);
  const int n_relu = int(vsegs.size()) - 1;
  std::vector<double> errs(n_relu, 0.0);
  for (int r = 0; r < n_relu; ++r) {
    FusedLayer truth = fused_layer_params(victim, vsegs[r]);
    FusedLayer got = fused_layer_params(aligned, esegs[r]);
    double mx = 0;
    for (int u = 0; u < vsegs[r].n_units; ++u) {
      double norm2 = 0;
      for (double v : got.weights[u]) norm2 += v * v;
      if (norm2 == 0) continue;  // pinned / failed units carry no estimate
      for (int j = 0; j < vsegs[r].n_coords; ++j)
        mx = std::max(mx, std::abs(truth.weights[u][j] - got.weights[u][j]));
      mx = std::max(mx, std::abs(truth.bias[u] - got.bias[u]));
    }
    errs[r] = mx;
  }
  return errs;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset: " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != "SCREXDATA v1") throw std::runtime_error("dataset: bad magic");
  std::string header;
  std::getline(f, header);
  int64_t count = 0;
  int dim = 0;
  if (sscanf(header.c_str(), "count %ld dim %d", &count, &dim) != 2)
    throw std::runtime_error("dataset: bad header");
  Dataset d;
  d.x.resize(count);
  d.y.resize(count);
  for (int64_t i = 0; i < count; ++i) {
    d.x[i].resize(dim);
    f.read(reinterpret_cast<char*>(d.x[i].data()), std::streamsize(dim * 8));
    int32_t label = 0;
    f.read(reinterpret_cast<char*>(&label), 4);
    d.y[i] = label;
  }
  if (!f) throw std::runtime_error("dataset: truncated");
  return d;
}

void save_dataset(const Dataset& d, int dim, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  f << "SCREXDATA v1\n";
  f << "count " << d.x.size() << " dim " << dim << "\n";
  for (size_t i = 0; i < d.x.size(); ++i) {
    f.write(reinterpret_cast<const char*>(d.x[i].data()), std::streamsize(dim * 8));
    const int32_t label = d.y[i];
    f.write(reinterpret_cast<const char*>(&label), 4);
  }
}

namespace {

void softmax_inplace(std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0;
  for (double& x : v) {
    x = std::exp(x - mx);
    s += x;
  }
  for (double& x : v) x /= s;
}

}  // namespace

EvalResult evaluate(const ModelGraph& victim, const ModelGraph& aligned, const EvalOptions& opt,
                    const ModelGraph* hybrid) {
  EvalResult res;
  const int n_relu = int(victim.relu_nodes.size());
  const int classes = victim.out_shapes.back().count();
  const bool classifier = classes >= 2;
  const int dim = victim.input_shape.count();

  std::vector<double> eps = opt.eps_grid;
  if (eps.empty())
    for (int e = 0; e <= 48; e += 4) eps.push_back(std::ldexp(1.0, -e));

  const int n = opt.dataset ? int(opt.dataset->x.size()) : opt.samples;
  std::vector<uint8_t> agree(n, 0), hyb_agree(n, 0), acc_v(n, 0), acc_e(n, 0);
  std::vector<double> maxdiff(n, 0.0);
  std::vector<std::vector<double>> act_err(n, std::vector<double>(n_relu, 0.0));
  CounterRng rng(opt.seed, rng_stream::eval);

#pragma omp parallel for schedule(dynamic, 64)
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    if (opt.dataset) {
      x = opt.dataset->x[i];
    } else if (opt.sampler.kind == SamplerSpec::Kind::normal) {
      rng.fill_gaussian(x, uint64_t(i), 0);
    } else {
      rng.fill_uniform(x, opt.sampler.lo, opt.sampler.hi, uint64_t(i), 0);
    }
    quantize_inplace(x, victim.precision);
    ForwardRecord fv = forward(victim, x);
    ForwardRecord fe = forward(aligned, x);
    for (int r = 0; r < n_relu; ++r) {
      double s = 0;
      for (size_t j = 0; j < fv.act[r].size(); ++j) s += std::abs(fv.act[r][j] - fe.act[r][j]);
      act_err[i][r] = s / double(fv.act[r].size());
    }
    std::vector<double> ov = fv.output, oe = fe.output;
    if (opt.compare_softmax && classifier) {
      softmax_inplace(ov);
      softmax_inplace(oe);
    }
    double md = 0;
    for (size_t j = 0; j < ov.size(); ++j) md = std::max(md, std::abs(ov[j] - oe[j]));
    maxdiff[i] = md;
    if (classifier) {
      const int lv = argmax_lowest(fv.output);
      const int le = argmax_lowest(fe.output);
      agree[i] = lv == le;
      if (hybrid) hyb_agree[i] = argmax_lowest(forward_output(*hybrid, x)) == lv;
      if (opt.dataset) {
        acc_v[i] = lv == opt.dataset->y[i];
        acc_e[i] = le == opt.dataset->y[i];
      }
    }
  }

  res.mean_act_err.assign(n_relu, 0.0);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < n_relu; ++r) res.mean_act_err[r] += act_err[i][r];
  for (double& v : res.mean_act_err) v /= double(n);
  if (classifier) {
    int a = 0, h = 0, av = 0, ae = 0;
    for (int i = 0; i < n; ++i) {
      a += agree[i];
      h += hyb_agree[i];
      av += acc_v[i];
      ae += acc_e[i];
    }
    res.fidelity = double(a) / n;
    if (hybrid) res.hybrid_agreement = double(h) / n;
    if (opt.dataset) {
      res.accuracy_victim = double(av) / n;
      res.accuracy_extracted = double(ae) / n;
    }
  }
  for (double e : eps) {
    int over = 0;
    for (int i = 0; i < n; ++i)
      if (maxdiff[i] > e) ++over;
    res.eps_delta.emplace_back(e, double(over) / n);
  }
  return res;
}

ModelGraph make_hybrid(const ModelGraph& victim, const ModelGraph& aligned) {
  std::vector<SegmentInfo> vsegs = analyze_segments(victim);
  const SegmentInfo& head = vsegs.back();
  ModelGraph h;
  h.precision = Precision::binary64;
  h.input_shape = aligned.input_shape;
  const int last_relu = aligned.relu_nodes.back();
  for (int i = 0; i <= last_relu; ++i) h.layers.push_back(aligned.layers[i]);
  for (int i = head.first_node; i <= head.end_node; ++i) h.layers.push_back(victim.layers[i]);
  h.finalize();
  return h;
}

}  // namespace screx
