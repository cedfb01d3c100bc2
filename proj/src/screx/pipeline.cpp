#include "screx/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "screx/forward.hpp"
#include "screx/model_io.hpp"
#include "screx/sign_recovery.hpp"
#include "screx/rng.hpp"

namespace screx {

namespace {

LayerNode plain_node(LayerKind k) {
  LayerNode n;
  n.kind = k;
  return n;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ModelGraph graph_of_nodes(const TensorShape& in, std::vector<LayerNode> nodes) {
  ModelGraph g;
  g.precision = Precision::binary64;
  g.input_shape = in;
  g.layers = std::move(nodes);
  g.finalize();
  return g;
}

// Rank-1 factorization of a (rows x n) coefficient stack: direction (unit
// norm) plus per-row scales.  Used when a pass-through block is replicated
// across several output rows of a head fit.
std::pair<std::vector<double>, std::vector<double>> rank1(
    const std::vector<std::vector<double>>& rows) {
  const int r = int(rows.size()), n = int(rows[0].size());
  Eigen::MatrixXd M(r, n);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = rows[i][j];
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  std::vector<double> dir(n), gam(r);
  for (int j = 0; j < n; ++j) dir[j] = svd.matrixV()(j, 0);
  for (int i = 0; i < r; ++i) gam[i] = svd.matrixU()(i, 0) * svd.singularValues()(0);
  return {dir, gam};
}

// Per-unit working state across the three stages.
struct UnitWork {
  NeuronRef ref;
  std::unique_ptr<StateProbe> probe;
  PairStats stats;
  std::vector<CriticalPoint> points;
  uint32_t attempts = 0;

  bool constant = false;  // state never varied during the search
  StateLabel const_label = StateLabel::A_side;
  bool failed = false;
  std::string failure;

  bool solved = false;
  bool needs_block = false;  // signature deferred to a next-layer system
  SignatureEstimate sig;

  uint64_t calib_traces = 0;
  uint64_t search_traces = 0;
  uint64_t scan_traces = 0;  // abandoned probes from the position scan

  bool deferred() const { return !failed && (constant || needs_block); }
  bool usable_probe() const { return !failed && !constant; }
};

struct LayerWork {
  SegmentInfo seg;
  std::vector<UnitWork> units;
  int points_target = 0;
};

// How a next-layer probe can host pass-through blocks for special units of
// the previous layer.
enum class BlockRoute {
  dense,       // previous layer is dense: block coords = its input vector
  positioned,  // conv previous + 1x1 next: coords at the probe's position
  pooled,      // conv previous + pooled dense head: mean coords (always-on only)
  unsupported,
};

struct Candidate {
  int unit = -1;
  double res_a = 0, res_b = 0;
  JointSolution sol_a, sol_b;
  std::vector<int> specials;  // deferred units included as blocks (layer order)
  bool ok = false;
};

class Extractor {
 public:
  Extractor(const ModelGraph& victim, const PipelineConfig& cfg)
      : victim_(victim), cfg_(cfg), oracle_(victim, cfg.oracle) {
    arch_ = strip_weights(victim);
    segs_ = analyze_segments(arch_);
    n_relu_ = int(segs_.size()) - 1;
    if (n_relu_ < 1) throw std::invalid_argument("extract_model: no relu layers to attack");
    victim64_ = victim;
    victim64_.precision = Precision::binary64;
    victim64_.finalize();
    prefix_.precision = Precision::binary64;
    prefix_.input_shape = victim.input_shape;
    prefix_.finalize();
    report_.layers.resize(n_relu_);
    out_layers_.resize(n_relu_);
    work_.resize(n_relu_);
  }

  ExtractionOutcome run();

 private:
  void stage1(int k);
  void align_traces(int k);
  NeuronRef make_ref(int k, int unit) const;

  std::vector<double> quantized(std::span<const double> x) const;
  std::vector<double> layer_seg_input(std::span<const double> x, int k) const;
  std::vector<double> solve_coords(int k, std::span<const double> x, const NeuronRef& ref) const;

  void solve_layer(int k);
  bool try_solve_unit(int k, UnitWork& w);

  void finalize_layer(int k, LayerWork& next);
  std::vector<LayerNode> materialize_layer(int k, bool a_is_active,
                                           bool for_hypothesis = false) const;
  BlockRoute block_route(int prev_k, const SegmentInfo& probe_seg) const;
  bool probe_reads_unit(const SegmentInfo& probe_seg, int probe_unit, int prev_unit) const;
  std::vector<double> block_coords(int prev_k, BlockRoute route, int probe_row, int probe_col,
                                   int unit, std::span<const double> prev_learn_input) const;
  Candidate score_candidate(int k, LayerWork& next, int lambda_unit,
                            const std::vector<int>& deferred);
  void resolve_layer_kinds(int k, bool a_active);
  void recover_specials_mid(int k, const Candidate& best, bool a_active, LayerWork& next);
  void recover_always_on_unit(int k, UnitWork& w, std::span<const double> raw_block);
  void finish_layer(int k, bool a_active, double margin, bool tie);

  void finalize_last_and_fit_head();

  void tally_layer(int k);
  void write_checkpoint(int k) const;
  bool load_cache(int k, UnitWork& w) const;
  void store_cache(int k, const UnitWork& w) const;

  const ModelGraph& victim_;
  PipelineConfig cfg_;
  VictimOracle oracle_;
  ModelGraph arch_;
  ModelGraph victim64_;
  std::vector<SegmentInfo> segs_;
  int n_relu_ = 0;

  ModelGraph prefix_;
  std::vector<LayerWork> work_;
  std::vector<ExtractedLayer> out_layers_;
  HeadFit head_;
  ExtractionReport report_;
};

NeuronRef Extractor::make_ref(int k, int unit) const {
  NeuronRef r;
  r.relu_index = k;
  r.unit = unit;
  if (segs_[k].is_conv()) {
    r.row = segs_[k].target_row;
    r.col = segs_[k].target_col;
  }
  return r;
}

std::vector<double> Extractor::quantized(std::span<const double> x) const {
  std::vector<double> q(x.begin(), x.end());
  quantize_inplace(q, victim_.precision);
  return q;
}

// Segment input of relu layer k (the previous relu's activations) in
// binary64, through the extracted prefix or, in perfect-prefix mode, the
// victim's own layers.
std::vector<double> Extractor::layer_seg_input(std::span<const double> x, int k) const {
  std::vector<double> q = quantized(x);
  if (cfg_.modes.perfect_prefix) return activations_before(victim64_, q, k);
  if (k == 0) return q;
  return forward_output(prefix_, q);
}

std::vector<double> Extractor::solve_coords(int k, std::span<const double> x,
                                            const NeuronRef& ref) const {
  std::vector<double> si = layer_seg_input(x, k);
  std::vector<double> li = apply_fixed_ops(segs_[k], si);
  if (segs_[k].is_conv()) return unit_coords_at(segs_[k], li, ref.unit, ref.row, ref.col);
  return unit_coords(segs_[k], li, ref.unit);
}

// Output positions tried for a convolutional unit, center first.  The
// kernel is shared across positions, so any position whose state varies
// under the sampler identifies the channel's hyperplane; a channel that
// never switches at the center may still switch elsewhere.
std::vector<std::pair<int, int>> position_candidates(const SegmentInfo& seg) {
  if (!seg.is_conv()) return {{-1, -1}};
  const int h = seg.out_shape.dims[1], w = seg.out_shape.dims[2];
  std::vector<std::pair<int, int>> out;
  auto add = [&](int r, int c) {
    for (auto& p : out)
      if (p.first == r && p.second == c) return;
    out.emplace_back(r, c);
  };
  add(h / 2, w / 2);
  add(h / 4, w / 4);
  add(3 * h / 4, w / 4);
  add(h / 4, 3 * w / 4);
  add(3 * h / 4, 3 * w / 4);
  add(0, 0);
  add(h - 1, w - 1);
  return out;
}

void Extractor::stage1(int k) {
  LayerWork& lw = work_[k];
  lw.seg = segs_[k];
  lw.points_target = cfg_.search.points_for(lw.seg.n_coords);
  const int n_units = lw.seg.n_units;
  lw.units.resize(n_units);
  const int dim = victim_.input_shape.count();
  const bool ideal = cfg_.oracle.ideal_state_mode;
  const std::vector<std::pair<int, int>> positions = position_candidates(lw.seg);

#pragma omp parallel for schedule(dynamic)
  for (int u = 0; u < n_units; ++u) {
    UnitWork& w = lw.units[u];
    w.ref = make_ref(k, u);
    if (load_cache(k, w)) {
      w.probe = std::make_unique<StateProbe>(oracle_, w.ref, cfg_.modes.flip_labels);
      if (!ideal && !w.probe->calibrate(cfg_.search, w.stats)) {
        w.points.clear();
        w.constant = true;
      }
      w.calib_traces = w.probe->traces_used();
      continue;
    }
    for (size_t pi = 0; pi < positions.size(); ++pi) {
      NeuronRef ref = w.ref;
      ref.row = positions[pi].first;
      ref.col = positions[pi].second;
      auto probe = std::make_unique<StateProbe>(oracle_, ref, cfg_.modes.flip_labels);
      PairStats stats;
      uint64_t calib = 0;
      bool keep = false;
      if (!ideal) {
        // calibration doubles as the variability check at this position
        const bool usable = probe->calibrate(cfg_.search, stats);
        calib = probe->traces_used();
        if (!usable) {
          if (pi == 0) {  // remember the canonical position as constant
            w.ref = ref;
            w.probe = std::move(probe);
            w.stats = stats;
            w.calib_traces = calib;
            w.constant = true;
            continue;
          }
          w.scan_traces += probe->traces_used();
          continue;
        }
      } else if (pi > 0) {
        // cheap two-sided check before committing to an alternate position
        bool seen_a = false, seen_b = false;
        uint32_t quick = 0xFFE00000u;
        for (int i = 0; i < 64 && !(seen_a && seen_b); ++i) {
          std::vector<double> x = draw_input(cfg_.search, dim, ref.uid(), quick++);
          (probe->state(x) == StateLabel::A_side ? seen_a : seen_b) = true;
        }
        if (!(seen_a && seen_b)) {
          w.scan_traces += probe->traces_used();
          continue;
        }
      }
      try {
        uint32_t attempts = pi == 0 ? w.attempts : uint32_t(0x100000u * pi);
        std::vector<CriticalPoint> pts = collect_critical_points(
            *probe, cfg_.search, dim, lw.points_target, attempts, stats);
        if (w.probe) w.scan_traces += w.probe->traces_used();
        w.ref = ref;
        w.probe = std::move(probe);
        w.points = std::move(pts);
        w.stats = stats;
        w.attempts = attempts;
        w.calib_traces = calib;
        w.constant = false;
        store_cache(k, w);
        keep = true;
      } catch (const PairNotFound& e) {
        if (pi == 0) {
          w.ref = ref;
          w.probe = std::move(probe);
          w.stats = stats;
          w.calib_traces = calib;
          w.constant = true;
          w.const_label = e.label_a_fraction >= 0.5 ? StateLabel::A_side : StateLabel::B_side;
        } else {
          w.scan_traces += probe->traces_used();
        }
      } catch (const std::exception& e) {
        if (w.probe) w.scan_traces += w.probe->traces_used();
        w.ref = ref;
        w.probe = std::move(probe);
        w.failed = true;
        w.failure = e.what();
        keep = true;
      }
      if (keep) break;
    }
    if (!w.probe) {
      w.probe = std::make_unique<StateProbe>(oracle_, w.ref, cfg_.modes.flip_labels);
      w.constant = true;
    }
    w.search_traces = w.probe->traces_used() - w.calib_traces;
  }
  if (!ideal) align_traces(k);
}

// Swaps per-neuron cluster labels so that the A side means the same mask
// value across the layer, and side-matches constant units to the reference.
void Extractor::align_traces(int k) {
  LayerWork& lw = work_[k];
  std::vector<ClusterModel> models;
  std::vector<int> idx;
  for (int u = 0; u < int(lw.units.size()); ++u) {
    const UnitWork& w = lw.units[u];
    if (!w.failed && w.probe->cluster_model()) {
      models.push_back(*w.probe->cluster_model());
      idx.push_back(u);
    }
  }
  if (models.empty()) return;
  std::vector<bool> swaps = align_layer(models);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (!swaps[i]) continue;
    UnitWork& w = lw.units[idx[i]];
    w.probe->set_swap(true);
    w.stats.label_a = w.stats.samples - w.stats.label_a;
    for (StateLabel& s : w.stats.kept_labels) s = flip(s);
    for (CriticalPoint& p : w.points) {
      p.state_x = flip(p.state_x);
      p.state_y = flip(p.state_y);
    }
    if (w.constant) w.const_label = flip(w.const_label);
  }
  // constant units whose traces never split: match the mean trace against
  // the aligned reference centroids
  const ClusterModel& ref = models[0];
  for (UnitWork& w : lw.units) {
    if (!w.constant || w.probe->cluster_model() || w.probe->mean_trace().empty()) continue;
    StateLabel s = nearest_side(w.probe->mean_trace(), ref);
    if (cfg_.modes.flip_labels) s = flip(s);
    w.const_label = s;
    w.stats.label_a = s == StateLabel::A_side ? w.stats.samples : 0;
  }
}

bool Extractor::try_solve_unit(int k, UnitWork& w) {
  const int dim = victim_.input_shape.count();
  const int target = work_[k].points_target;
  // escalation ladder for ill-conditioned systems: sparse relu coordinates
  // can need many times the baseline point count before every column is
  // represented
  const int ladder[] = {1, 2, 4, 10};
  for (int round = 0; round < 4; ++round) {
    const int want = ladder[round] * target;
    if (int(w.points.size()) < want) {
      try {
        std::vector<CriticalPoint> extra = collect_critical_points(
            *w.probe, cfg_.search, dim, want - int(w.points.size()), w.attempts, w.stats);
        for (auto& p : extra) w.points.push_back(std::move(p));
      } catch (const std::exception&) {
        break;
      }
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(w.points.size());
    for (const CriticalPoint& p : w.points) rows.push_back(solve_coords(k, p.x, w.ref));
    try {
      SignatureEstimate sig = solve_signature(rows);
      const CriticalPoint& p0 = w.points.front();
      std::vector<double> far = solve_coords(k, p0.x_far, w.ref);
      StateLabel lab = p0.state_x;
      if (std::abs(sig.bias + dot(sig.weights, far)) < 1e-12) {
        far = solve_coords(k, p0.y_far, w.ref);
        lab = p0.state_y;
      }
      orient_signature(sig, far, lab);
      sig.kind = sig.dead_coords.empty() ? NeuronKind::normal : NeuronKind::input_off;
      w.sig = std::move(sig);
      w.solved = true;
      // dead coordinates mean the critical points never reached part of the
      // input: keep the partial row but ask the next layer for the rest
      w.needs_block = !w.sig.dead_coords.empty();
      return true;
    } catch (const RankDeficient&) {
      continue;
    } catch (const TooFewPoints&) {
      break;
    }
  }
  w.needs_block = true;
  return false;
}

void Extractor::solve_layer(int k) {
  LayerWork& lw = work_[k];
#pragma omp parallel for schedule(dynamic)
  for (int u = 0; u < int(lw.units.size()); ++u) {
    UnitWork& w = lw.units[u];
    if (w.failed || w.constant) continue;
    try_solve_unit(k, w);
  }
}

// Fixed ops, one fused learnable node carrying every solved unit, and the
// relu.  Units still pending (deferred specials, failures) stay zero.
// Always-on units keep their own sign: their state never flips, so the
// layer-wide mapping does not apply to them.
std::vector<LayerNode> Extractor::materialize_layer(int k, bool a_is_active,
                                                    bool for_hypothesis) const {
  const LayerWork& lw = work_[k];
  const SegmentInfo& seg = lw.seg;
  std::vector<LayerNode> nodes;
  for (LayerKind fk : seg.fixed_ops) nodes.push_back(plain_node(fk));

  LayerNode L;
  L.kind = seg.learn_kind;
  L.out_units = seg.n_units;
  L.kernel = seg.kernel;
  L.stride = seg.stride;
  L.pad = seg.pad;
  L.has_bias = true;
  L.weights.assign(size_t(seg.n_units) * seg.n_coords, 0.0);
  L.bias.assign(seg.n_units, 0.0);
  const double f = a_is_active ? 1.0 : -1.0;
  for (int u = 0; u < seg.n_units; ++u) {
    const UnitWork& w = lw.units[u];
    if (!w.solved) continue;
    if (for_hypothesis && w.needs_block) continue;  // handled via pass-through blocks
    const double g = w.sig.kind == NeuronKind::always_on ? 1.0 : f;
    for (int j = 0; j < seg.n_coords; ++j)
      L.weights[size_t(u) * seg.n_coords + j] = g * w.sig.weights[j];
    L.bias[u] = g * w.sig.bias;
  }
  nodes.push_back(std::move(L));
  nodes.push_back(plain_node(LayerKind::relu));
  return nodes;
}

BlockRoute Extractor::block_route(int prev_k, const SegmentInfo& probe_seg) const {
  const SegmentInfo& prev = segs_[prev_k];
  if (!prev.is_conv()) return BlockRoute::dense;
  if (probe_seg.learn_kind == LayerKind::conv2d && probe_seg.kernel == 1 &&
      probe_seg.stride == 1 && probe_seg.pad == 0)
    return BlockRoute::positioned;
  bool pooled = false;
  for (LayerKind fk : probe_seg.fixed_ops)
    if (fk == LayerKind::avgpool) pooled = true;
  if (probe_seg.learn_kind == LayerKind::dense && pooled) return BlockRoute::pooled;
  return BlockRoute::unsupported;
}

bool Extractor::probe_reads_unit(const SegmentInfo& probe_seg, int probe_unit,
                                 int prev_unit) const {
  if (probe_seg.learn_kind == LayerKind::depthwise_conv2d) return probe_unit == prev_unit;
  return true;
}

std::vector<double> Extractor::block_coords(int prev_k, BlockRoute route, int probe_row,
                                            int probe_col, int unit,
                                            std::span<const double> prev_learn_input) const {
  const SegmentInfo& prev = segs_[prev_k];
  switch (route) {
    case BlockRoute::dense:
      return std::vector<double>(prev_learn_input.begin(), prev_learn_input.end());
    case BlockRoute::positioned:
      return unit_coords_at(prev, prev_learn_input, unit, probe_row, probe_col);
    case BlockRoute::pooled: {
      // mean of the unit's receptive-field patches over its output map; valid
      // only when the unit's relu acts as the identity everywhere (always-on)
      const int oh = prev.out_shape.dims[1], ow = prev.out_shape.dims[2];
      std::vector<double> acc(prev.n_coords, 0.0);
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          std::vector<double> p = unit_coords_at(prev, prev_learn_input, unit, r, c);
          for (int j = 0; j < prev.n_coords; ++j) acc[j] += p[j];
        }
      for (double& v : acc) v /= double(oh * ow);
      return acc;
    }
    case BlockRoute::unsupported: break;
  }
  throw std::logic_error("block_coords: unsupported route");
}

// Builds and solves the probe system for unit `lambda_unit` of the next
// layer under both mappings of layer k.
Candidate Extractor::score_candidate(int k, LayerWork& next, int lambda_unit,
                                     const std::vector<int>& deferred) {
  LayerWork& lw = work_[k];
  const SegmentInfo& pseg = next.seg;
  UnitWork& lam = next.units[lambda_unit];
  Candidate cand;
  cand.unit = lambda_unit;

  const BlockRoute route = block_route(k, pseg);
  std::vector<int> included;  // deferred units that can and must enter as blocks
  for (int u : deferred) {
    if (!probe_reads_unit(pseg, lambda_unit, u)) continue;
    if (route == BlockRoute::unsupported) return cand;  // system incomplete
    included.push_back(u);
  }
  cand.specials = included;

  // make sure the probe is overdetermined even with every block included
  int unknowns = pseg.n_coords + 1 + int(included.size()) * (segs_[k].n_coords + 1);
  const int want = unknowns + 4;
  if (int(lam.points.size()) < want) {
    try {
      std::vector<CriticalPoint> extra =
          collect_critical_points(*lam.probe, cfg_.search, victim_.input_shape.count(),
                                  want - int(lam.points.size()), lam.attempts, lam.stats);
      for (auto& p : extra) lam.points.push_back(std::move(p));
    } catch (const std::exception&) {
      return cand;
    }
  }

  // per-point states of varying specials, measured once through their own
  // probes (these are recovery queries, not sign-stage queries)
  std::vector<std::vector<StateLabel>> var_states(included.size());
  for (size_t s = 0; s < included.size(); ++s) {
    UnitWork& eta = lw.units[included[s]];
    if (eta.constant) continue;
    var_states[s].reserve(lam.points.size());
    for (const CriticalPoint& p : lam.points) var_states[s].push_back(eta.probe->state(p.x));
  }

  // hypothesis-independent per-point data
  const size_t z = lam.points.size();
  std::vector<std::vector<double>> seg_in(z), prev_learn(z);
  for (size_t i = 0; i < z; ++i) {
    seg_in[i] = layer_seg_input(lam.points[i].x, k);
    prev_learn[i] = apply_fixed_ops(segs_[k], seg_in[i]);
  }

  const uint64_t before = oracle_.counters().total();
  for (int h = 0; h < 2; ++h) {
    const bool a_active = h == 0;
    ModelGraph temp = graph_of_nodes(segs_[k].seg_input_shape,
                                     materialize_layer(k, a_active, /*for_hypothesis=*/true));
    JointSystem sys;
    sys.normal_acts.reserve(z);
    for (size_t i = 0; i < z; ++i) {
      std::vector<double> acts = forward_output(temp, seg_in[i]);
      std::vector<double> li = apply_fixed_ops(pseg, acts);
      sys.normal_acts.push_back(pseg.is_conv()
                                    ? unit_coords_at(pseg, li, lambda_unit, lam.ref.row,
                                                     lam.ref.col)
                                    : unit_coords(pseg, li, lambda_unit));
    }
    for (size_t s = 0; s < included.size(); ++s) {
      const UnitWork& eta = lw.units[included[s]];
      JointSystem::Special sp;
      sp.unit = included[s];
      if (eta.constant) {
        const bool on = (eta.const_label == StateLabel::A_side) == a_active;
        if (!on) continue;  // inactive under this mapping: contributes nothing
        sp.varying = false;
        sp.active.assign(z, 1);
      } else {
        sp.varying = true;
        sp.active.resize(z);
        const StateLabel active_label = a_active ? StateLabel::A_side : StateLabel::B_side;
        for (size_t i = 0; i < z; ++i) sp.active[i] = var_states[s][i] == active_label ? 1 : 0;
      }
      sp.coords.reserve(z);
      for (size_t i = 0; i < z; ++i)
        sp.coords.push_back(block_coords(k, route, lam.ref.row, lam.ref.col, sp.unit, prev_learn[i]));
      sys.specials.push_back(std::move(sp));
    }
    double res;
    JointSolution sol;
    try {
      sol = solve_joint(sys);
      res = sol.residual;
    } catch (const std::exception&) {
      res = std::numeric_limits<double>::infinity();
    }
    // map solution blocks back to the deferred unit list (skipped specials
    // keep empty blocks)
    JointSolution full;
    full.residual = res;
    full.cond_ratio = sol.cond_ratio;
    full.blocks.resize(included.size());
    full.block_bias.assign(included.size(), kNan);
    size_t si = 0;
    for (size_t s = 0; s < included.size(); ++s) {
      const UnitWork& eta = lw.units[included[s]];
      const bool present =
          !eta.constant || ((eta.const_label == StateLabel::A_side) == a_active);
      if (present && si < sol.blocks.size()) {
        full.blocks[s] = sol.blocks[si];
        full.block_bias[s] = sol.block_bias[si];
        ++si;
      }
    }
    if (a_active) {
      cand.res_a = res;
      cand.sol_a = std::move(full);
    } else {
      cand.res_b = res;
      cand.sol_b = std::move(full);
    }
  }
  // scoring both mappings must not touch the oracle
  report_.layers[k].sign_stage_traces += oracle_.counters().total() - before;
  cand.ok = std::isfinite(cand.res_a) || std::isfinite(cand.res_b);
  return cand;
}

void Extractor::recover_always_on_unit(int k, UnitWork& w, std::span<const double> raw_block) {
  w.sig = signature_from_block(raw_block, kNan, NeuronKind::always_on);
  // bias: a rare opposite-state sample lets us bisect to a real critical
  // point; otherwise pick a margin bias that keeps the unit active over the
  // sampled distribution (downstream fits absorb the offset)
  std::vector<double> vals;
  vals.reserve(w.stats.kept_inputs.size());
  int opp = -1;
  for (size_t i = 0; i < w.stats.kept_inputs.size(); ++i)
    if (w.stats.kept_labels[i] != w.const_label && opp < 0) opp = int(i);
  for (const auto& x : w.stats.kept_inputs)
    vals.push_back(dot(w.sig.weights, solve_coords(k, x, w.ref)));
  double mean = 0;
  for (double v : vals) mean += v;
  mean /= std::max<size_t>(1, vals.size());
  if (mean < 0) {  // canonical orientation: positive on the active samples
    for (double& v : w.sig.weights) v = -v;
    for (double& v : vals) v = -v;
  }
  if (opp >= 0) {
    StatePair pair;
    pair.y = w.stats.kept_inputs[opp];
    pair.state_y = w.stats.kept_labels[opp];
    int same = opp == 0 ? 1 : 0;
    pair.x = w.stats.kept_inputs[same];
    pair.state_x = w.stats.kept_labels[same];
    try {
      const double gap0 = 1.0;
      CriticalPoint cp = bisect_critical(*w.probe, pair,
                                         cfg_.search.delta_for(victim_.precision, gap0),
                                         victim_.precision, w.probe->noisy());
      std::vector<double> c = solve_coords(k, cp.x, w.ref);
      double b = recover_bias(w.sig.weights, c);
      int positive = 0;
      for (double v : vals)
        if (v + b > 0) ++positive;
      if (2 * positive < int(vals.size())) {
        for (double& v : w.sig.weights) v = -v;
        b = -b;
      }
      w.sig.bias = b;
      w.solved = true;
      return;
    } catch (const std::exception&) {
      // fall through to the margin bias
    }
  }
  double lo = vals.empty() ? 0.0 : *std::min_element(vals.begin(), vals.end());
  double var = 0;
  for (double v : vals) var += (v - mean) * (v - mean);
  const double sd = vals.empty() ? 1.0 : std::sqrt(var / std::max<size_t>(1, vals.size()));
  w.sig.bias = -lo + 3.0 * sd + 1e-6;
  w.solved = true;
}

void Extractor::recover_specials_mid(int k, const Candidate& best, bool a_active,
                                     LayerWork& next) {
  LayerWork& lw = work_[k];
  const JointSolution& sol = a_active ? best.sol_a : best.sol_b;
  for (size_t s = 0; s < best.specials.size(); ++s) {
    UnitWork& w = lw.units[best.specials[s]];
    if (w.constant) {
      const bool on = (w.const_label == StateLabel::A_side) == a_active;
      if (!on) {
        w.sig = SignatureEstimate{};
        w.sig.weights.assign(segs_[k].n_coords, 0.0);
        w.sig.kind = NeuronKind::always_off;
        w.solved = true;
        continue;
      }
      if (sol.blocks[s].empty()) {
        w.failed = true;
        w.failure = "always-on block missing from probe system";
        continue;
      }
      double n2 = 0;
      for (double v : sol.blocks[s]) n2 += v * v;
      if (n2 < 1e-18) {
        w.failed = true;
        w.failure = "always-on block vanished (probe insensitive)";
        continue;
      }
      try {
        recover_always_on_unit(k, w, sol.blocks[s]);
        w.needs_block = false;
      } catch (const std::exception& e) {
        w.failed = true;
        w.failure = e.what();
      }
    } else {
      // varying states: the gated block carries both weights and bias
      if (sol.blocks[s].empty()) {
        if (!w.solved) {
          w.failed = true;
          w.failure = "pass-through block missing from probe system";
        }
        continue;
      }
      try {
        SignatureEstimate sig =
            signature_from_block(sol.blocks[s], sol.block_bias[s], NeuronKind::input_off);
        const CriticalPoint& p0 = w.points.front();
        std::vector<double> far = solve_coords(k, p0.x_far, w.ref);
        orient_signature(sig, far, p0.state_x);
        sig.kind = NeuronKind::input_off;
        sig.residual = w.solved ? w.sig.residual : sig.residual;
        w.sig = std::move(sig);
        w.solved = true;
        w.needs_block = false;
      } catch (const std::exception& e) {
        if (!w.solved) {
          w.failed = true;
          w.failure = e.what();
        }
      }
    }
  }
  (void)next;
}

void Extractor::resolve_layer_kinds(int k, bool a_active) {
  for (UnitWork& w : work_[k].units) {
    if (w.constant && !w.solved && !w.failed) {
      // no probe system could host the block: pin to zero and record
      const bool on = (w.const_label == StateLabel::A_side) == a_active;
      w.sig = SignatureEstimate{};
      w.sig.weights.assign(segs_[k].n_coords, 0.0);
      w.sig.kind = on ? NeuronKind::always_on : NeuronKind::always_off;
      if (on) {
        w.failed = true;
        w.failure = "always-on unit without a supporting probe";
      }
      w.solved = !on;
    }
    if (w.needs_block && !w.failed) {
      if (w.solved) {
        w.failure = "partial row: dead coordinates not recoverable here";
      } else {
        w.failed = true;
        w.failure = "rank-deficient system without a supporting probe";
      }
    }
  }
}

void Extractor::finish_layer(int k, bool a_active, double margin, bool tie) {
  resolve_layer_kinds(k, a_active);
  std::vector<LayerNode> nodes = materialize_layer(k, a_active);
  for (auto& n : nodes) prefix_.layers.push_back(std::move(n));
  prefix_.finalize();

  ExtractedLayer& out = out_layers_[k];
  out.relu_index = k;
  out.a_is_active = a_active;
  out.sign_margin_log10 = margin;
  out.sign_tie = tie;
  out.units.clear();
  for (UnitWork& w : work_[k].units) {
    ExtractedNeuron n;
    n.ref = w.ref;
    n.sig = w.sig;
    n.kind = w.solved || w.constant ? w.sig.kind : NeuronKind::normal;
    const double af = w.stats.a_fraction();
    n.active_fraction = a_active ? af : 1.0 - af;
    n.failed = w.failed;
    n.failure = w.failure;
    out.units.push_back(std::move(n));
  }
  tally_layer(k);
  write_checkpoint(k);
  for (UnitWork& w : work_[k].units) {
    w.points.clear();
    w.points.shrink_to_fit();
  }
}

void Extractor::finalize_layer(int k, LayerWork& next) {
  LayerWork& lw = work_[k];
  std::vector<int> deferred;
  for (int u = 0; u < int(lw.units.size()); ++u)
    if (lw.units[u].deferred()) deferred.push_back(u);

  // candidate probes: normal next-layer units with points, in unit order
  std::vector<Candidate> cands;
  for (int u = 0; u < int(next.units.size()) && int(cands.size()) < 3; ++u) {
    UnitWork& lam = next.units[u];
    if (!lam.usable_probe() || lam.points.empty()) continue;
    Candidate c = score_candidate(k, next, u, deferred);
    if (c.ok) cands.push_back(std::move(c));
    if (!cands.empty() && deferred.empty() &&
        std::abs(std::log10(cands[0].res_b / cands[0].res_a)) >= 1.0)
      break;  // decisive first probe
  }
  if (cands.empty()) {
    // no usable probe: keep the default mapping, flag the layer
    finish_layer(k, true, kNan, true);
    return;
  }

  std::vector<ProbeResiduals> residuals;
  for (const Candidate& c : cands) residuals.push_back({c.res_a, c.res_b});
  const SignDecision dec = select_sign(residuals);
  const bool a_active = dec.a_is_active;
  const double margin = dec.margin_log10;
  const bool tie = dec.tie;

  // recovery from the candidate hosting the most pass-through blocks
  if (!deferred.empty()) {
    const Candidate* best = nullptr;
    for (const Candidate& c : cands)
      if (!best || c.specials.size() > best->specials.size()) best = &c;
    if (best && !best->specials.empty()) recover_specials_mid(k, *best, a_active, next);
  }
  finish_layer(k, a_active, margin, tie);
}

std::vector<std::vector<double>> head_features_of(const SegmentInfo& head_seg,
                                                  const std::vector<std::vector<double>>& acts) {
  std::vector<std::vector<double>> feats;
  feats.reserve(acts.size());
  for (const auto& a : acts) feats.push_back(apply_fixed_ops(head_seg, a));
  return feats;
}

void Extractor::finalize_last_and_fit_head() {
  const int k = n_relu_ - 1;
  LayerWork& lw = work_[k];
  const SegmentInfo& head_seg = segs_.back();
  const bool classifier = head_seg.out_shape.count() >= 2 &&
                          cfg_.oracle.output_mode == OutputMode::hard_label;

  // input pool: stage-1 samples first, fresh sampler draws after
  int n = cfg_.last_layer_samples;
  if (n <= 0) n = classifier ? 4096 : std::max(256, 8 * (head_seg.n_coords + 1));
  std::vector<std::vector<double>> pool;
  pool.reserve(n);
  for (const UnitWork& w : work_[0].units) {
    for (const auto& x : w.stats.kept_inputs) {
      if (int(pool.size()) >= n) break;
      pool.push_back(x);
    }
    if (int(pool.size()) >= n) break;
  }
  CounterRng rng(cfg_.search.attack_seed, rng_stream::head);
  const int dim = victim_.input_shape.count();
  for (uint64_t i = 0; int(pool.size()) < n; ++i) {
    std::vector<double> x(dim);
    if (cfg_.search.sampler.kind == SamplerSpec::Kind::normal)
      rng.fill_gaussian(x, i, 0);
    else
      rng.fill_uniform(x, cfg_.search.sampler.lo, cfg_.search.sampler.hi, i, 0);
    pool.push_back(std::move(x));
  }

  // one batch of oracle answers, shared by every fit below
  std::vector<std::vector<double>> head_outputs;
  std::vector<int> head_labels;
  if (cfg_.oracle.output_mode == OutputMode::confidence) {
    head_outputs.reserve(n);
    for (const auto& x : pool) head_outputs.push_back(oracle_.query_output(x));
    report_.head_output_queries = n;
  } else {
    head_labels.reserve(n);
    for (const auto& x : pool) head_labels.push_back(oracle_.query_label(x));
    report_.head_label_queries = n;
  }

  std::vector<int> deferred;
  for (int u = 0; u < int(lw.units.size()); ++u)
    if (lw.units[u].deferred()) deferred.push_back(u);
  const BlockRoute route = block_route(k, head_seg);

  // per-pool-point segment inputs (mapping-independent)
  std::vector<std::vector<double>> seg_in(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) seg_in[i] = layer_seg_input(pool[i], k);

  // states of varying deferred units over the pool (recovery queries)
  std::vector<std::vector<StateLabel>> var_states(deferred.size());
  for (size_t s = 0; s < deferred.size(); ++s) {
    UnitWork& eta = lw.units[deferred[s]];
    if (eta.constant) continue;
    var_states[s].reserve(pool.size());
    for (const auto& x : pool) var_states[s].push_back(eta.probe->state(x));
  }

  // score both mappings with plain head fits (deferred units stay zero)
  const uint64_t before = oracle_.counters().total();
  double loss[2];
  std::vector<std::vector<std::vector<double>>> feats_h(2);
  for (int h = 0; h < 2; ++h) {
    const bool a_active = h == 0;
    ModelGraph temp = graph_of_nodes(segs_[k].seg_input_shape,
                                     materialize_layer(k, a_active, /*for_hypothesis=*/true));
    std::vector<std::vector<double>> acts(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) acts[i] = forward_output(temp, seg_in[i]);
    feats_h[h] = head_features_of(head_seg, acts);
    if (cfg_.oracle.output_mode == OutputMode::confidence)
      loss[h] = fit_head_ols(feats_h[h], head_outputs).loss;
    else
      loss[h] = fit_head_logistic(feats_h[h], head_labels, head_seg.out_shape.count(),
                                  cfg_.hypothesis_fit_iters)
                    .loss;
  }
  report_.layers[k].sign_stage_traces += oracle_.counters().total() - before;
  const ProbeResiduals head_res{loss[0], loss[1]};
  const SignDecision dec = select_sign(std::span<const ProbeResiduals>(&head_res, 1),
                                       /*decisive_margin=*/0.0);
  const bool a_active = dec.a_is_active;
  const double margin = dec.margin_log10;

  // recover deferred units of the last layer through an augmented head fit
  if (!deferred.empty() && route != BlockRoute::unsupported) {
    std::vector<std::vector<double>> prev_learn(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
      prev_learn[i] = apply_fixed_ops(segs_[k], seg_in[i]);
    const auto& base = feats_h[a_active ? 0 : 1];
    std::vector<std::vector<double>> aug = base;
    struct BlockCols {
      int unit;
      int offset;
      int width;
      bool varying;
    };
    std::vector<BlockCols> layout;
    int off = int(base[0].size());
    for (size_t s = 0; s < deferred.size(); ++s) {
      UnitWork& eta = lw.units[deferred[s]];
      const bool on_const =
          eta.constant && ((eta.const_label == StateLabel::A_side) == a_active);
      if (eta.constant && !on_const) continue;             // always-off: nothing to do
      if (!eta.constant && route == BlockRoute::pooled) continue;  // not affine
      BlockCols bc{deferred[s], off, segs_[k].n_coords, !eta.constant};
      const StateLabel active_label = a_active ? StateLabel::A_side : StateLabel::B_side;
      for (size_t i = 0; i < pool.size(); ++i) {
        const bool gate = eta.constant || var_states[s][i] == active_label;
        std::vector<double> c =
            gate ? block_coords(k, route, -1, -1, bc.unit, prev_learn[i])
                 : std::vector<double>(segs_[k].n_coords, 0.0);
        for (double v : c) aug[i].push_back(v);
        if (bc.varying) aug[i].push_back(gate ? 1.0 : 0.0);
      }
      off += bc.width + (bc.varying ? 1 : 0);
      layout.push_back(bc);
    }
    if (!layout.empty()) {
      HeadFit fit = cfg_.oracle.output_mode == OutputMode::confidence
                        ? fit_head_ols(aug, head_outputs)
                        : fit_head_logistic(aug, head_labels, head_seg.out_shape.count(),
                                            cfg_.head_fit_iters);
      const int f_in = fit.in;
      for (const BlockCols& bc : layout) {
        UnitWork& w = lw.units[bc.unit];
        std::vector<std::vector<double>> rows(fit.out);
        std::vector<double> gates(fit.out, 0.0);
        for (int o = 0; o < fit.out; ++o) {
          rows[o].resize(bc.width);
          for (int j = 0; j < bc.width; ++j) rows[o][j] = fit.weights[size_t(o) * f_in + bc.offset + j];
          if (bc.varying) gates[o] = fit.weights[size_t(o) * f_in + bc.offset + bc.width];
        }
        auto [dir, gam] = rank1(rows);
        double gn = 0, gb = 0;
        for (int o = 0; o < fit.out; ++o) {
          gn += gam[o] * gam[o];
          gb += gam[o] * gates[o];
        }
        try {
          if (bc.varying) {
            w.sig = signature_from_block(dir, gn > 0 ? gb / gn : kNan, NeuronKind::input_off);
            const CriticalPoint& p0 = w.points.front();
            std::vector<double> far = solve_coords(k, p0.x_far, w.ref);
            orient_signature(w.sig, far, p0.state_x);
            w.sig.kind = NeuronKind::input_off;
            w.solved = true;
          } else {
            recover_always_on_unit(k, w, dir);
          }
        } catch (const std::exception& e) {
          w.failed = true;
          w.failure = e.what();
        }
      }
    }
  }
  finish_layer(k, a_active, margin, dec.tie);

  // final head fit over the completed prefix
  std::vector<std::vector<double>> acts(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) acts[i] = forward_output(prefix_, quantized(pool[i]));
  std::vector<std::vector<double>> feats = head_features_of(head_seg, acts);
  head_ = cfg_.oracle.output_mode == OutputMode::confidence
              ? fit_head_ols(feats, head_outputs)
              : fit_head_logistic(feats, head_labels, head_seg.out_shape.count(),
                                  cfg_.head_fit_iters);
}

void Extractor::tally_layer(int k) {
  LayerReport& lr = report_.layers[k];
  lr.relu_index = k;
  lr.n_units = segs_[k].n_units;
  lr.conv = segs_[k].is_conv();
  for (const UnitWork& w : work_[k].units) {
    const uint64_t total = w.probe->traces_used() + w.scan_traces;
    lr.calibration_traces += w.calib_traces;
    lr.search_traces += w.search_traces + w.scan_traces;
    lr.special_traces += total - w.calib_traces - w.search_traces - w.scan_traces;
    if (w.failed) {
      ++lr.failed_units;
      lr.failed_traces += total;
    } else {
      ++lr.kind_census[int(w.sig.kind)];
      lr.traces_by_kind[int(w.sig.kind)] += total;
    }
    if (w.solved) lr.max_residual = std::max(lr.max_residual, w.sig.residual);
  }
  lr.sign_margin_log10 = out_layers_[k].sign_margin_log10;
  lr.sign_tie = out_layers_[k].sign_tie;
}

void Extractor::write_checkpoint(int k) const {
  if (cfg_.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg_.checkpoint_dir);
  save_model(prefix_, cfg_.checkpoint_dir + "/prefix_after_L" + std::to_string(k) + ".model");
}

namespace {
constexpr uint64_t kCacheMagic = 0x53435258435031ULL;  // "SCRXCP1"
}

bool Extractor::load_cache(int k, UnitWork& w) const {
  if (cfg_.cache_dir.empty()) return false;
  const std::string path =
      cfg_.cache_dir + "/cp_L" + std::to_string(k) + "_u" + std::to_string(w.ref.unit) + ".bin";
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  auto rd = [&](auto& v) { f.read(reinterpret_cast<char*>(&v), sizeof(v)); };
  auto rdvec = [&](std::vector<double>& v, size_t d) {
    v.resize(d);
    f.read(reinterpret_cast<char*>(v.data()), std::streamsize(d * 8));
  };
  uint64_t magic = 0;
  int32_t dim = 0, row = -1, col = -1;
  rd(magic);
  rd(dim);
  rd(row);
  rd(col);
  if (magic != kCacheMagic || dim != victim_.input_shape.count()) return false;
  w.ref.row = row;
  w.ref.col = col;
  rd(w.stats.samples);
  rd(w.stats.label_a);
  uint32_t n_kept = 0, n_points = 0;
  rd(n_kept);
  for (uint32_t i = 0; i < n_kept; ++i) {
    std::vector<double> x;
    rdvec(x, dim);
    uint8_t lab;
    rd(lab);
    w.stats.kept_inputs.push_back(std::move(x));
    w.stats.kept_labels.push_back(StateLabel(lab));
  }
  rd(n_points);
  for (uint32_t i = 0; i < n_points; ++i) {
    CriticalPoint p;
    rdvec(p.x, dim);
    rd(p.gap);
    uint8_t sx, sy;
    rd(sx);
    rd(sy);
    p.state_x = StateLabel(sx);
    p.state_y = StateLabel(sy);
    rdvec(p.x_far, dim);
    rdvec(p.y_far, dim);
    w.points.push_back(std::move(p));
  }
  return bool(f);
}

void Extractor::store_cache(int k, const UnitWork& w) const {
  if (cfg_.cache_dir.empty()) return;
  std::filesystem::create_directories(cfg_.cache_dir);
  const std::string path =
      cfg_.cache_dir + "/cp_L" + std::to_string(k) + "_u" + std::to_string(w.ref.unit) + ".bin";
  std::ofstream f(path, std::ios::binary);
  auto wr = [&](const auto& v) { f.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  auto wrvec = [&](const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
  };
  const int32_t dim = victim_.input_shape.count();
  wr(kCacheMagic);
  wr(dim);
  wr(w.ref.row);
  wr(w.ref.col);
  wr(w.stats.samples);
  wr(w.stats.label_a);
  const uint32_t n_kept = uint32_t(w.stats.kept_inputs.size());
  wr(n_kept);
  for (uint32_t i = 0; i < n_kept; ++i) {
    wrvec(w.stats.kept_inputs[i]);
    const uint8_t lab = uint8_t(w.stats.kept_labels[i]);
    wr(lab);
  }
  const uint32_t n_points = uint32_t(w.points.size());
  wr(n_points);
  for (const CriticalPoint& p : w.points) {
    wrvec(p.x);
    wr(p.gap);
    const uint8_t sx = uint8_t(p.state_x), sy = uint8_t(p.state_y);
    wr(sx);
    wr(sy);
    wrvec(p.x_far);
    wrvec(p.y_far);
  }
}

ExtractionOutcome Extractor::run() {
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 0; k < n_relu_; ++k) {
    stage1(k);
    if (k > 0) finalize_layer(k - 1, work_[k]);
    solve_layer(k);
  }
  finalize_last_and_fit_head();

  ModelGraph extracted = prefix_;
  const SegmentInfo& head_seg = segs_.back();
  for (LayerKind fk : head_seg.fixed_ops) extracted.layers.push_back(plain_node(fk));
  LayerNode h;
  h.kind = LayerKind::dense;
  h.out_units = head_.out;
  h.has_bias = true;
  h.weights = head_.weights;
  h.bias = head_.bias;
  extracted.layers.push_back(std::move(h));
  extracted.finalize();

  report_.counters = oracle_.counters();
  report_.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ExtractionOutcome out;
  out.extracted = std::move(extracted);
  out.layers = std::move(out_layers_);
  out.head = head_;
  out.report = std::move(report_);
  return out;
}

}  // namespace

ModelGraph strip_weights(const ModelGraph& m) {
  ModelGraph g = m;
  for (LayerNode& L : g.layers) {
    std::fill(L.weights.begin(), L.weights.end(), 0.0);
    std::fill(L.bias.begin(), L.bias.end(), 0.0);
    std::fill(L.bn_scale.begin(), L.bn_scale.end(), 1.0);
    std::fill(L.bn_shift.begin(), L.bn_shift.end(), 0.0);
    std::fill(L.bn_mean.begin(), L.bn_mean.end(), 0.0);
    std::fill(L.bn_var.begin(), L.bn_var.end(), 1.0);
  }
  g.finalize();
  return g;
}

HeadFit fit_head_ols(const std::vector<std::vector<double>>& feats,
                     const std::vector<std::vector<double>>& targets) {
  const int n = int(feats.size());
  const int p = int(feats[0].size());
  const int c = int(targets[0].size());
  Eigen::MatrixXd A(n, p + 1);
  Eigen::MatrixXd Y(n, c);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) A(i, j) = feats[i][j];
    A(i, p) = 1.0;
    for (int j = 0; j < c; ++j) Y(i, j) = targets[i][j];
  }
  Eigen::MatrixXd W = A.colPivHouseholderQr().solve(Y);
  HeadFit fit;
  fit.in = p;
  fit.out = c;
  fit.weights.resize(size_t(c) * p);
  fit.bias.resize(c);
  for (int o = 0; o < c; ++o) {
    for (int j = 0; j < p; ++j) fit.weights[size_t(o) * p + j] = W(j, o);
    fit.bias[o] = W(p, o);
  }
  fit.loss = (A * W - Y).squaredNorm() / double(n * c);
  return fit;
}

HeadFit fit_head_logistic(const std::vector<std::vector<double>>& feats,
                          const std::vector<int>& labels, int classes, int iters, double lr) {
  const int n = int(feats.size());
  const int p = int(feats[0].size());
  Eigen::MatrixXd A(n, p + 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) A(i, j) = feats[i][j];
    A(i, p) = 1.0;
  }
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(p + 1, classes);
  double prev_loss = std::numeric_limits<double>::infinity();
  double loss = prev_loss;
  for (int it = 0; it < iters; ++it) {
    Eigen::MatrixXd logits = A * W;
    Eigen::MatrixXd P = logits;
    loss = 0;
    for (int i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      double denom = 0;
      for (int c = 0; c < classes; ++c) denom += std::exp(logits(i, c) - mx);
      for (int c = 0; c < classes; ++c) P(i, c) = std::exp(logits(i, c) - mx) / denom;
      loss -= std::log(std::max(P(i, labels[i]), 1e-300));
    }
    loss /= n;
    if (loss > prev_loss) lr *= 0.5;
    prev_loss = loss;
    for (int i = 0; i < n; ++i) P(i, labels[i]) -= 1.0;
    W -= lr * (A.transpose() * P) / double(n);
  }
  HeadFit fit;
  fit.in = p;
  fit.out = classes;
  fit.weights.resize(size_t(classes) * p);
  fit.bias.resize(classes);
  for (int o = 0; o < classes; ++o) {
    for (int j = 0; j < p; ++j) fit.weights[size_t(o) * p + j] = W(j, o);
    fit.bias[o] = W(p, o);
  }
  fit.loss = loss;
  return fit;
}

ExtractionOutcome extract_model(const ModelGraph& victim, const PipelineConfig& cfg) {
  Extractor ex(victim, cfg);
  return ex.run();
}

}  // namespace screx
