#include "screx/search.hpp"

#include <algorithm>
#include <cmath>

#include "screx/rng.hpp"

namespace screx {

namespace {

double l2(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

void PairStats::record(const std::vector<double>& x, StateLabel s, size_t keep_cap) {
  ++samples;
  if (s == StateLabel::A_side) ++label_a;
  if (kept_inputs.size() < keep_cap) {
    kept_inputs.push_back(x);
    kept_labels.push_back(s);
  }
}

StateProbe::StateProbe(VictimOracle& oracle, const NeuronRef& ref, bool flip_labels)
    : oracle_(&oracle), ref_(ref), flip_(flip_labels) {
  if (!oracle.config().ideal_state_mode && oracle.config().repeats % 2 == 0)
    throw std::invalid_argument("StateProbe: repeats must be odd for majority voting");
}

uint64_t StateProbe::next_nonce() {
  const uint64_t s = seq_++;
  if (s >= (1ULL << 20)) throw std::runtime_error("StateProbe: nonce sequence exhausted");
  return (ref_.uid() << 20) | s;
}

bool StateProbe::calibrate(const SearchConfig& cfg, PairStats& stats) {
  std::vector<Trace> traces;
  std::vector<std::vector<double>> inputs;
  traces.reserve(cfg.calibration_traces);
  const int dim = oracle_->victim().input_shape.count();
  for (int i = 0; i < cfg.calibration_traces; ++i) {
    std::vector<double> x = draw_input(cfg, dim, ref_.uid(), 0xFFF00000u + i);
    std::vector<Trace> t = oracle_->query_trace_pure(x, ref_, next_nonce());
    traces_used_ += t.size();
    traces.push_back(std::move(t[0]));
    inputs.push_back(std::move(x));
  }
  const size_t t_len = traces[0].samples.size();
  mean_trace_.assign(t_len, 0.0);
  for (const Trace& t : traces)
    for (size_t j = 0; j < t_len; ++j) mean_trace_[j] += t.samples[j];
  for (double& v : mean_trace_) v /= double(traces.size());

  bool usable = false;
  try {
    ClusterModel cm = fit_two_clusters(traces, cfg.attack_seed);
    // a split that only chases noise has centroids within the noise floor:
    // require the separation to clear several within-cluster deviations per
    // trace sample
    double sep2 = 0;
    for (size_t j = 0; j < t_len; ++j) {
      const double d = cm.centroid_a[j] - cm.centroid_b[j];
      sep2 += d * d;
    }
    const double noise_var = cm.inertia / double(traces.size()) / double(t_len);
    usable = noise_var == 0 || sep2 > 8.0 * noise_var;
    if (usable) set_cluster_model(std::move(cm));
  } catch (const DegenerateClusters&) {
    usable = false;
  }

  for (size_t i = 0; i < inputs.size(); ++i) {
    StateLabel s = StateLabel::A_side;
    if (usable) {
      s = classify(traces[i], cm_);
      if (swap_) s = screx::flip(s);
      if (flip_) s = screx::flip(s);
    }
    stats.record(inputs[i], s);
  }
  return usable;
}

StateLabel StateProbe::state(std::span<const double> x) {
  StateLabel s;
  if (oracle_->config().ideal_state_mode) {
    s = oracle_->query_state_ideal_pure(x, ref_);
    traces_used_ += 1;
  } else {
    if (!has_cm_) throw std::logic_error("StateProbe: classify before calibration");
    std::vector<Trace> traces = oracle_->query_trace_pure(x, ref_, next_nonce());
    traces_used_ += traces.size();
    s = classify_majority(traces, cm_);
  }
  if (swap_) s = screx::flip(s);
  if (flip_) s = screx::flip(s);
  return s;
}

bool StateProbe::ideal() const { return oracle_->config().ideal_state_mode; }
bool StateProbe::noisy() const { return !ideal() && oracle_->config().noise_sigma > 0; }
Precision StateProbe::precision() const { return oracle_->precision(); }

std::vector<double> draw_input(const SearchConfig& cfg, int dim, uint64_t uid, uint32_t attempt) {
  CounterRng rng(cfg.attack_seed, rng_stream::sampler);
  std::vector<double> x(dim);
  if (cfg.sampler.kind == SamplerSpec::Kind::normal)
    rng.fill_gaussian(x, uid, attempt);
  else
    rng.fill_uniform(x, cfg.sampler.lo, cfg.sampler.hi, uid, attempt);
  return x;
}

StatePair sample_state_pair(StateProbe& probe, const SearchConfig& cfg, int dim,
                            uint32_t& attempt_counter, PairStats& stats) {
  StatePair pair;
  pair.x = draw_input(cfg, dim, probe.ref().uid(), attempt_counter++);
  pair.state_x = probe.state(pair.x);
  stats.record(pair.x, pair.state_x);
  for (int tries = 0; tries < cfg.max_pair_attempts; ++tries) {
    pair.y = draw_input(cfg, dim, probe.ref().uid(), attempt_counter++);
    pair.state_y = probe.state(pair.y);
    stats.record(pair.y, pair.state_y);
    if (pair.state_y != pair.state_x) return pair;
  }
  throw PairNotFound("sample_state_pair: no opposite state after " +
                         std::to_string(cfg.max_pair_attempts) + " attempts",
                     stats.a_fraction(), stats.samples);
}

CriticalPoint bisect_critical(StateProbe& probe, const StatePair& pair, double delta,
                              Precision oracle_precision, bool verify) {
  CriticalPoint cp;
  cp.x_far = pair.x;
  cp.y_far = pair.y;
  cp.state_x = pair.state_x;
  cp.state_y = pair.state_y;

  std::vector<double> X = pair.x, Y = pair.y;
  double gap = l2(X, Y);
  const int dim = int(X.size());
  int guard = 0;
  while (gap > delta && guard++ < 400) {
    std::vector<double> M(dim);
    for (int i = 0; i < dim; ++i) M[i] = quantize((X[i] + Y[i]) / 2.0, oracle_precision);
    if (M == X || M == Y) break;  // representable grid exhausted
    if (probe.state(M) == cp.state_x)
      X = std::move(M);
    else
      Y = std::move(M);
    gap = l2(X, Y);
  }
  if (verify) {
    // one re-vote of both endpoints; a vanished state difference means noise
    // corrupted the search
    if (probe.state(X) == probe.state(Y))
      throw NoisyPairAborted("bisect_critical: endpoint states no longer differ");
  }
  cp.x = std::move(X);
  cp.gap = gap;
  return cp;
}

std::vector<CriticalPoint> collect_critical_points(StateProbe& probe, const SearchConfig& cfg,
                                                   int dim, int count, uint32_t& attempt_counter,
                                                   PairStats& stats) {
  std::vector<CriticalPoint> points;
  points.reserve(count);
  for (int i = 0; i < count; ++i) {
    int aborts = 0;
    for (;;) {
      StatePair pair = sample_state_pair(probe, cfg, dim, attempt_counter, stats);
      const double gap0 = l2(pair.x, pair.y);
      try {
        CriticalPoint cp = bisect_critical(probe, pair, cfg.delta_for(probe.precision(), gap0),
                                           probe.precision(), probe.noisy());
        points.push_back(std::move(cp));
        break;
      } catch (const NoisyPairAborted&) {
        if (++aborts >= 3) throw;
      }
    }
  }
  return points;
}

CriticalPointSet collect_critical_point_set(StateProbe& probe, const SearchConfig& cfg, int dim,
                                            int count) {
  CriticalPointSet set;
  set.ref = probe.ref();
  uint32_t attempts = 0;
  const uint64_t before = probe.traces_used();
  set.points = collect_critical_points(probe, cfg, dim, count, attempts, set.stats);
  set.traces_used = probe.traces_used() - before;
  return set;
}

NeuronKind classify_neuron_kind(double active_fraction,
                                const std::vector<std::vector<double>>* coord_rows,
                                const SearchConfig& cfg, double dead_col_tol) {
  if (active_fraction >= cfg.constant_fraction) return NeuronKind::always_on;
  if (active_fraction <= 1.0 - cfg.constant_fraction) return NeuronKind::always_off;
  if (coord_rows && !coord_rows->empty()) {
    const size_t n = (*coord_rows)[0].size();
    for (size_t j = 0; j < n; ++j) {
      double mx = 0;
      for (const auto& row : *coord_rows) mx = std::max(mx, std::abs(row[j]));
      if (mx < dead_col_tol) return NeuronKind::input_off;
    }
  }
  return NeuronKind::normal;
}

}  // namespace screx
