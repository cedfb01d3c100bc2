#include "screx/distinguisher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "screx/rng.hpp"

namespace screx {

namespace {

double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct LloydResult {
  std::vector<double> ca, cb;
  double inertia = std::numeric_limits<double>::infinity();
  bool valid = false;
};

LloydResult lloyd(std::span<const Trace> traces, size_t ia, size_t ib) {
  const size_t n = traces.size();
  const size_t t_len = traces[0].samples.size();
  LloydResult res;
  res.ca = traces[ia].samples;
  res.cb = traces[ib].samples;
  std::vector<uint8_t> assign(n, 0), prev(n, 255);

  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
#pragma omp parallel for schedule(static) reduction(|| : changed)
    for (long i = 0; i < long(n); ++i) {
      const double da = dist2(traces[i].samples, res.ca);
      const double db = dist2(traces[i].samples, res.cb);
      assign[i] = db < da ? 1 : 0;
      if (assign[i] != prev[i]) changed = true;
    }
    if (!changed) break;
    prev = assign;

    std::vector<double> sa(t_len, 0), sb(t_len, 0);
    size_t na = 0, nb = 0;
    for (size_t i = 0; i < n; ++i) {
      const auto& s = traces[i].samples;
      if (assign[i] == 0) {
        ++na;
        for (size_t j = 0; j < t_len; ++j) sa[j] += s[j];
      } else {
        ++nb;
        for (size_t j = 0; j < t_len; ++j) sb[j] += s[j];
      }
    }
    if (na == 0 || nb == 0) {
      // move the point farthest from the surviving centroid into the empty
      // cluster and continue
      const auto& c = na == 0 ? res.cb : res.ca;
      size_t far_i = 0;
      double far_d = -1;
      for (size_t i = 0; i < n; ++i) {
        const double d = dist2(traces[i].samples, c);
        if (d > far_d) {
          far_d = d;
          far_i = i;
        }
      }
      if (na == 0) res.ca = traces[far_i].samples;
      else res.cb = traces[far_i].samples;
      continue;
    }
    for (size_t j = 0; j < t_len; ++j) {
      res.ca[j] = sa[j] / double(na);
      res.cb[j] = sb[j] / double(nb);
    }
  }

  res.inertia = 0;
  for (size_t i = 0; i < n; ++i)
    res.inertia += std::min(dist2(traces[i].samples, res.ca), dist2(traces[i].samples, res.cb));
  res.valid = dist2(res.ca, res.cb) > 0;
  return res;
}

}  // namespace

ClusterModel fit_two_clusters(std::span<const Trace> traces, uint64_t seed) {
  if (traces.size() < 2) throw InsufficientData("fit_two_clusters: need at least two traces");
  const size_t n = traces.size();

  bool all_identical = true;
  for (size_t i = 1; i < n && all_identical; ++i)
    if (traces[i].samples != traces[0].samples) all_identical = false;
  if (all_identical) throw DegenerateClusters("fit_two_clusters: all traces identical");

  CounterRng rng(seed, rng_stream::kmeans);
  LloydResult best;
  for (int restart = 0; restart < 8; ++restart) {
    size_t ia = size_t(rng.uniform(restart, 0, 0) * double(n));
    size_t ib = size_t(rng.uniform(restart, 0, 1) * double(n));
    ia = std::min(ia, n - 1);
    ib = std::min(ib, n - 1);
    if (ib == ia || traces[ia].samples == traces[ib].samples) {
      // farthest point from ia as the second seed
      double far_d = -1;
      for (size_t i = 0; i < n; ++i) {
        const double d = dist2(traces[i].samples, traces[ia].samples);
        if (d > far_d) {
          far_d = d;
          ib = i;
        }
      }
    }
    LloydResult r = lloyd(traces, ia, ib);
    if (r.valid && r.inertia < best.inertia) best = std::move(r);
    if (!best.valid && r.valid) best = std::move(r);
  }
  if (!best.valid) throw DegenerateClusters("fit_two_clusters: clusters collapsed");

  // canonical ordering keeps the arbitrary labels stable across runs
  const double suma = std::accumulate(best.ca.begin(), best.ca.end(), 0.0);
  const double sumb = std::accumulate(best.cb.begin(), best.cb.end(), 0.0);
  ClusterModel m;
  if (suma < sumb || (suma == sumb && best.ca <= best.cb)) {
    m.centroid_a = std::move(best.ca);
    m.centroid_b = std::move(best.cb);
  } else {
    m.centroid_a = std::move(best.cb);
    m.centroid_b = std::move(best.ca);
  }
  m.inertia = best.inertia;
  return m;
}

StateLabel classify(const Trace& t, const ClusterModel& m) {
  const double da = dist2(t.samples, m.centroid_a);
  const double db = dist2(t.samples, m.centroid_b);
  return db < da ? StateLabel::B_side : StateLabel::A_side;
}

StateLabel classify_majority(std::span<const Trace> traces, const ClusterModel& m) {
  if (traces.empty() || traces.size() % 2 == 0)
    throw std::invalid_argument("classify_majority: need an odd trace count");
  int a = 0;
  for (const Trace& t : traces)
    if (classify(t, m) == StateLabel::A_side) ++a;
  return 2 * a > int(traces.size()) ? StateLabel::A_side : StateLabel::B_side;
}

double majority_success_rate(double p, int n) {
  if (n < 1 || n % 2 == 0) throw std::invalid_argument("majority_success_rate: n must be odd");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("majority_success_rate: p in [0,1]");
  if (p == 1.0) return 1.0;
  if (p == 0.0) return 0.0;
  double sum = 0;
  for (int k = (n + 1) / 2; k <= n; ++k) {
    const double lg = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                      k * std::log(p) + (n - k) * std::log1p(-p);
    sum += std::exp(lg);
  }
  return std::min(sum, 1.0);
}

std::vector<double> snr(std::span<const Trace> traces, std::span<const StateLabel> labels) {
  if (traces.size() != labels.size())
    throw std::invalid_argument("snr: traces/labels size mismatch");
  const size_t t_len = traces.empty() ? 0 : traces[0].samples.size();
  size_t na = 0, nb = 0;
  for (StateLabel l : labels) (l == StateLabel::A_side ? na : nb)++;
  if (na < 2 || nb < 2) throw InsufficientData("snr: each class needs at least two traces");

  std::vector<double> ma(t_len, 0), mb(t_len, 0), va(t_len, 0), vb(t_len, 0);
  for (size_t i = 0; i < traces.size(); ++i) {
    auto& mean = labels[i] == StateLabel::A_side ? ma : mb;
    for (size_t j = 0; j < t_len; ++j) mean[j] += traces[i].samples[j];
  }
  for (size_t j = 0; j < t_len; ++j) {
    ma[j] /= double(na);
    mb[j] /= double(nb);
  }
  for (size_t i = 0; i < traces.size(); ++i) {
    const bool is_a = labels[i] == StateLabel::A_side;
    auto& var = is_a ? va : vb;
    const auto& mean = is_a ? ma : mb;
    for (size_t j = 0; j < t_len; ++j) {
      const double d = traces[i].samples[j] - mean[j];
      var[j] += d * d;
    }
  }
  std::vector<double> out(t_len);
  for (size_t j = 0; j < t_len; ++j) {
    va[j] /= double(na - 1);
    vb[j] /= double(nb - 1);
    const double mid = (ma[j] + mb[j]) / 2;
    const double between =
        ((ma[j] - mid) * (ma[j] - mid) + (mb[j] - mid) * (mb[j] - mid)) / 2.0;
    const double within = (va[j] + vb[j]) / 2.0;
    if (within == 0)
      out[j] = between == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    else
      out[j] = between / within;
  }
  return out;
}

std::vector<bool> align_layer(std::span<const ClusterModel> models) {
  std::vector<bool> swap_flags(models.size(), false);
  if (models.empty()) return swap_flags;
  const ClusterModel& ref = models[0];
  for (size_t i = 1; i < models.size(); ++i) {
    const double keep = std::sqrt(dist2(models[i].centroid_a, ref.centroid_a)) +
                        std::sqrt(dist2(models[i].centroid_b, ref.centroid_b));
    const double crossed = std::sqrt(dist2(models[i].centroid_a, ref.centroid_b)) +
                           std::sqrt(dist2(models[i].centroid_b, ref.centroid_a));
    swap_flags[i] = crossed < keep;
  }
  return swap_flags;
}

StateLabel nearest_side(std::span<const double> centroid, const ClusterModel& ref) {
  const double da = dist2(centroid, ref.centroid_a);
  const double db = dist2(centroid, ref.centroid_b);
  return db < da ? StateLabel::B_side : StateLabel::A_side;
}

}  // namespace screx
