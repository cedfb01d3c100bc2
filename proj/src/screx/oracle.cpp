#include "screx/oracle.hpp"

#include <bit>
#include <stdexcept>

#include "screx/forward.hpp"
#include "screx/rng.hpp"

namespace screx {

uint32_t relu_mask_word(float v) {
  const auto bits = std::bit_cast<int32_t>(v);
  return ~uint32_t(bits >> 31);
}

uint64_t relu_mask_word(double v) {
  const auto bits = std::bit_cast<int64_t>(v);
  return ~uint64_t(bits >> 63);
}

float masked_relu(float v) {
  return std::bit_cast<float>(relu_mask_word(v) & std::bit_cast<uint32_t>(v));
}

double masked_relu(double v) {
  return std::bit_cast<double>(relu_mask_word(v) & std::bit_cast<uint64_t>(v));
}

VictimOracle::VictimOracle(ModelGraph victim, OracleConfig cfg)
    : victim_(std::move(victim)), cfg_(cfg) {
  if (cfg_.leak_index < 0 || cfg_.leak_index >= cfg_.trace_len)
    throw std::invalid_argument("oracle: leak_index outside trace");
  if (cfg_.noise_sigma < 0 || cfg_.repeats < 1)
    throw std::invalid_argument("oracle: bad noise/repeats");
  if (!cfg_.trace_dump_path.empty()) {
    dump_ = std::make_unique<std::ofstream>(cfg_.trace_dump_path, std::ios::binary);
    if (!*dump_) throw std::runtime_error("oracle: cannot open trace dump file");
    *dump_ << "SCREXTRACE v1\n";
    const int32_t t = cfg_.trace_len;
    dump_->write(reinterpret_cast<const char*>(&t), 4);
  }
}

int VictimOracle::n_classes() const { return victim_.out_shapes.back().count(); }

double VictimOracle::target_preactivation(std::span<const double> x, const NeuronRef& ref) const {
  if (victim_.precision == Precision::binary32) {
    std::vector<double> q(x.begin(), x.end());
    quantize_inplace(q, Precision::binary32);
    return preactivation(victim_, q, ref);
  }
  return preactivation(victim_, x, ref);
}

int VictimOracle::mask_hamming_weight(double preact) const {
  if (victim_.precision == Precision::binary32)
    return std::popcount(relu_mask_word(float(preact)));
  return std::popcount(relu_mask_word(preact));
}

Trace VictimOracle::make_trace(int hw, uint64_t stream, uint64_t c0, uint64_t c1) const {
  Trace t;
  t.samples.assign(cfg_.trace_len, 0.0);
  if (cfg_.noise_sigma > 0) {
    CounterRng rng(cfg_.seed, stream);
    rng.fill_gaussian(t.samples, c0, c1);
    for (double& s : t.samples) s *= cfg_.noise_sigma;
  }
  t.samples[cfg_.leak_index] += cfg_.leak_gain * hw;
  return t;
}

void VictimOracle::dump_trace(uint64_t qidx, const NeuronRef& ref, const Trace& t) {
  if (!dump_) return;
  const int32_t hdr[4] = {ref.relu_index, ref.unit, ref.row, ref.col};
  dump_->write(reinterpret_cast<const char*>(&qidx), 8);
  dump_->write(reinterpret_cast<const char*>(hdr), 16);
  dump_->write(reinterpret_cast<const char*>(t.samples.data()),
               std::streamsize(t.samples.size() * 8));
}

std::vector<Trace> VictimOracle::query_trace(std::span<const double> x, const NeuronRef& ref) {
  const int hw = mask_hamming_weight(target_preactivation(x, ref));
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<Trace> out;
  out.reserve(cfg_.repeats);
  for (int r = 0; r < cfg_.repeats; ++r) {
    const uint64_t qidx = noise_counter_++;
    out.push_back(make_trace(hw, rng_stream::oracle_noise, qidx, 0));
    dump_trace(qidx, ref, out.back());
  }
  counters_.trace_queries += cfg_.repeats;
  return out;
}

std::vector<Trace> VictimOracle::query_trace_pure(std::span<const double> x, const NeuronRef& ref,
                                                  uint64_t nonce) {
  const int hw = mask_hamming_weight(target_preactivation(x, ref));
  std::vector<Trace> out;
  out.reserve(cfg_.repeats);
  for (int r = 0; r < cfg_.repeats; ++r)
    out.push_back(make_trace(hw, rng_stream::oracle_noise_pure, nonce, uint64_t(r)));
  std::lock_guard<std::mutex> lock(mu_);
  counters_.trace_queries += cfg_.repeats;
  return out;
}

int VictimOracle::query_label(std::span<const double> x) {
  if (cfg_.output_mode != OutputMode::hard_label)
    throw std::logic_error("oracle: label query in confidence mode");
  if (n_classes() < 2) throw std::logic_error("oracle: label query on a regression model");
  std::vector<double> q(x.begin(), x.end());
  quantize_inplace(q, victim_.precision);
  const int label = hard_label(victim_, q);
  std::lock_guard<std::mutex> lock(mu_);
  counters_.label_queries += 1;
  return label;
}

std::vector<double> VictimOracle::query_output(std::span<const double> x) {
  if (cfg_.output_mode != OutputMode::confidence)
    throw std::logic_error("oracle: output query in hard-label mode");
  std::vector<double> q(x.begin(), x.end());
  quantize_inplace(q, victim_.precision);
  std::vector<double> out = forward_output(victim_, q);
  std::lock_guard<std::mutex> lock(mu_);
  counters_.output_queries += 1;
  return out;
}

StateLabel VictimOracle::query_state_ideal(std::span<const double> x, const NeuronRef& ref) {
  return query_state_ideal_pure(x, ref);
}

StateLabel VictimOracle::query_state_ideal_pure(std::span<const double> x, const NeuronRef& ref) {
  if (!cfg_.ideal_state_mode) throw std::logic_error("oracle: ideal state query disabled");
  const double v = target_preactivation(x, ref);
  // side follows the mask word: sign bit clear (incl. +0.0) is the A side
  const bool a_side = victim_.precision == Precision::binary32
                          ? relu_mask_word(float(v)) != 0
                          : relu_mask_word(v) != 0;
  {
    std::lock_guard<std::mutex> lock(mu_);
    counters_.trace_queries += 1;
  }
  return a_side ? StateLabel::A_side : StateLabel::B_side;
}

}  // namespace screx
