#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "screx/model.hpp"

namespace screx {

// Bit-level constant-time relu mask: reinterpret the value as a signed word,
// arithmetic-shift the sign across it, invert.  ANDing the mask with the
// value's bit pattern reproduces relu(v) exactly, including -0.0 -> +0.0.
uint32_t relu_mask_word(float v);
uint64_t relu_mask_word(double v);
float masked_relu(float v);
double masked_relu(double v);

enum class OutputMode { hard_label, confidence };

// Arbitrary side labels for a neuron's state as seen through leakage; which
// side is "active" is unknown to a black-box caller until sign recovery.
enum class StateLabel : uint8_t { A_side, B_side };
inline StateLabel flip(StateLabel s) {
  return s == StateLabel::A_side ? StateLabel::B_side : StateLabel::A_side;
}

struct OracleConfig {
  OutputMode output_mode = OutputMode::hard_label;
  int trace_len = 50;
  int leak_index = 25;
  double leak_gain = 1.0;
  double noise_sigma = 4.0;
  int repeats = 1;
  uint64_t seed = 0;
  bool ideal_state_mode = false;
  std::string trace_dump_path;  // empty = no dump
};

struct Trace {
  std::vector<double> samples;
};

struct QueryCounter {
  uint64_t label_queries = 0;
  uint64_t trace_queries = 0;
  uint64_t output_queries = 0;
  uint64_t total() const { return label_queries + trace_queries + output_queries; }
};

// Simulated embedded device running the victim model.  Inputs are quantized
// to the model's precision before inference.  Each trace carries Gaussian
// noise everywhere plus leak_gain * HammingWeight(relu mask word of the
// targeted neuron's pre-activation) at leak_index.  Metered queries are
// serialized: noise is keyed by a global query index, so identical query
// histories give bit-identical traces.  The *_pure variants take an explicit
// nonce instead and never touch the shared noise counter, which lets
// parallel workers stay deterministic; they still count toward the meter.
class VictimOracle {
 public:
  VictimOracle(ModelGraph victim, OracleConfig cfg);

  std::vector<Trace> query_trace(std::span<const double> x, const NeuronRef& ref);
  int query_label(std::span<const double> x);
  std::vector<double> query_output(std::span<const double> x);
  // one trace query; only valid in ideal_state_mode
  StateLabel query_state_ideal(std::span<const double> x, const NeuronRef& ref);

  std::vector<Trace> query_trace_pure(std::span<const double> x, const NeuronRef& ref,
                                      uint64_t nonce);
  StateLabel query_state_ideal_pure(std::span<const double> x, const NeuronRef& ref);

  const QueryCounter& counters() const { return counters_; }
  const OracleConfig& config() const { return cfg_; }
  const ModelGraph& victim() const { return victim_; }  // test instrumentation
  Precision precision() const { return victim_.precision; }
  int n_classes() const;

 private:
  double target_preactivation(std::span<const double> x, const NeuronRef& ref) const;
  int mask_hamming_weight(double preact) const;
  Trace make_trace(int hw, uint64_t stream, uint64_t c0, uint64_t c1) const;
  void dump_trace(uint64_t qidx, const NeuronRef& ref, const Trace& t);

  ModelGraph victim_;
  OracleConfig cfg_;
  QueryCounter counters_;
  uint64_t noise_counter_ = 0;
  std::mutex mu_;
  std::unique_ptr<std::ofstream> dump_;
};

}  // namespace screx
