#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "screx/oracle.hpp"

namespace screx {

struct LayerReport {
  int relu_index = 0;
  int n_units = 0;
  bool conv = false;
  int kind_census[4] = {0, 0, 0, 0};          // indexed by NeuronKind
  uint64_t traces_by_kind[4] = {0, 0, 0, 0};  // per-unit totals grouped by kind
  int failed_units = 0;
  uint64_t failed_traces = 0;
  uint64_t calibration_traces = 0;
  uint64_t search_traces = 0;
  uint64_t special_traces = 0;
  uint64_t sign_stage_traces = 0;  // must stay zero
  double sign_margin_log10 = kNan;
  bool sign_tie = false;
  double max_residual = 0;
  // evaluation metrics (filled when the victim is available)
  double max_weight_err = kNan;
  double mean_act_err = kNan;

  uint64_t queries() const { return calibration_traces + search_traces + special_traces; }
};

struct ExtractionReport {
  std::vector<LayerReport> layers;
  uint64_t head_label_queries = 0;
  uint64_t head_output_queries = 0;
  QueryCounter counters;  // oracle-side totals
  double wall_seconds = 0;
  // evaluation metrics
  double fidelity = kNan;
  double hybrid_agreement = kNan;
  double accuracy_victim = kNan;
  double accuracy_extracted = kNan;
  std::vector<std::pair<double, double>> eps_delta;

  uint64_t ledger_total() const {
    uint64_t t = head_label_queries + head_output_queries;
    for (const LayerReport& l : layers) t += l.queries();
    return t;
  }
  double log2_total() const;
};

std::string report_text(const ExtractionReport& r);
void write_report_json(const ExtractionReport& r, const std::string& path);
void write_report_csv(const ExtractionReport& r, const std::string& path);

}  // namespace screx
