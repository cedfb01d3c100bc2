#include "screx/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "screx/signature.hpp"

namespace screx {

namespace {

double log2_or_nan(double v) { return v > 0 ? std::log2(v) : kNan; }

std::string fmt_log2(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << "2^" << log2_or_nan(v);
  return os.str();
}

}  // namespace

double ExtractionReport::log2_total() const {
  const uint64_t t = counters.total();
  return t ? std::log2(double(t)) : 0.0;
}

std::string report_text(const ExtractionReport& r) {
  std::ostringstream os;
  os << "layer  units  kinds(n/on/off/ioff)  fail  queries      max|th-th^|  mean|A-A^|  "
        "sign_margin\n";
  for (const LayerReport& l : r.layers) {
    os << "L" << l.relu_index << (l.conv ? " conv" : " dense") << "  " << l.n_units << "  "
       << l.kind_census[0] << "/" << l.kind_census[1] << "/" << l.kind_census[2] << "/"
       << l.kind_census[3] << "  " << l.failed_units << "  " << l.queries() << "  "
       << fmt_log2(l.max_weight_err) << "  " << fmt_log2(l.mean_act_err) << "  ";
    if (std::isnan(l.sign_margin_log10))
      os << "-";
    else
      os << l.sign_margin_log10 << (l.sign_tie ? " (tie)" : "");
    os << "\n";
  }
  os << "head queries: " << r.head_label_queries + r.head_output_queries << "\n";
  os << "total queries: " << r.counters.total() << " (log2 " << r.log2_total() << ")\n";
  if (!std::isnan(r.fidelity)) os << "fidelity: " << r.fidelity << "\n";
  if (!std::isnan(r.hybrid_agreement)) os << "hybrid agreement: " << r.hybrid_agreement << "\n";
  if (!std::isnan(r.accuracy_victim))
    os << "accuracy victim/extracted: " << r.accuracy_victim << " / " << r.accuracy_extracted
       << "\n";
  os << "wall seconds: " << r.wall_seconds << "\n";
  return os.str();
}

void write_report_json(const ExtractionReport& r, const std::string& path) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const LayerReport& l : r.layers) {
    nlohmann::json jl;
    jl["relu_index"] = l.relu_index;
    jl["units"] = l.n_units;
    jl["conv"] = l.conv;
    jl["kind_census"] = {l.kind_census[0], l.kind_census[1], l.kind_census[2], l.kind_census[3]};
    jl["traces_by_kind"] = {l.traces_by_kind[0], l.traces_by_kind[1], l.traces_by_kind[2],
                            l.traces_by_kind[3]};
    jl["failed_units"] = l.failed_units;
    jl["failed_traces"] = l.failed_traces;
    jl["calibration_traces"] = l.calibration_traces;
    jl["search_traces"] = l.search_traces;
    jl["special_traces"] = l.special_traces;
    jl["sign_stage_traces"] = l.sign_stage_traces;
    jl["sign_margin_log10"] = std::isnan(l.sign_margin_log10) ? nlohmann::json()
                                                              : nlohmann::json(l.sign_margin_log10);
    jl["sign_tie"] = l.sign_tie;
    jl["max_residual"] = l.max_residual;
    if (!std::isnan(l.max_weight_err)) {
      jl["max_weight_err"] = l.max_weight_err;
      jl["max_weight_err_log2"] = log2_or_nan(l.max_weight_err);
    }
    if (!std::isnan(l.mean_act_err)) {
      jl["mean_act_err"] = l.mean_act_err;
      jl["mean_act_err_log2"] = log2_or_nan(l.mean_act_err);
    }
    j["layers"].push_back(jl);
  }
  j["head_label_queries"] = r.head_label_queries;
  j["head_output_queries"] = r.head_output_queries;
  j["total_queries"] = r.counters.total();
  j["total_queries_log2"] = r.log2_total();
  j["trace_queries"] = r.counters.trace_queries;
  j["label_queries"] = r.counters.label_queries;
  j["output_queries"] = r.counters.output_queries;
  j["wall_seconds"] = r.wall_seconds;
  if (!std::isnan(r.fidelity)) j["fidelity"] = r.fidelity;
  if (!std::isnan(r.hybrid_agreement)) j["hybrid_agreement"] = r.hybrid_agreement;
  if (!std::isnan(r.accuracy_victim)) {
    j["accuracy_victim"] = r.accuracy_victim;
    j["accuracy_extracted"] = r.accuracy_extracted;
  }
  if (!r.eps_delta.empty()) {
    j["eps_delta"] = nlohmann::json::array();
    for (auto [e, d] : r.eps_delta) j["eps_delta"].push_back({{"eps", e}, {"delta", d}});
  }
  std::ofstream f(path);
  f << j.dump(2) << "\n";
}

void write_report_csv(const ExtractionReport& r, const std::string& path) {
  std::ofstream f(path);
  f << "layer,conv,units,normal,always_on,always_off,input_off,failed,"
       "calibration_traces,search_traces,special_traces,sign_stage_traces,"
       "sign_margin_log10,max_residual,max_weight_err,mean_act_err\n";
  for (const LayerReport& l : r.layers) {
    f << l.relu_index << "," << (l.conv ? 1 : 0) << "," << l.n_units << "," << l.kind_census[0]
      << "," << l.kind_census[1] << "," << l.kind_census[2] << "," << l.kind_census[3] << ","
      << l.failed_units << "," << l.calibration_traces << "," << l.search_traces << ","
      << l.special_traces << "," << l.sign_stage_traces << "," << l.sign_margin_log10 << ","
      << l.max_residual << "," << l.max_weight_err << "," << l.mean_act_err << "\n";
  }
}

}  // namespace screx
