#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "screx/distinguisher.hpp"
#include "screx/forward.hpp"
#include "screx/generate.hpp"
#include "screx/metrics.hpp"
#include "screx/model_io.hpp"
#include "screx/pipeline.hpp"
#include "screx/report.hpp"
#include "screx/rng.hpp"

using namespace screx;
using nlohmann::json;

namespace {

Precision parse_precision(const std::string& s) {
  if (s == "binary32") return Precision::binary32;
  if (s == "binary64") return Precision::binary64;
  throw CLI::ValidationError("precision must be binary32 or binary64");
}

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  return json::parse(f);
}

// "a.b.c=value" overrides applied onto the config tree
void apply_override(json& j, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos) throw std::runtime_error("override needs key=value: " + kv);
  std::string key = kv.substr(0, eq);
  const std::string val = kv.substr(eq + 1);
  json* node = &j;
  size_t pos = 0;
  for (;;) {
    const size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      json parsed = json::parse(val, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(val) : parsed;
      break;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

ModelGraph victim_from_config(const json& j) {
  const json& v = j.at("victim");
  if (v.contains("path")) return load_model(v.at("path").get<std::string>());
  const Precision p = parse_precision(v.value("precision", "binary64"));
  ModelGraph m = make_from_arch(v.at("arch").get<std::string>(), p, v.value("seed", uint64_t(1)));
  if (j.contains("victim_out")) save_model(m, j.at("victim_out").get<std::string>());
  return m;
}

PipelineConfig pipeline_from_config(const json& j) {
  PipelineConfig cfg;
  if (j.contains("oracle")) {
    const json& o = j.at("oracle");
    const std::string mode = o.value("output_mode", "hard-label");
    cfg.oracle.output_mode =
        mode == "confidence" ? OutputMode::confidence : OutputMode::hard_label;
    cfg.oracle.trace_len = o.value("trace_len", 50);
    cfg.oracle.leak_index = o.value("leak_index", 25);
    cfg.oracle.leak_gain = o.value("leak_gain", 1.0);
    cfg.oracle.noise_sigma = o.value("noise_sigma", 4.0);
    cfg.oracle.repeats = o.value("repeats", 1);
    cfg.oracle.seed = o.value("seed", uint64_t(0));
    cfg.oracle.ideal_state_mode = o.value("ideal_state_mode", false);
    cfg.oracle.trace_dump_path = o.value("trace_dump", std::string());
  }
  if (j.contains("search")) {
    const json& s = j.at("search");
    cfg.search.delta_rel = s.value("delta_rel", 0.0);
    cfg.search.delta_abs = s.value("delta_abs", 0.0);
    cfg.search.max_pair_attempts = s.value("max_pair_attempts", 2000);
    cfg.search.oversample_min = s.value("oversample_min", 4);
    cfg.search.calibration_traces = s.value("calibration_traces", 200);
    cfg.search.constant_fraction = s.value("constant_fraction", 0.995);
    cfg.search.attack_seed = s.value("attack_seed", uint64_t(1));
    if (s.contains("sampler")) {
      const json& sm = s.at("sampler");
      cfg.search.sampler.kind = sm.value("kind", "normal") == "uniform"
                                    ? SamplerSpec::Kind::uniform
                                    : SamplerSpec::Kind::normal;
      cfg.search.sampler.lo = sm.value("lo", -1.0);
      cfg.search.sampler.hi = sm.value("hi", 1.0);
    }
  }
  if (j.contains("modes")) {
    cfg.modes.perfect_prefix = j.at("modes").value("perfect_prefix", false);
    cfg.modes.flip_labels = j.at("modes").value("flip_labels", false);
  }
  cfg.last_layer_samples = j.value("last_layer_samples", 0);
  cfg.head_fit_iters = j.value("head_fit_iters", 2000);
  cfg.checkpoint_dir = j.value("checkpoint_dir", std::string());
  cfg.cache_dir = j.value("cache_dir", std::string());
  return cfg;
}

int cmd_gen_model(const std::string& arch, const std::string& precision, uint64_t seed,
                  const std::string& out) {
  ModelGraph m = make_from_arch(arch, parse_precision(precision), seed);
  save_model(m, out);
  std::cout << "wrote " << out << " (" << m.param_count() << " parameters)\n";
  return 0;
}

int cmd_extract(const std::string& config_path, const std::vector<std::string>& overrides) {
  json j = load_json(config_path);
  for (const std::string& kv : overrides) apply_override(j, kv);

  ModelGraph victim = victim_from_config(j);
  PipelineConfig cfg = pipeline_from_config(j);
  ExtractionOutcome out = extract_model(victim, cfg);

  if (j.contains("out_model")) save_model(out.extracted, j.at("out_model").get<std::string>());

  // evaluation against the victim (the black-box report alone carries query
  // statistics; weight errors need the victim's parameters)
  if (j.value("eval", json::object()).value("samples", 10000) > 0) {
    const json e = j.value("eval", json::object());
    std::vector<std::vector<NeuronKind>> kinds;
    for (const auto& l : out.layers) {
      kinds.emplace_back();
      for (const auto& u : l.units) kinds.back().push_back(u.kind);
    }
    AlignResult ar = align_scales(victim, out.extracted, &kinds);
    std::vector<double> werr = layer_weight_errors(victim, ar.model);
    EvalOptions eo;
    eo.samples = e.value("samples", 10000);
    eo.seed = e.value("seed", uint64_t(7));
    eo.sampler = cfg.search.sampler;
    eo.compare_softmax = e.value("softmax", cfg.oracle.output_mode == OutputMode::hard_label);
    Dataset ds;
    if (e.contains("dataset") && !e.at("dataset").get<std::string>().empty()) {
      ds = load_dataset(e.at("dataset").get<std::string>());
      eo.dataset = &ds;
    }
    const bool classifier = victim.out_shapes.back().count() >= 2;
    ModelGraph hybrid;
    if (classifier) hybrid = make_hybrid(victim, ar.model);
    EvalResult evr = evaluate(victim, ar.model, eo, classifier ? &hybrid : nullptr);
    for (size_t r = 0; r < werr.size(); ++r) {
      out.report.layers[r].max_weight_err = werr[r];
      out.report.layers[r].mean_act_err = evr.mean_act_err[r];
    }
    out.report.fidelity = evr.fidelity;
    out.report.hybrid_agreement = evr.hybrid_agreement;
    out.report.accuracy_victim = evr.accuracy_victim;
    out.report.accuracy_extracted = evr.accuracy_extracted;
    out.report.eps_delta = evr.eps_delta;
  }

  std::cout << report_text(out.report);
  if (j.contains("report")) {
    const std::string rp = j.at("report").get<std::string>();
    write_report_json(out.report, rp);
    const size_t dot = rp.rfind('.');
    write_report_csv(out.report, (dot == std::string::npos ? rp : rp.substr(0, dot)) + ".csv");
    std::cout << "report written to " << rp << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& victim_path, const std::string& extracted_path, int samples,
                 uint64_t seed, const std::string& dataset_path, bool softmax) {
  ModelGraph victim = load_model(victim_path);
  ModelGraph extracted = load_model(extracted_path);
  AlignResult ar = align_scales(victim, extracted);
  std::vector<double> werr = layer_weight_errors(victim, ar.model);
  EvalOptions eo;
  eo.samples = samples;
  eo.seed = seed;
  eo.compare_softmax = softmax;
  Dataset ds;
  if (!dataset_path.empty()) {
    ds = load_dataset(dataset_path);
    eo.dataset = &ds;
  }
  const bool classifier = victim.out_shapes.back().count() >= 2;
  ModelGraph hybrid;
  if (classifier) hybrid = make_hybrid(victim, ar.model);
  EvalResult ev = evaluate(victim, ar.model, eo, classifier ? &hybrid : nullptr);
  for (size_t r = 0; r < werr.size(); ++r)
    std::printf("L%zu  max|th-th^| %.3e (2^%.1f)  mean|A-A^| %.3e (2^%.1f)\n", r, werr[r],
                std::log2(werr[r]), ev.mean_act_err[r], std::log2(ev.mean_act_err[r]));
  if (classifier)
    std::printf("fidelity %.4f  hybrid agreement %.4f\n", ev.fidelity, ev.hybrid_agreement);
  if (!dataset_path.empty())
    std::printf("accuracy victim %.4f extracted %.4f\n", ev.accuracy_victim,
                ev.accuracy_extracted);
  std::printf("eps,delta\n");
  for (auto [e, d] : ev.eps_delta) std::printf("%.3e,%.4f\n", e, d);
  return 0;
}

int cmd_snr_report(const std::string& model_path, int layer, int unit, int row, int col,
                   int traces, double sigma, uint64_t seed, const std::string& out_csv) {
  ModelGraph m = load_model(model_path);
  if (m.out_shapes[m.relu_nodes.at(layer)].dims.size() == 3 && row < 0) {
    const TensorShape& s = m.out_shapes[m.relu_nodes.at(layer)];
    row = s.dims[1] / 2;
    col = s.dims[2] / 2;
  }
  OracleConfig oc;
  oc.noise_sigma = sigma;
  oc.seed = seed;
  oc.ideal_state_mode = true;  // diagnostic labels come from the exact state
  VictimOracle oracle(m, oc);
  NeuronRef ref;
  ref.relu_index = layer;
  ref.unit = unit;
  ref.row = row;
  ref.col = col;
  const int dim = m.input_shape.count();
  CounterRng rng(seed, rng_stream::eval);
  std::vector<Trace> ts;
  std::vector<StateLabel> labels;
  for (int i = 0; i < traces; ++i) {
    std::vector<double> x(dim);
    rng.fill_gaussian(x, uint64_t(i), 1);
    labels.push_back(oracle.query_state_ideal(x, ref));
    ts.push_back(std::move(oracle.query_trace_pure(x, ref, uint64_t(i))[0]));
  }
  std::vector<double> s = snr(ts, labels);
  std::ofstream f(out_csv);
  f << "sample,snr\n";
  int peak = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    f << i << "," << s[i] << "\n";
    if (s[i] > s[peak]) peak = int(i);
  }
  std::printf("peak snr %.3f at sample %d (csv: %s)\n", s[peak], peak, out_csv.c_str());
  return 0;
}

int cmd_success_curve(double p, int max_n, const std::string& out_csv) {
  std::ofstream f;
  std::ostream* os = &std::cout;
  if (!out_csv.empty()) {
    f.open(out_csv);
    os = &f;
  }
  *os << "n,success_rate\n";
  for (int n = 1; n <= max_n; n += 2) *os << n << "," << majority_success_rate(p, n) << "\n";
  return 0;
}

int cmd_special_census(const std::string& report_path) {
  json j = load_json(report_path);
  std::printf(
      "layer  normal  always-on  always-off  input-off  failed  avg_q_normal  avg_q_special\n");
  for (const auto& l : j.at("layers")) {
    const auto& census = l.at("kind_census");
    const auto& traces = l.at("traces_by_kind");
    const int n_norm = census[0].get<int>();
    const int n_spec = census[1].get<int>() + census[2].get<int>() + census[3].get<int>();
    const double q_norm = n_norm ? traces[0].get<double>() / n_norm : 0.0;
    const double q_spec =
        n_spec ? (traces[1].get<double>() + traces[2].get<double>() + traces[3].get<double>()) /
                     n_spec
               : 0.0;
    std::printf("L%-4d  %6d  %9d  %10d  %9d  %6d  %12.1f  %13.1f\n",
                l.at("relu_index").get<int>(), n_norm, census[1].get<int>(),
                census[2].get<int>(), census[3].get<int>(), l.at("failed_units").get<int>(),
                q_norm, q_spec);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simulated side-channel extraction of deep relu networks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-model", "generate a random victim model file");
  std::string arch, precision = "binary64", out;
  uint64_t seed = 1;
  gen->add_option("--arch", arch, "mlp:10-10-10-1 or mobilenet-short")->required();
  gen->add_option("--precision", precision, "binary32 or binary64");
  gen->add_option("--seed", seed, "weight seed");
  gen->add_option("--out", out, "output model path")->required();

  auto* ext = app.add_subcommand("extract", "run the extraction pipeline from a JSON config");
  std::string config;
  std::vector<std::string> overrides;
  ext->add_option("--config", config, "JSON config path")->required();
  ext->add_option("--set", overrides, "config overrides, e.g. --set search.attack_seed=3");

  auto* ev = app.add_subcommand("evaluate", "compare an extracted model against its victim");
  std::string victim_path, extracted_path, dataset_path;
  int samples = 10000;
  uint64_t eseed = 7;
  bool softmax = false;
  ev->add_option("--victim", victim_path)->required();
  ev->add_option("--extracted", extracted_path)->required();
  ev->add_option("--samples", samples);
  ev->add_option("--seed", eseed);
  ev->add_option("--dataset", dataset_path, "labelled dataset file for accuracy");
  ev->add_flag("--softmax", softmax, "eps-delta over softmax outputs");

  auto* snrc = app.add_subcommand("snr-report", "per-sample SNR of simulated traces");
  std::string snr_model, snr_out = "snr.csv";
  int snr_layer = 0, snr_unit = 0, snr_row = -1, snr_col = -1, snr_traces = 10000;
  double snr_sigma = 4.0;
  uint64_t snr_seed = 7;
  snrc->add_option("--model", snr_model)->required();
  snrc->add_option("--layer", snr_layer, "relu layer ordinal");
  snrc->add_option("--unit", snr_unit);
  snrc->add_option("--row", snr_row);
  snrc->add_option("--col", snr_col);
  snrc->add_option("--traces", snr_traces);
  snrc->add_option("--sigma", snr_sigma);
  snrc->add_option("--seed", snr_seed);
  snrc->add_option("--out", snr_out);

  auto* sc = app.add_subcommand("success-curve", "majority-vote success rate vs trace count");
  double p = 0.859;
  int max_n = 15;
  std::string sc_out;
  sc->add_option("--p", p, "single-trace success probability");
  sc->add_option("--max-n", max_n);
  sc->add_option("--out", sc_out, "CSV path (default stdout)");

  auto* cen = app.add_subcommand("special-census", "per-layer neuron kinds and query costs");
  std::string census_report;
  cen->add_option("--report", census_report, "report JSON from extract")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_model(arch, precision, seed, out);
    if (ext->parsed()) return cmd_extract(config, overrides);
    if (ev->parsed())
      return cmd_evaluate(victim_path, extracted_path, samples, eseed, dataset_path, softmax);
    if (snrc->parsed())
      return cmd_snr_report(snr_model, snr_layer, snr_unit, snr_row, snr_col, snr_traces,
                            snr_sigma, snr_seed, snr_out);
    if (sc->parsed()) return cmd_success_curve(p, max_n, sc_out);
    if (cen->parsed()) return cmd_special_census(census_report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
