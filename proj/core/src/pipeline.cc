// Copyright 2026 The hfq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hfq/pipeline.h"

#include <algorithm>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "hfq/error.h"
#include "hfq/serialization.h"

namespace hfq {
namespace {

using nlohmann::json;

constexpr std::pair<Stage, std::string_view> kStageNames[] = {
    {Stage::kBnFold, "bn_fold"},
    {Stage::kOutlierRemoval, "outlier_removal"},
    {Stage::kSnc, "snc"},
    {Stage::kEqualization, "equalization"},
    {Stage::kPerChannelWeights, "per_channel_weights"},
    {Stage::kBiasCorrection, "bias_correction"},
};

template <typename F>
auto run_stage(std::string_view stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), "stage '" + std::string(stage) + "': " + e.what());
  }
}

Graph strip_quantization(const Graph& g) {
  Graph out = g;
  out.input_quant.reset();
  for (Node& n : out.nodes) {
    n.output_quant.reset();
    n.weight_quant.reset();
  }
  return out;
}

StatsStore gather(const Graph& g, const CalibrationSet& data, const PipelineConfig& cfg) {
  StatsStore stats = collect_statistics(g, data, cfg.bins);
  if (cfg.outlier_removal) stats.apply_outlier_removal(cfg.z_threshold);
  return stats;
}

// Picks and stores the quantizer of one tensor. Tensors carrying an SNC shift
// stay unsigned; otherwise a tensor is unsigned when it never went negative.
void select_tensor(Graph& g, const std::string& tensor, const StatsStore& stats,
                   const PipelineConfig& cfg, std::vector<ActivationRecord>& records) {
  const TensorStats& s = stats.at(tensor);
  const Node* n = g.find(tensor);
  const bool shifted = n && n->out_shift != 0.0;
  const bool is_signed = !shifted && s.min < 0.0;
  const ThresholdResult r =
      select_activation_threshold(s, cfg.bits, is_signed, cfg.measure, cfg.iterations);
  const QuantSpec spec{cfg.bits, is_signed, r.exponent};
  g.set_tensor_quant(tensor, spec);
  ActivationRecord rec{tensor, spec, r.nc_exponent, r.error, r.nc_error, s.outliers_removed()};
  auto it = std::find_if(records.begin(), records.end(),
                         [&](const ActivationRecord& a) { return a.tensor == tensor; });
  if (it == records.end()) {
    records.push_back(std::move(rec));
  } else {
    *it = std::move(rec);
  }
}

void reselect(Graph& g, const std::vector<std::string>& touched, const StatsStore& stats,
              const PipelineConfig& cfg, std::vector<ActivationRecord>& records) {
  const std::set<std::string> unique(touched.begin(), touched.end());
  for (const std::string& t : g.quantization_points()) {
    if (unique.count(t)) select_tensor(g, t, stats, cfg, records);
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json config_json(const PipelineConfig& c) {
  json stages = json::object();
  for (Stage s : all_stages()) stages[std::string(stage_name(s))] = c.enabled(s);
  return {{"bits", c.bits},
          {"error", error_measure_name(c.measure)},
          {"z_threshold", c.z_threshold},
          {"snc_alpha", c.snc_alpha},
          {"iterations", c.iterations},
          {"bins", c.bins},
          {"stages", std::move(stages)}};
}

std::string config_summary(const PipelineConfig& c) {
  std::string out = "bits=" + std::to_string(c.bits) + " error=" +
                    std::string(error_measure_name(c.measure)) + " disabled=";
  std::string off;
  for (Stage s : all_stages()) {
    if (!c.enabled(s)) off += (off.empty() ? "" : ",") + std::string(stage_name(s));
  }
  return out + (off.empty() ? "none" : off);
}

}  // namespace

std::string_view stage_name(Stage s) {
  for (const auto& [stage, name] : kStageNames) {
    if (stage == s) return name;
  }
  return "unknown";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (const auto& [stage, n] : kStageNames) {
    if (n == name) return stage;
  }
  return std::nullopt;
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> v;
    for (const auto& [stage, name] : kStageNames) v.push_back(stage);
    return v;
  }();
  return stages;
}

bool PipelineConfig::enabled(Stage s) const {
  switch (s) {
    case Stage::kBnFold: return bn_fold;
    case Stage::kOutlierRemoval: return outlier_removal;
    case Stage::kSnc: return snc;
    case Stage::kEqualization: return equalization;
    case Stage::kPerChannelWeights: return per_channel_weights;
    case Stage::kBiasCorrection: return bias_correction;
  }
  return false;
}

void PipelineConfig::set(Stage s, bool on) {
  switch (s) {
    case Stage::kBnFold: bn_fold = on; break;
    case Stage::kOutlierRemoval: outlier_removal = on; break;
    case Stage::kSnc: snc = on; break;
    case Stage::kEqualization: equalization = on; break;
    case Stage::kPerChannelWeights: per_channel_weights = on; break;
    case Stage::kBiasCorrection: bias_correction = on; break;
  }
}

PipelineConfig PipelineConfig::baseline() {
  PipelineConfig c;
  c.measure = ErrorMeasure::kNoClipping;
  for (Stage s : all_stages()) c.set(s, false);
  return c;
}

void PipelineConfig::validate() const {
  if (bits < 2 || bits > 8) throw Error(ErrorCode::kInvalidArgument, "bits must lie in [2, 8]");
  if (!(z_threshold > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "z-score threshold must be positive");
  }
  if (!(snc_alpha > 0.0 && snc_alpha < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "SNC alpha must lie in (0, 1)");
  }
  if (iterations < 0) throw Error(ErrorCode::kInvalidArgument, "iterations must be >= 0");
  if (bins == 0) throw Error(ErrorCode::kInvalidArgument, "histogram needs at least one bin");
}

PipelineResult quantize_pipeline(const Graph& model, const CalibrationSet& data,
                                 const PipelineConfig& cfg) {
  cfg.validate();
  if (data.samples.empty()) throw Error(ErrorCode::kEmptyInput, "calibration set empty");
  model.validate();

  PipelineResult result;
  PipelineReport& report = result.report;
  report.config = cfg;
  Graph g = strip_quantization(model);

  if (cfg.bn_fold) g = run_stage("bn_fold", [&] { return fold_batch_norm(g, &report.entries); });

  StatsStore stats = run_stage("statistics", [&] { return gather(g, data, cfg); });

  run_stage("activation_thresholds", [&] {
    for (const std::string& t : g.quantization_points()) {
      select_tensor(g, t, stats, cfg, report.activations);
    }
    return 0;
  });

  if (cfg.snc) {
    run_stage("snc", [&] {
      SncResult r = apply_snc(g, stats, cfg.snc_alpha, &report.entries);
      if (r.touched.empty()) return 0;
      g = std::move(r.graph);
      stats = gather(g, data, cfg);
      reselect(g, r.touched, stats, cfg, report.activations);
      return 0;
    });
  }

  if (cfg.equalization) {
    run_stage("equalization", [&] {
      EqualizationResult r = equalize_activations(g, stats, &report.entries);
      if (r.touched.empty()) return 0;
      g = std::move(r.graph);
      stats = gather(g, data, cfg);
      reselect(g, r.touched, stats, cfg, report.activations);
      return 0;
    });
  }

  run_stage("weight_thresholds", [&] {
    for (Node& n : g.nodes) {
      if (!n.is_linear()) continue;
      WeightRecord rec{n.id, select_weight_thresholds(n.weight, cfg.bits, cfg.iterations,
                                                      cfg.measure, cfg.per_channel_weights)};
      std::vector<int> exponents;
      for (const ThresholdResult& r : rec.channels) exponents.push_back(r.exponent);
      n.weight_quant = WeightQuant::quantize(n.weight, cfg.bits, std::move(exponents));
      report.weights.push_back(std::move(rec));
    }
    return 0;
  });

  if (cfg.bias_correction) {
    g = run_stage("bias_correction",
                  [&] { return bias_correction(g, stats, nullptr, &report.entries); });
  }

  run_stage("finalize", [&] {
    require_quantized(g);
    return 0;
  });
  result.graph = std::move(g);
  return result;
}

std::string PipelineReport::to_json() const {
  json stages = json::array();
  for (const TransformEntry& e : entries) {
    stages.push_back({{"stage", e.stage},
                      {"layer", e.layer},
                      {"action", e.action},
                      {"params", e.params},
                      {"warning", e.warning}});
  }
  json acts = json::array();
  for (const ActivationRecord& a : activations) {
    acts.push_back({{"tensor", a.tensor},
                    {"bits", a.spec.bits},
                    {"signed", a.spec.is_signed},
                    {"exponent", a.spec.exponent},
                    {"nc_exponent", a.nc_exponent},
                    {"error", optional_json(a.error)},
                    {"nc_error", optional_json(a.nc_error)},
                    {"outliers_removed", a.outliers_removed}});
  }
  json weights_json = json::array();
  for (const WeightRecord& w : weights) {
    json exps = json::array(), ncs = json::array(), errs = json::array();
    for (const ThresholdResult& r : w.channels) {
      exps.push_back(r.exponent);
      ncs.push_back(r.nc_exponent);
      errs.push_back(optional_json(r.error));
    }
    weights_json.push_back(
        {{"layer", w.layer}, {"exponents", exps}, {"nc_exponents", ncs}, {"errors", errs}});
  }
  json j{{"schema_version", kSchemaVersion},
         {"config", config_json(config)},
         {"stages", std::move(stages)},
         {"activations", std::move(acts)},
         {"weights", std::move(weights_json)}};
  j["text"] = to_text();
  return j.dump(2);
}

std::string PipelineReport::to_text() const {
  std::string out = "config: " + config_summary(config) + "\n";
  char line[256];
  for (const TransformEntry& e : entries) {
    std::snprintf(line, sizeof line, "%s[%s] %s: %s (%s)\n", e.warning ? "warning: " : "",
                  e.stage.c_str(), e.layer.c_str(), e.action.c_str(), e.params.c_str());
    out += line;
  }
  out += "activation quantizers:\n";
  for (const ActivationRecord& a : activations) {
    std::snprintf(line, sizeof line, "  %-24s %-8s t=2^%d (nc 2^%d)\n", a.tensor.c_str(),
                  a.spec.is_signed ? "signed" : "unsigned", a.spec.exponent, a.nc_exponent);
    out += line;
  }
  out += "weight quantizers:\n";
  for (const WeightRecord& w : weights) {
    int lo = w.channels.front().exponent, hi = lo;
    for (const ThresholdResult& r : w.channels) {
      lo = std::min(lo, r.exponent);
      hi = std::max(hi, r.exponent);
    }
    std::snprintf(line, sizeof line, "  %-24s %zu channels, t in [2^%d, 2^%d]\n",
                  w.layer.c_str(), w.channels.size(), lo, hi);
    out += line;
  }
  return out;
}

std::vector<std::pair<std::string, PipelineConfig>> ablation_chain(const PipelineConfig& full) {
  std::vector<std::pair<std::string, PipelineConfig>> chain;
  PipelineConfig c = full;
  c.measure = ErrorMeasure::kNoClipping;
  for (Stage s : all_stages()) c.set(s, false);
  chain.emplace_back("baseline", c);
  const auto step = [&](Stage s) {
    c.set(s, full.enabled(s));
    chain.emplace_back("+" + std::string(stage_name(s)), c);
  };
  step(Stage::kBnFold);
  step(Stage::kEqualization);
  c.measure = full.measure;
  chain.emplace_back("+" + std::string(error_measure_name(full.measure)), c);
  step(Stage::kOutlierRemoval);
  step(Stage::kPerChannelWeights);
  step(Stage::kBiasCorrection);
  step(Stage::kSnc);
  return chain;
}

AblationResult run_ablation(const Graph& model, const CalibrationSet& calib,
                            const CalibrationSet& eval, const PipelineConfig& full) {
  AblationResult result;
  std::vector<std::string> common;
  for (auto& [name, cfg] : ablation_chain(full)) {
    PipelineResult q = quantize_pipeline(model, calib, cfg);
    AblationRow row{name, cfg, evaluate(model, q.graph, eval), 0.0};
    std::vector<std::string> names;
    for (const LayerError& l : row.eval.layers) names.push_back(l.tensor);
    if (result.rows.empty()) {
      common = names;
    } else {
      std::erase_if(common, [&](const std::string& t) {
        return std::find(names.begin(), names.end(), t) == names.end();
      });
    }
    result.rows.push_back(std::move(row));
  }
  for (AblationRow& row : result.rows) row.mean_mse = row.eval.mean_layer_mse(common);
  result.common_tensors = std::move(common);
  return result;
}

std::string AblationResult::to_json() const {
  json rows_json = json::array();
  for (const AblationRow& r : rows) {
    rows_json.push_back({{"name", r.name},
                         {"config", config_json(r.config)},
                         {"float_score", r.eval.float_score},
                         {"quant_score", r.eval.quant_score},
                         {"delta", r.eval.delta},
                         {"mean_layer_mse", r.mean_mse}});
  }
  json j{{"schema_version", PipelineReport::kSchemaVersion},
         {"common_tensors", common_tensors},
         {"rows", std::move(rows_json)}};
  return j.dump(2);
}

std::string AblationResult::to_text() const {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-22s %10s %10s %8s %14s\n", "configuration", "float",
                "quant", "delta", "mean MSE");
  out += line;
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %10.2f %10.2f %8.2f %14.6e\n", r.name.c_str(),
                  r.eval.float_score, r.eval.quant_score, r.eval.delta, r.mean_mse);
    out += line;
  }
  return out;
}

}  // namespace hfq
