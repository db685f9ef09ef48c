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

// hfq: command-line front end for the quantization pipeline.
//
//   hfq quantize --model m.json --data calib.json --out q.json [options]
//   hfq eval     --float m.json --quant q.json --data eval.json [--labels l]
//   hfq stats    --model m.json --data calib.json --out stats.csv
//   hfq ablate   --model m.json --data calib.json [--eval eval.json]
//
// Exit codes: 0 success, 1 pipeline or I/O failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hfq/engine.h"
#include "hfq/error.h"
#include "hfq/pipeline.h"
#include "hfq/serialization.h"
#include "hfq/stats.h"
#include "hfq/transforms.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw hfq::Error(hfq::ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw hfq::Error(hfq::ErrorCode::kIo, "cannot write '" + path.string() + "'");
}

// Labels come from a dataset container (.json) or a text file holding one
// integer per sample.
std::vector<int> read_labels(const std::filesystem::path& path) {
  if (path.extension() == ".json") return hfq::load_dataset(path).labels;
  std::ifstream in(path);
  if (!in) throw hfq::Error(hfq::ErrorCode::kIo, "cannot read '" + path.string() + "'");
  std::vector<int> labels;
  std::string token;
  while (in >> token) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || v < 0) {
      throw hfq::Error(hfq::ErrorCode::kMalformedManifest, "bad label '" + token + "'");
    }
    labels.push_back(v);
  }
  return labels;
}

struct Options {
  std::string model, data, out, report, float_model, quant_model, labels, eval_data, json_out;
  int bits = 8;
  std::string error = "mse";
  double z_threshold = 24.0;
  double snc_alpha = 0.25;
  int iterations = 10;
  std::size_t bins = hfq::kDefaultHistogramBins;
  std::vector<std::string> disable;
};

hfq::PipelineConfig make_config(const Options& o) {
  hfq::PipelineConfig cfg;
  cfg.bits = o.bits;
  const auto measure = hfq::parse_error_measure(o.error);
  if (!measure) throw UsageError("unknown error measure '" + o.error + "'");
  cfg.measure = *measure;
  cfg.z_threshold = o.z_threshold;
  cfg.snc_alpha = o.snc_alpha;
  cfg.iterations = o.iterations;
  cfg.bins = o.bins;
  for (const std::string& name : o.disable) {
    const auto stage = hfq::parse_stage(name);
    if (!stage) throw UsageError("unknown stage '" + name + "'");
    cfg.set(*stage, false);
  }
  try {
    cfg.validate();
  } catch (const hfq::Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void add_pipeline_options(CLI::App* app, Options& o) {
  app->add_option("--bits", o.bits, "bit width for weights and activations")
      ->capture_default_str();
  app->add_option("--error", o.error, "threshold error measure: mse, mae, kl or nc")
      ->capture_default_str();
  app->add_option("--z-threshold", o.z_threshold, "z-score for outlier removal")
      ->capture_default_str();
  app->add_option("--snc-alpha", o.snc_alpha, "shift negative correction ratio")
      ->capture_default_str();
  app->add_option("--iterations", o.iterations, "threshold search iterations")
      ->capture_default_str();
  app->add_option("--bins", o.bins, "histogram bins")->capture_default_str();
  app->add_option("--disable", o.disable, "comma-separated stages to skip")->delimiter(',');
}

int cmd_quantize(const Options& o) {
  const hfq::PipelineConfig cfg = make_config(o);
  const hfq::Graph model = hfq::load_model(o.model);
  const hfq::CalibrationSet data = hfq::load_dataset(o.data);
  const hfq::PipelineResult r = hfq::quantize_pipeline(model, data, cfg);
  hfq::save_quantized(r.graph, o.out);
  for (const hfq::TransformEntry& e : r.report.entries) {
    if (e.warning) std::cerr << "warning: " << e.stage << " " << e.layer << ": " << e.params << "\n";
  }
  if (!o.report.empty()) write_text(o.report, r.report.to_json());
  std::cout << r.report.to_text();
  return 0;
}

int cmd_eval(const Options& o) {
  const hfq::Graph f = hfq::load_model(o.float_model);
  const hfq::Graph q = hfq::load_model(o.quant_model);
  hfq::CalibrationSet data = hfq::load_dataset(o.data);
  if (!o.labels.empty()) data.labels = read_labels(o.labels);
  const hfq::EvalReport r = hfq::evaluate(f, q, data);
  if (!o.json_out.empty()) write_text(o.json_out, r.to_json());
  std::cout << r.to_text();
  return 0;
}

int cmd_stats(const Options& o) {
  hfq::Graph model = hfq::load_model(o.model);
  model = hfq::fold_batch_norm(model);
  const hfq::CalibrationSet data = hfq::load_dataset(o.data);
  const hfq::StatsStore stats = hfq::collect_statistics(model, data, o.bins);
  write_text(o.out, hfq::stats_to_csv(model, stats));
  return 0;
}

int cmd_ablate(const Options& o) {
  const hfq::PipelineConfig cfg = make_config(o);
  const hfq::Graph model = hfq::load_model(o.model);
  const hfq::CalibrationSet calib = hfq::load_dataset(o.data);
  const hfq::CalibrationSet eval = o.eval_data.empty() ? calib : hfq::load_dataset(o.eval_data);
  const hfq::AblationResult r = hfq::run_ablation(model, calib, eval, cfg);
  if (!o.json_out.empty()) write_text(o.json_out, r.to_json());
  std::cout << r.to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-of-two post-training quantization"};
  app.require_subcommand(1);
  Options o;

  CLI::App* quantize = app.add_subcommand("quantize", "quantize a float model");
  quantize->add_option("--model", o.model, "float model manifest")->required();
  quantize->add_option("--data", o.data, "calibration dataset manifest")->required();
  quantize->add_option("--out", o.out, "quantized model manifest to write")->required();
  quantize->add_option("--report", o.report, "write the pipeline report as JSON");
  add_pipeline_options(quantize, o);

  CLI::App* eval = app.add_subcommand("eval", "compare a quantized model with its float model");
  eval->add_option("--float", o.float_model, "float model manifest")->required();
  eval->add_option("--quant", o.quant_model, "quantized model manifest")->required();
  eval->add_option("--data", o.data, "evaluation dataset manifest")->required();
  eval->add_option("--labels", o.labels, "labels (dataset manifest or one integer per line)");
  eval->add_option("--json", o.json_out, "write the report as JSON");

  CLI::App* stats = app.add_subcommand("stats", "dump per-channel activation statistics");
  stats->add_option("--model", o.model, "float model manifest")->required();
  stats->add_option("--data", o.data, "calibration dataset manifest")->required();
  stats->add_option("--out", o.out, "CSV file to write")->required();
  stats->add_option("--bins", o.bins, "histogram bins")->capture_default_str();

  CLI::App* ablate = app.add_subcommand("ablate", "run the incremental stage comparison");
  ablate->add_option("--model", o.model, "float model manifest")->required();
  ablate->add_option("--data", o.data, "labeled calibration dataset manifest")->required();
  ablate->add_option("--eval", o.eval_data, "labeled evaluation dataset (default: --data)");
  ablate->add_option("--json", o.json_out, "write the table as JSON");
  add_pipeline_options(ablate, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*quantize) return cmd_quantize(o);
    if (*eval) return cmd_eval(o);
    if (*stats) return cmd_stats(o);
    if (*ablate) return cmd_ablate(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const hfq::Error& e) {
    std::cerr << "error [" << hfq::error_code_name(e.code()) << "]: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
