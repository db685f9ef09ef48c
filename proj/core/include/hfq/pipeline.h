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

#ifndef HFQ_PIPELINE_H_
#define HFQ_PIPELINE_H_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hfq/calibrate.h"
#include "hfq/engine.h"
#include "hfq/ir.h"
#include "hfq/stats.h"
#include "hfq/transforms.h"

namespace hfq {

// Stages that can be switched off.
enum class Stage {
  kBnFold,
  kOutlierRemoval,
  kSnc,
  kEqualization,
  kPerChannelWeights,
  kBiasCorrection,
};

std::string_view stage_name(Stage s);
std::optional<Stage> parse_stage(std::string_view name);
const std::vector<Stage>& all_stages();

struct PipelineConfig {
  int bits = 8;
  ErrorMeasure measure = ErrorMeasure::kMse;
  double z_threshold = 24.0;
  double snc_alpha = 0.25;
  int iterations = 10;
  std::size_t bins = kDefaultHistogramBins;

  bool bn_fold = true;
  bool outlier_removal = true;
  bool snc = true;
  bool equalization = true;
  bool per_channel_weights = true;
  bool bias_correction = true;

  bool enabled(Stage s) const;
  void set(Stage s, bool on);

  // No-clipping thresholds with every optional stage off.
  static PipelineConfig baseline();

  // Throws kInvalidArgument on out-of-range values.
  void validate() const;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

struct ActivationRecord {
  std::string tensor;
  QuantSpec spec;
  int nc_exponent = 0;
  std::optional<double> error;
  std::optional<double> nc_error;
  bool outliers_removed = false;
};

struct WeightRecord {
  std::string layer;
  std::vector<ThresholdResult> channels;
};

struct PipelineReport {
  static constexpr int kSchemaVersion = 1;

  PipelineConfig config;
  TransformLog entries;
  std::vector<ActivationRecord> activations;
  std::vector<WeightRecord> weights;

  std::string to_json() const;
  std::string to_text() const;
};

struct PipelineResult {
  Graph graph;  // quantized: every quantization point and linear weight filled
  PipelineReport report;
};

// Runs the full post-training flow on a float model: batch-norm folding,
// statistics, outlier removal, activation thresholds, shift negative
// correction, equalization (both followed by fresh statistics and new
// thresholds for the tensors they touched), weight thresholds and bias
// correction. Stage failures are rethrown with the stage name prefixed.
PipelineResult quantize_pipeline(const Graph& model, const CalibrationSet& data,
                                 const PipelineConfig& cfg = {});

struct AblationRow {
  std::string name;
  PipelineConfig config;
  EvalReport eval;
  double mean_mse = 0.0;  // over AblationResult::common_tensors
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::string> common_tensors;

  std::string to_json() const;
  std::string to_text() const;
};

// Incremental configurations starting from the no-clipping baseline:
// baseline, +bn_fold, +equalization, +<measure>, +outlier_removal,
// +per_channel_weights, +bias_correction, +snc. The measure and
// hyper-parameters come from `full`, which is also the last row.
std::vector<std::pair<std::string, PipelineConfig>> ablation_chain(const PipelineConfig& full);

// Quantizes with every chain configuration on `calib` and evaluates on
// `eval`. Per-row mean MSE is taken over the tensors every row shares so the
// rows are comparable.
AblationResult run_ablation(const Graph& model, const CalibrationSet& calib,
                            const CalibrationSet& eval, const PipelineConfig& full = {});

}  // namespace hfq

#endif  // HFQ_PIPELINE_H_
