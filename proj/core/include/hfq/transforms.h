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

#ifndef HFQ_TRANSFORMS_H_
#define HFQ_TRANSFORMS_H_

#include <string>
#include <vector>

#include "hfq/ir.h"
#include "hfq/stats.h"

namespace hfq {

// One line of the pipeline report.
struct TransformEntry {
  std::string stage;
  std::string layer;
  std::string action;
  std::string params;
  bool warning = false;

  friend bool operator==(const TransformEntry&, const TransformEntry&) = default;
};

using TransformLog = std::vector<TransformEntry>;

// Folds every batch_norm node into the linear node feeding it. The folded
// node takes the batch_norm node's id so downstream references are kept.
// Throws kNotFoldable when a batch_norm does not directly follow a linear
// node whose output it alone consumes.
Graph fold_batch_norm(const Graph& g, TransformLog* log = nullptr);

struct SncResult {
  Graph graph;
  // Tensors whose values changed: shifted activations and the pooling or
  // flatten outputs the shift propagates through.
  std::vector<std::string> touched;
};

// Activation kinds that shift negative correction may rewrite.
bool snc_candidate(const Activation& a);

// For every candidate activation with observed minimum s < 0 and |s| / t <
// alpha, where t is the tensor's current threshold, adds |s| to the
// activation, switches its quantizer to unsigned with the same threshold and
// subtracts the shift in the consuming linear layers' biases. Pooling and
// flatten nodes in between pass the shift through. A tensor read by anything
// else, or that is a graph output, is left alone and a warning is logged.
SncResult apply_snc(const Graph& g, const StatsStore& stats, double alpha,
                    TransformLog* log = nullptr);

struct EqualizationTriple {
  std::string producer;    // linear node whose output channels are scaled by 1/s
  std::string activation;  // relu, clipped relu or prelu
  std::vector<std::string> passthrough;  // max_pool, global_avg_pool, flatten
  std::string consumer;    // linear node whose input channels are scaled by s
  std::vector<double> scale;  // s_k, 0 < s_k <= 1

  friend bool operator==(const EqualizationTriple&, const EqualizationTriple&) = default;
};

struct EqualizationPlan {
  std::vector<EqualizationTriple> triples;
};

struct EqualizationResult {
  Graph graph;
  EqualizationPlan plan;
  std::vector<std::string> touched;
};

// s = min(v / t, 1); channels that never fire (v <= 0) keep s = 1.
double equalization_scale(double channel_max, double threshold);

// Max channel equalization over linear -> {relu, relu6, prelu} -> linear
// patterns, optionally with max_pool, global_avg_pool or flatten between the
// activation and the second linear node. Every tensor on the path must have a
// single consumer and the activation must carry a threshold and no shift.
EqualizationResult equalize_activations(const Graph& g, const StatsStore& stats,
                                        TransformLog* log = nullptr);

struct BiasCorrectionRecord {
  std::string layer;
  std::vector<double> weight_error;  // sum of W - W~ per output channel
  std::vector<double> input_mean;    // window means, see StatsStore::window_mean
  std::vector<double> delta;         // bias change per output channel
};

// b~ = b + (W - W~) E[x] for every linear node with quantized weights, with
// E[x] taken per kernel tap so that the layer's mean output over the
// calibration data matches the float layer. Only biases change. Throws
// kMissingStatistics when a layer has no window means.
Graph bias_correction(const Graph& g, const StatsStore& stats,
                      std::vector<BiasCorrectionRecord>* records = nullptr,
                      TransformLog* log = nullptr);

}  // namespace hfq

#endif  // HFQ_TRANSFORMS_H_
