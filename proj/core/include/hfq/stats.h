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

#ifndef HFQ_STATS_H_
#define HFQ_STATS_H_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hfq/ir.h"

namespace hfq {

inline constexpr std::size_t kDefaultHistogramBins = 2048;

struct Histogram {
  std::vector<double> edges;   // bins() + 1 strictly ascending values
  std::vector<double> counts;  // non-negative

  // Equal-width bins over [lo, hi]; the last edge is exactly hi.
  static Histogram uniform(double lo, double hi, std::size_t bins);

  std::size_t bins() const noexcept { return counts.size(); }
  double center(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }
  double total() const;
  // Values outside the range are clamped into the first or last bin.
  void add(double value, double weight = 1.0);

  // Throws kInvalidArgument on unsorted edges or negative counts.
  void validate() const;

  friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct TensorStats {
  Histogram histogram;
  // Outlier-filtered copy used only for threshold selection.
  std::optional<Histogram> filtered;

  std::vector<double> channel_min;
  std::vector<double> channel_max;
  std::vector<double> channel_mean;
  double min = 0.0;
  double max = 0.0;
  double max_abs = 0.0;
  std::size_t count = 0;  // elements observed over the whole dataset

  const Histogram& threshold_histogram() const { return filtered ? *filtered : histogram; }
  bool outliers_removed() const noexcept { return filtered.has_value(); }
};

class StatsStore {
 public:
  const TensorStats& at(const std::string& tensor) const;
  TensorStats& at(const std::string& tensor);
  bool contains(const std::string& tensor) const { return tensors_.count(tensor) != 0; }
  void set(const std::string& tensor, TensorStats stats) { tensors_[tensor] = std::move(stats); }

  const std::map<std::string, TensorStats>& tensors() const noexcept { return tensors_; }

  // Replaces each tensor's filtered histogram with remove_outliers(histogram).
  void apply_outlier_removal(double z_threshold);

  // Mean of the input value seen by every kernel tap of a linear node, over
  // all output positions and samples (padded taps contribute the node's pad
  // value). Laid out like the node's weight without the output axis:
  // kh x kw x cin for conv2d, kh x kw x c for depthwise, cin for dense.
  const std::vector<double>& window_mean(const std::string& node) const;
  bool has_window_mean(const std::string& node) const { return windows_.count(node) != 0; }
  void set_window_mean(const std::string& node, std::vector<double> mean) {
    windows_[node] = std::move(mean);
  }

 private:
  std::map<std::string, TensorStats> tensors_;
  std::map<std::string, std::vector<double>> windows_;
};

// Runs the float graph over every sample twice: the first pass records exact
// per-tensor and per-channel min/max/mean plus the window means of every
// linear node, the second fills fixed-edge histograms over the exact
// [min, max] of each tensor. Throws kEmptyInput on
// an empty set and kNonFinite naming the layer that produced NaN/Inf.
StatsStore collect_statistics(const Graph& graph, const CalibrationSet& data,
                              std::size_t bins = kDefaultHistogramBins);

// Zeroes every bin whose center lies more than z_threshold count-weighted
// standard deviations from the count-weighted mean. Edges are unchanged. A
// histogram with zero spread, or one that would lose all its mass, is
// returned as is.
Histogram remove_outliers(const Histogram& h, double z_threshold);

// One row per tensor channel: tensor,channel,min,max,mean.
std::string stats_to_csv(const Graph& graph, const StatsStore& stats);

}  // namespace hfq

#endif  // HFQ_STATS_H_
