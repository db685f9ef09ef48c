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

#ifndef HFQ_CALIBRATE_H_
#define HFQ_CALIBRATE_H_

#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hfq/quantizers.h"
#include "hfq/stats.h"

namespace hfq {

// Threshold exponent assigned to tensors or channels that are identically
// zero; keeps the step size positive without taking log(0).
inline constexpr int kMinExponent = -16;

enum class ErrorMeasure {
  kNoClipping,  // skip the search and keep the no-clipping threshold
  kMse,
  kMae,
  kKl,
};

std::string_view error_measure_name(ErrorMeasure m);
std::optional<ErrorMeasure> parse_error_measure(std::string_view name);

// How a histogram stands in for the raw values when estimating the error.
enum class BinModel {
  // Mass spread uniformly over each bin; the error is integrated exactly over
  // the bin. Used for MSE and MAE by default.
  kUniform,
  // All of a bin's mass sits on its center.
  kCenter,
};

struct ThresholdResult {
  int exponent = 0;               // selected threshold is 2^exponent
  std::optional<double> error;    // empty when no error was evaluated (NC)
  std::optional<double> nc_error;  // ERR at the no-clipping threshold
  int nc_exponent = 0;            // no-clipping threshold exponent
  int evaluations = 0;            // ERR(t) evaluations performed

  double threshold() const;
};

// Smallest M with 2^M >= max_abs, i.e. ceil(log2(max_abs)). Returns
// kMinExponent for 0 and throws kInvalidArgument for negative or non-finite
// input.
int no_clipping_threshold(double max_abs);

// Histogram estimate of ERR(t) for the quantizer `spec`, normalized by the
// total count. KL always uses bin centers. Throws kEmptyInput when the
// histogram holds no mass and kInvalidArgument for kNoClipping.
double histogram_error(const Histogram& h, const QuantSpec& spec, ErrorMeasure measure,
                       BinModel model = BinModel::kUniform);

// Exact error over raw values (mean over the values). KL builds a
// kDefaultHistogramBins histogram of the values first.
double values_error(std::span<const double> values, const QuantSpec& spec, ErrorMeasure measure);

// Constrained power-of-two search: evaluates t_i = t_nc / 2^i for
// i = 0..iterations and keeps the first strict minimum, so ties resolve to
// the larger threshold.
ThresholdResult select_threshold(const std::function<double(int exponent)>& err,
                                 int nc_exponent, int iterations);

// Activation threshold from collected statistics. The no-clipping exponent
// comes from the largest magnitude still present in the threshold histogram
// (the outlier-filtered one when available), capped by the exact max_abs.
ThresholdResult select_activation_threshold(const TensorStats& stats, int bits, bool is_signed,
                                            ErrorMeasure measure, int iterations);

// Per-output-channel (or, with per_channel = false, one shared) signed
// threshold for a weight tensor, searched on the raw weights. Zero channels
// get kMinExponent with error 0.
std::vector<ThresholdResult> select_weight_thresholds(const Tensor& weights, int bits,
                                                      int iterations, ErrorMeasure measure,
                                                      bool per_channel = true);

}  // namespace hfq

#endif  // HFQ_CALIBRATE_H_
