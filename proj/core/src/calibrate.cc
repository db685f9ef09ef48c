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

#include "hfq/calibrate.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "hfq/error.h"

namespace hfq {
namespace {

constexpr double kKlSmoothing = 1e-10;

// Integral of the pointwise error over [u, v] when every x there maps to q.
double piece_integral(double u, double v, double q, ErrorMeasure measure) {
  const double a = u - q;
  const double b = v - q;
  const double w = v - u;
  if (measure == ErrorMeasure::kMse) return w * (a * a + a * b + b * b) / 3.0;
  if (a >= 0.0) return w * (a + b) / 2.0;
  if (b <= 0.0) return -w * (a + b) / 2.0;
  return (a * a + b * b) / 2.0;
}

double point_error(double x, double q, ErrorMeasure measure) {
  const double d = q - x;
  return measure == ErrorMeasure::kMse ? d * d : std::abs(d);
}

// Exact integral of the error over one bin under a uniform density.
double bin_integral(double lo, double hi, const QuantSpec& spec, ErrorMeasure measure) {
  const double s = spec.step();
  const std::int64_t kmin = spec.int_min();
  const std::int64_t kmax = spec.int_max();
  const std::int64_t klo = quantize_to_int(lo, spec);
  const std::int64_t khi = quantize_to_int(hi, spec);
  double sum = 0.0;
  for (std::int64_t k = klo; k <= khi; ++k) {
    const double kd = static_cast<double>(k);
    const double lower = k == kmin ? -std::numeric_limits<double>::infinity() : (kd - 0.5) * s;
    const double upper = k == kmax ? std::numeric_limits<double>::infinity() : (kd + 0.5) * s;
    const double u = std::max(lo, lower);
    const double v = std::min(hi, upper);
    if (v > u) sum += piece_integral(u, v, kd * s, measure);
  }
  return sum;
}

// KL(P || Q) where P is the normalized histogram and Q spreads the mass of
// every group of bins sharing a quantized level evenly over the group's
// non-empty bins.
double kl_error(const Histogram& h, const QuantSpec& spec) {
  std::map<std::int64_t, std::pair<double, std::size_t>> groups;  // level -> (mass, bins)
  std::vector<std::int64_t> level(h.bins());
  for (std::size_t i = 0; i < h.bins(); ++i) {
    if (h.counts[i] <= 0.0) continue;
    level[i] = quantize_to_int(h.center(i), spec);
    auto& g = groups[level[i]];
    g.first += h.counts[i];
    g.second += 1;
  }
  const double total = h.total();
  const double n = static_cast<double>(h.bins());
  const double p_norm = 1.0 + kKlSmoothing * n;
  const double q_norm = 1.0 + kKlSmoothing * n;
  double kl = 0.0;
  for (std::size_t i = 0; i < h.bins(); ++i) {
    double p = kKlSmoothing;
    double q = kKlSmoothing;
    if (h.counts[i] > 0.0) {
      const auto& g = groups[level[i]];
      p += h.counts[i] / total;
      q += g.first / static_cast<double>(g.second) / total;
    }
    p /= p_norm;
    q /= q_norm;
    kl += p * std::log(p / q);
  }
  return kl;
}

Histogram histogram_of(std::span<const double> values, std::size_t bins) {
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(lo < hi)) {
    const double w = std::max(std::abs(lo), 1.0) * 1e-9;
    lo -= w;
    hi += w;
  }
  Histogram h = Histogram::uniform(lo, hi, bins);
  for (double v : values) h.add(v);
  return h;
}

}  // namespace

std::string_view error_measure_name(ErrorMeasure m) {
  switch (m) {
    case ErrorMeasure::kNoClipping: return "nc";
    case ErrorMeasure::kMse: return "mse";
    case ErrorMeasure::kMae: return "mae";
    case ErrorMeasure::kKl: return "kl";
  }
  return "unknown";
}

std::optional<ErrorMeasure> parse_error_measure(std::string_view name) {
  for (ErrorMeasure m : {ErrorMeasure::kNoClipping, ErrorMeasure::kMse, ErrorMeasure::kMae,
                         ErrorMeasure::kKl}) {
    if (error_measure_name(m) == name) return m;
  }
  return std::nullopt;
}

double ThresholdResult::threshold() const { return std::ldexp(1.0, exponent); }

int no_clipping_threshold(double max_abs) {
  if (!std::isfinite(max_abs) || max_abs < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "max_abs must be finite and non-negative");
  }
  if (max_abs == 0.0) return kMinExponent;
  int e = 0;
  const double mantissa = std::frexp(max_abs, &e);  // max_abs = mantissa * 2^e
  return mantissa == 0.5 ? e - 1 : e;
}

double histogram_error(const Histogram& h, const QuantSpec& spec, ErrorMeasure measure,
                       BinModel model) {
  if (measure == ErrorMeasure::kNoClipping) {
    throw Error(ErrorCode::kInvalidArgument, "the no-clipping measure has no error function");
  }
  spec.validate();
  const double total = h.total();
  if (!(total > 0.0)) throw Error(ErrorCode::kEmptyInput, "histogram has zero total count");
  if (measure == ErrorMeasure::kKl) return kl_error(h, spec);
  double sum = 0.0;
  for (std::size_t i = 0; i < h.bins(); ++i) {
    const double c = h.counts[i];
    if (c <= 0.0) continue;
    if (model == BinModel::kCenter) {
      const double x = h.center(i);
      sum += c * point_error(x, fake_quantize(x, spec), measure);
    } else {
      const double lo = h.edges[i], hi = h.edges[i + 1];
      sum += c / (hi - lo) * bin_integral(lo, hi, spec, measure);
    }
  }
  return sum / total;
}

double values_error(std::span<const double> values, const QuantSpec& spec, ErrorMeasure measure) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "empty input");
  switch (measure) {
    case ErrorMeasure::kNoClipping:
      throw Error(ErrorCode::kInvalidArgument, "the no-clipping measure has no error function");
    case ErrorMeasure::kKl:
      return kl_error(histogram_of(values, kDefaultHistogramBins), spec);
    default:
      break;
  }
  double sum = 0.0;
  for (double v : values) sum += point_error(v, fake_quantize(v, spec), measure);
  return sum / static_cast<double>(values.size());
}

ThresholdResult select_threshold(const std::function<double(int)>& err, int nc_exponent,
                                 int iterations) {
  if (iterations < 0) throw Error(ErrorCode::kInvalidArgument, "iterations must be >= 0");
  ThresholdResult r;
  r.nc_exponent = nc_exponent;
  r.exponent = nc_exponent;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= iterations; ++i) {
    const int m = nc_exponent - i;
    const double e = err(m);
    if (i == 0) r.nc_error = e;
    ++r.evaluations;
    if (e < best) {
      best = e;
      r.exponent = m;
    }
  }
  r.error = best;
  return r;
}

ThresholdResult select_activation_threshold(const TensorStats& stats, int bits, bool is_signed,
                                            ErrorMeasure measure, int iterations) {
  const Histogram& h = stats.threshold_histogram();
  double reach = 0.0;
  for (std::size_t i = 0; i < h.bins(); ++i) {
    if (h.counts[i] > 0.0) {
      reach = std::max({reach, std::abs(h.edges[i]), std::abs(h.edges[i + 1])});
    }
  }
  const int nc = no_clipping_threshold(std::min(reach, stats.max_abs));
  if (measure == ErrorMeasure::kNoClipping || stats.max_abs == 0.0) {
    return ThresholdResult{nc, std::nullopt, std::nullopt, nc, 0};
  }
  return select_threshold(
      [&](int m) { return histogram_error(h, QuantSpec{bits, is_signed, m}, measure); }, nc,
      iterations);
}

std::vector<ThresholdResult> select_weight_thresholds(const Tensor& weights, int bits,
                                                      int iterations, ErrorMeasure measure,
                                                      bool per_channel) {
  if (weights.empty() || weights.rank() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "weights must be a linear-layer weight tensor");
  }
  const std::size_t c = weights.dims().back();
  const auto search = [&](std::span<const double> w) {
    double m = 0.0;
    for (double v : w) m = std::max(m, std::abs(v));
    const int nc = no_clipping_threshold(m);
    if (m == 0.0) return ThresholdResult{nc, 0.0, 0.0, nc, 0};
    if (measure == ErrorMeasure::kNoClipping) {
      return ThresholdResult{nc, std::nullopt, std::nullopt, nc, 0};
    }
    return select_threshold(
        [&](int e) { return values_error(w, QuantSpec{bits, true, e}, measure); }, nc,
        iterations);
  };
  if (!per_channel) return std::vector<ThresholdResult>(c, search(weights.data()));
  std::vector<ThresholdResult> out;
  out.reserve(c);
  std::vector<double> slice(weights.size() / c);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < slice.size(); ++i) slice[i] = weights[i * c + k];
    out.push_back(search(slice));
  }
  return out;
}

}  // namespace hfq
