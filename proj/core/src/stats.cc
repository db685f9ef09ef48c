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

#include "hfq/stats.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "hfq/engine.h"
#include "hfq/error.h"

namespace hfq {

Histogram Histogram::uniform(double lo, double hi, std::size_t bins) {
  if (bins == 0 || !(lo < hi)) {
    throw Error(ErrorCode::kInvalidArgument, "histogram needs bins > 0 and lo < hi");
  }
  Histogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
  h.edges[bins] = hi;
  h.counts.assign(bins, 0.0);
  return h;
}

double Histogram::total() const {
  double t = 0.0;
  for (double c : counts) t += c;
  return t;
}

void Histogram::add(double value, double weight) {
  const double lo = edges.front();
  const double width = (edges.back() - lo) / static_cast<double>(bins());
  const double pos = std::floor((value - lo) / width);
  const auto last = static_cast<double>(bins() - 1);
  counts[static_cast<std::size_t>(std::clamp(pos, 0.0, last))] += weight;
}

void Histogram::validate() const {
  if (counts.empty() || edges.size() != counts.size() + 1) {
    throw Error(ErrorCode::kInvalidArgument, "histogram needs bins + 1 edges");
  }
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i] < edges[i + 1])) {
      throw Error(ErrorCode::kInvalidArgument, "histogram edges must be strictly ascending");
    }
  }
  for (double c : counts) {
    if (!(c >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "negative histogram count");
  }
}

const TensorStats& StatsStore::at(const std::string& tensor) const {
  auto it = tensors_.find(tensor);
  if (it == tensors_.end()) {
    throw Error(ErrorCode::kMissingStatistics, "no statistics for tensor '" + tensor + "'");
  }
  return it->second;
}

TensorStats& StatsStore::at(const std::string& tensor) {
  return const_cast<TensorStats&>(static_cast<const StatsStore&>(*this).at(tensor));
}

const std::vector<double>& StatsStore::window_mean(const std::string& node) const {
  auto it = windows_.find(node);
  if (it == windows_.end()) {
    throw Error(ErrorCode::kMissingStatistics, "no input means for layer '" + node + "'");
  }
  return it->second;
}

void StatsStore::apply_outlier_removal(double z_threshold) {
  for (auto& [name, s] : tensors_) s.filtered = remove_outliers(s.histogram, z_threshold);
}

namespace {

// A constant tensor still needs a valid range; center one bin on the value.
Histogram histogram_for_range(double lo, double hi, std::size_t bins) {
  if (lo < hi) return Histogram::uniform(lo, hi, bins);
  const double width = std::max(std::abs(lo), 1.0) * 1e-9;
  const double start = lo - (static_cast<double>(bins / 2) + 0.5) * width;
  return Histogram::uniform(start, start + width * static_cast<double>(bins), bins);
}

// Adds, for every tap of the kernel, the sum over output positions of the
// input value under that tap.
void accumulate_windows(const Node& n, const Tensor& x, const Shape& out_shape,
                        std::vector<double>& sum) {
  if (n.kind == OpKind::kDense) {
    for (std::size_t i = 0; i < x.size(); ++i) sum[i] += x[i];
    return;
  }
  const std::size_t ih = x.dims()[0], iw = x.dims()[1], c = x.dims()[2];
  const std::size_t kh = n.weight.dims()[0], kw = n.weight.dims()[1];
  for (std::size_t oy = 0; oy < out_shape[0]; ++oy) {
    for (std::size_t ox = 0; ox < out_shape[1]; ++ox) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * n.stride[0] + ky) -
                        static_cast<std::ptrdiff_t>(n.pad[0]);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * n.stride[1] + kx) -
                          static_cast<std::ptrdiff_t>(n.pad[1]);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(ih) &&
                              ix < static_cast<std::ptrdiff_t>(iw);
          double* s = &sum[(ky * kw + kx) * c];
          for (std::size_t k = 0; k < c; ++k) {
            s[k] += inside ? x[(static_cast<std::size_t>(iy) * iw + static_cast<std::size_t>(ix)) * c + k]
                           : n.pad_value;
          }
        }
      }
    }
  }
}

}  // namespace

StatsStore collect_statistics(const Graph& graph, const CalibrationSet& data, std::size_t bins) {
  if (data.samples.empty()) throw Error(ErrorCode::kEmptyInput, "calibration set empty");
  const Executor exec(graph, ExecutionMode::kFloat);
  const std::map<std::string, Shape> shapes = graph.infer_shapes();
  std::map<std::string, std::vector<double>> windows;
  for (const Node& n : graph.nodes) {
    if (!n.is_linear()) continue;
    const std::size_t taps = n.kind == OpKind::kDepthwiseConv2d
                                 ? n.weight.size()
                                 : n.weight.size() / n.weight.dims().back();
    windows[n.id].assign(taps, 0.0);
  }

  struct Accumulator {
    std::vector<double> min, max, sum;
    std::size_t positions = 0;
  };
  std::map<std::string, Accumulator> acc;

  // Pass 1: exact extrema and streaming sums.
  for (const Tensor& sample : data.samples) {
    const ExecutionTrace trace = exec.run(sample);
    for (const auto& [name, t] : trace.tensors) {
      if (!t.all_finite()) {
        throw Error(ErrorCode::kNonFinite, "layer '" + name + "' produced a non-finite value");
      }
      const std::size_t c = t.dims().back();
      Accumulator& a = acc[name];
      if (a.min.empty()) {
        a.min.assign(c, std::numeric_limits<double>::infinity());
        a.max.assign(c, -std::numeric_limits<double>::infinity());
        a.sum.assign(c, 0.0);
      }
      const auto d = t.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const std::size_t k = i % c;
        a.min[k] = std::min(a.min[k], d[i]);
        a.max[k] = std::max(a.max[k], d[i]);
        a.sum[k] += d[i];
      }
      a.positions += t.size() / c;
    }
    for (const Node& n : graph.nodes) {
      if (!n.is_linear()) continue;
      accumulate_windows(n, trace.at(n.inputs[0]), shapes.at(n.id), windows.at(n.id));
    }
  }

  StatsStore store;
  for (auto& [name, a] : acc) {
    TensorStats s;
    s.channel_min = a.min;
    s.channel_max = a.max;
    s.channel_mean.resize(a.sum.size());
    for (std::size_t k = 0; k < a.sum.size(); ++k) {
      s.channel_mean[k] = a.sum[k] / static_cast<double>(a.positions);
    }
    s.min = *std::min_element(a.min.begin(), a.min.end());
    s.max = *std::max_element(a.max.begin(), a.max.end());
    s.max_abs = std::max(std::abs(s.min), std::abs(s.max));
    s.count = a.positions * a.sum.size();
    s.histogram = histogram_for_range(s.min, s.max, bins);
    store.set(name, std::move(s));
  }
  for (auto& [id, sum] : windows) {
    const Shape& out = shapes.at(id);
    const std::size_t positions = out.size() == 3 ? out[0] * out[1] : 1;
    const auto denom = static_cast<double>(positions * data.samples.size());
    for (double& v : sum) v /= denom;
    store.set_window_mean(id, std::move(sum));
  }

  // Pass 2: histograms over the now-known ranges.
  for (const Tensor& sample : data.samples) {
    const ExecutionTrace trace = exec.run(sample);
    for (const auto& [name, t] : trace.tensors) {
      Histogram& h = store.at(name).histogram;
      for (double v : t.data()) h.add(v);
    }
  }
  return store;
}

Histogram remove_outliers(const Histogram& h, double z_threshold) {
  h.validate();
  if (!(z_threshold > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "z-score threshold must be positive");
  }
  const double total = h.total();
  if (total <= 0.0) return h;
  double mean = 0.0;
  for (std::size_t i = 0; i < h.bins(); ++i) mean += h.counts[i] * h.center(i);
  mean /= total;
  double var = 0.0;
  for (std::size_t i = 0; i < h.bins(); ++i) {
    const double d = h.center(i) - mean;
    var += h.counts[i] * d * d;
  }
  const double sigma = std::sqrt(var / total);
  if (sigma == 0.0) return h;
  Histogram out = h;
  for (std::size_t i = 0; i < out.bins(); ++i) {
    if (std::abs(out.center(i) - mean) / sigma > z_threshold) out.counts[i] = 0.0;
  }
  if (out.total() <= 0.0) return h;
  return out;
}

std::string stats_to_csv(const Graph& graph, const StatsStore& stats) {
  std::string out = "tensor,channel,min,max,mean\n";
  std::vector<std::string> order{graph.input_name};
  for (const Node& n : graph.nodes) order.push_back(n.id);
  char line[256];
  for (const std::string& name : order) {
    if (!stats.contains(name)) continue;
    const TensorStats& s = stats.at(name);
    for (std::size_t k = 0; k < s.channel_mean.size(); ++k) {
      std::snprintf(line, sizeof line, "%s,%zu,%.17g,%.17g,%.17g\n", name.c_str(), k,
                    s.channel_min[k], s.channel_max[k], s.channel_mean[k]);
      out += line;
    }
  }
  return out;
}

}  // namespace hfq
