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

#include "hfq/tensor.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "hfq/error.h"

namespace hfq {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape dims, Layout layout)
    : dims_(std::move(dims)), data_(element_count(dims_), 0.0), layout_(layout) {}

Tensor::Tensor(Shape dims, std::vector<double> data, Layout layout)
    : dims_(std::move(dims)), data_(std::move(data)), layout_(layout) {
  if (element_count(dims_) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "tensor of shape " + shape_to_string(dims_) + " given " +
                    std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::filled(Shape dims, double value, Layout layout) {
  Tensor t(std::move(dims), layout);
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::channels() const noexcept {
  if (layout_ == Layout::kNone || dims_.empty()) return 0;
  return dims_.back();
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double max_abs(const Tensor& t) {
  if (t.empty()) throw Error(ErrorCode::kEmptyInput, "empty input");
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

std::vector<double> channel_reduce(const Tensor& t, ChannelReduction which) {
  if (t.layout() == Layout::kNone || t.rank() == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "tensor layout has no channel axis");
  }
  if (t.empty()) throw Error(ErrorCode::kEmptyInput, "empty input");
  const std::size_t c = t.channels();
  const std::size_t positions = t.size() / c;
  std::vector<double> out(c);
  switch (which) {
    case ChannelReduction::kMin:
      std::fill(out.begin(), out.end(), std::numeric_limits<double>::infinity());
      break;
    case ChannelReduction::kMax:
      std::fill(out.begin(), out.end(), -std::numeric_limits<double>::infinity());
      break;
    case ChannelReduction::kMean:
      break;
  }
  const auto data = t.data();
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      const double v = data[p * c + k];
      switch (which) {
        case ChannelReduction::kMin: out[k] = std::min(out[k], v); break;
        case ChannelReduction::kMax: out[k] = std::max(out[k], v); break;
        case ChannelReduction::kMean: out[k] += v; break;
      }
    }
  }
  if (which == ChannelReduction::kMean) {
    for (double& v : out) v /= static_cast<double>(positions);
  }
  return out;
}

}  // namespace hfq
