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

#ifndef HFQ_TENSOR_H_
#define HFQ_TENSOR_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hfq {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// How the axes of a tensor are interpreted. Every channel-bearing layout in
// this toolkit keeps the channel on the innermost (last) axis:
//   kActivation: h x w x c, or a flat c-vector for dense activations.
//   kWeights:    kh x kw x cin x cout, or cin x cout for dense layers;
//                the "channel" is the output channel.
enum class Layout { kNone, kActivation, kWeights };

enum class ChannelReduction { kMin, kMax, kMean };

// Dense row-major tensor of 64-bit reals.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape dims, Layout layout = Layout::kNone);
  Tensor(Shape dims, std::vector<double> data, Layout layout = Layout::kNone);

  static Tensor filled(Shape dims, double value, Layout layout = Layout::kNone);

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  Layout layout() const noexcept { return layout_; }
  void set_layout(Layout layout) noexcept { layout_ = layout; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Size of the innermost axis; 0 when the layout has no channel axis.
  std::size_t channels() const noexcept;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape dims_;
  std::vector<double> data_;
  Layout layout_ = Layout::kNone;
};

// Largest absolute value. Throws kEmptyInput on an empty tensor.
double max_abs(const Tensor& t);

// Reduces every position of each channel to a single value. The result has
// one entry per channel (innermost axis). Throws kInvalidArgument for
// Layout::kNone and kEmptyInput for empty tensors.
std::vector<double> channel_reduce(const Tensor& t, ChannelReduction which);

}  // namespace hfq

#endif  // HFQ_TENSOR_H_
