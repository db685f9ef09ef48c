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

#ifndef HFQ_IR_H_
#define HFQ_IR_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hfq/quantizers.h"
#include "hfq/tensor.h"

namespace hfq {

enum class OpKind {
  kConv2d,
  kDepthwiseConv2d,
  kDense,
  kBatchNorm,
  kActivation,
  kAdd,
  kGlobalAvgPool,
  kMaxPool,
  kFlatten,
  kSoftmax,
};

std::string_view op_kind_name(OpKind kind);
std::optional<OpKind> parse_op_kind(std::string_view name);

enum class ActivationKind {
  kIdentity,
  kRelu,
  kRelu6,  // generic clipped ReLU; the clip point defaults to 6
  kLeakyRelu,
  kPRelu,
  kSwish,
  kSelu,
  kHSwish,
};

std::string_view activation_kind_name(ActivationKind kind);
std::optional<ActivationKind> parse_activation_kind(std::string_view name);

struct Activation {
  ActivationKind kind = ActivationKind::kIdentity;
  double slope = 0.01;          // leaky_relu
  std::vector<double> slopes;   // prelu, one per channel
  double clip = 6.0;            // relu6
  std::vector<double> clips;    // relu6 after equalization, one per channel
  double shift = 0.0;           // output is phi(x) + shift (shift negative correction)

  // Evaluates phi(x) + shift for an element of the given channel.
  double operator()(double x, std::size_t channel) const;

  // True for kinds that produce negative values for some inputs.
  bool can_be_negative() const;

  friend bool operator==(const Activation&, const Activation&) = default;
};

struct BatchNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> mean;
  std::vector<double> variance;
  double epsilon = 1e-3;

  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

// Per-output-channel power-of-two weight quantization. `values` holds the
// integer image of the weight tensor, in the weight tensor's element order.
struct WeightQuant {
  int bits = 8;
  std::vector<int> exponents;
  std::vector<std::int32_t> values;

  QuantSpec channel_spec(std::size_t channel) const {
    return QuantSpec{bits, true, exponents.at(channel)};
  }
  // Integer image of `weight` with one exponent per output channel (the last
  // axis).
  static WeightQuant quantize(const Tensor& weight, int bits, std::vector<int> exponents);
  // Reconstructs s_k * x_int for a weight tensor of the given shape.
  Tensor dequantize(const Shape& weight_shape) const;

  friend bool operator==(const WeightQuant&, const WeightQuant&) = default;
};

struct Node {
  std::string id;  // also the name of the single tensor the node produces
  OpKind kind = OpKind::kActivation;
  std::vector<std::string> inputs;

  // conv2d / depthwise_conv2d / max_pool
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> pad{0, 0};  // symmetric zero padding (h, w)
  double pad_value = 0.0;                // value used for padded taps
  std::array<std::size_t, 2> pool{2, 2};

  // conv2d: kh x kw x cin x cout; depthwise: kh x kw x 1 x c; dense: cin x cout.
  Tensor weight;
  Tensor bias;

  BatchNormParams bn;
  Activation activation;

  std::optional<QuantSpec> output_quant;
  std::optional<WeightQuant> weight_quant;

  // Relationship between the stored tensor and the tensor of the original
  // float model: stored = scale[channel] * original + shift. Written by the
  // rewrites that change activation ranges; empty scale means all ones.
  std::vector<double> out_scale;
  double out_shift = 0.0;

  bool is_linear() const {
    return kind == OpKind::kConv2d || kind == OpKind::kDepthwiseConv2d ||
           kind == OpKind::kDense;
  }

  friend bool operator==(const Node&, const Node&) = default;
};

// Typed DAG. Nodes are kept in a deterministic topological order.
class Graph {
 public:
  std::string input_name = "input";
  Shape input_shape;
  std::optional<QuantSpec> input_quant;
  std::vector<Node> nodes;
  std::vector<std::string> outputs;

  const Node* find(std::string_view id) const;
  Node* find(std::string_view id);
  Node& at(std::string_view id);
  const Node& at(std::string_view id) const;

  // Nodes reading the given tensor, in graph order.
  std::vector<const Node*> consumers(std::string_view tensor) const;
  bool is_output(std::string_view tensor) const;

  // Orders nodes topologically; ties are broken by node id so the order only
  // depends on the graph's content. Throws kDanglingEdge or kCycle.
  void sort_topologically();

  // Shape of every tensor, keyed by name. Throws kShapeMismatch naming the
  // offending node.
  std::map<std::string, Shape> infer_shapes() const;

  // Full structural check: unique producers, no dangling edges, acyclic,
  // topologically ordered, and shape-consistent.
  void validate() const;

  // Tensors that carry an activation quantizer: the graph input and the
  // outputs of linear, batch-norm, activation, add and pooling-average nodes,
  // except a linear or batch-norm output whose only consumer is a batch-norm
  // or activation node (those are fused into the consumer).
  bool is_quantization_point(std::string_view tensor) const;
  std::vector<std::string> quantization_points() const;

  std::optional<QuantSpec> tensor_quant(std::string_view tensor) const;
  void set_tensor_quant(std::string_view tensor, const QuantSpec& spec);

  friend bool operator==(const Graph&, const Graph&) = default;
};

// Representative dataset. Labels are optional and only needed for evaluation.
struct CalibrationSet {
  std::vector<Tensor> samples;
  std::vector<int> labels;

  std::size_t size() const noexcept { return samples.size(); }
  bool has_labels() const noexcept { return !labels.empty(); }
};

}  // namespace hfq

#endif  // HFQ_IR_H_
