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

#include "hfq/ir.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "hfq/error.h"

namespace hfq {
namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 10> kOpNames{{
    {OpKind::kConv2d, "conv2d"},
    {OpKind::kDepthwiseConv2d, "depthwise_conv2d"},
    {OpKind::kDense, "dense"},
    {OpKind::kBatchNorm, "batch_norm"},
    {OpKind::kActivation, "activation"},
    {OpKind::kAdd, "add"},
    {OpKind::kGlobalAvgPool, "global_avg_pool"},
    {OpKind::kMaxPool, "max_pool"},
    {OpKind::kFlatten, "flatten"},
    {OpKind::kSoftmax, "softmax"},
}};

constexpr std::array<std::pair<ActivationKind, std::string_view>, 8> kActNames{{
    {ActivationKind::kIdentity, "identity"},
    {ActivationKind::kRelu, "relu"},
    {ActivationKind::kRelu6, "relu6"},
    {ActivationKind::kLeakyRelu, "leaky_relu"},
    {ActivationKind::kPRelu, "prelu"},
    {ActivationKind::kSwish, "swish"},
    {ActivationKind::kSelu, "selu"},
    {ActivationKind::kHSwish, "hswish"},
}};

constexpr double kSeluLambda = 1.0507009873554804934193349852946;
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

[[noreturn]] void shape_error(const Node& node, const std::string& what) {
  throw Error(ErrorCode::kShapeMismatch, "node '" + node.id + "': " + what);
}

double relu6_of(double x, double clip) { return std::min(std::max(x, 0.0), clip); }

}  // namespace

std::string_view op_kind_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<OpKind> parse_op_kind(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

std::string_view activation_kind_name(ActivationKind kind) {
  for (const auto& [k, name] : kActNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<ActivationKind> parse_activation_kind(std::string_view name) {
  for (const auto& [k, n] : kActNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

double Activation::operator()(double x, std::size_t channel) const {
  double y = 0.0;
  switch (kind) {
    case ActivationKind::kIdentity:
      y = x;
      break;
    case ActivationKind::kRelu:
      y = std::max(x, 0.0);
      break;
    case ActivationKind::kRelu6:
      y = relu6_of(x, clips.empty() ? clip : clips[channel]);
      break;
    case ActivationKind::kLeakyRelu:
      y = x >= 0.0 ? x : slope * x;
      break;
    case ActivationKind::kPRelu: {
      const double a = slopes.size() == 1 ? slopes[0] : slopes[channel];
      y = x >= 0.0 ? x : a * x;
      break;
    }
    case ActivationKind::kSwish:
      y = x / (1.0 + std::exp(-x));
      break;
    case ActivationKind::kSelu:
      y = x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
      break;
    case ActivationKind::kHSwish:
      y = x * relu6_of(x + 3.0, 6.0) / 6.0;
      break;
  }
  return y + shift;
}

bool Activation::can_be_negative() const {
  switch (kind) {
    case ActivationKind::kRelu:
    case ActivationKind::kRelu6:
      return false;
    default:
      return true;
  }
}

WeightQuant WeightQuant::quantize(const Tensor& weight, int bits, std::vector<int> exponents) {
  const std::size_t c = weight.rank() == 0 ? 0 : weight.dims().back();
  if (exponents.size() != c) {
    throw Error(ErrorCode::kShapeMismatch, "need one weight exponent per output channel");
  }
  WeightQuant wq{bits, std::move(exponents), {}};
  std::vector<QuantSpec> specs(c);
  for (std::size_t k = 0; k < c; ++k) {
    specs[k] = wq.channel_spec(k);
    specs[k].validate();
  }
  wq.values.resize(weight.size());
  for (std::size_t i = 0; i < weight.size(); ++i) {
    wq.values[i] = static_cast<std::int32_t>(quantize_to_int(weight[i], specs[i % c]));
  }
  return wq;
}

Tensor WeightQuant::dequantize(const Shape& weight_shape) const {
  Tensor out(weight_shape, Layout::kWeights);
  const std::size_t c = weight_shape.empty() ? 0 : weight_shape.back();
  if (values.size() != out.size() || exponents.size() != c) {
    throw Error(ErrorCode::kShapeMismatch,
                "weight quantization payload does not match weight shape " +
                    shape_to_string(weight_shape));
  }
  std::vector<double> steps(c);
  for (std::size_t k = 0; k < c; ++k) steps[k] = channel_spec(k).step();
  auto data = out.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = steps[i % c] * static_cast<double>(values[i]);
  }
  return out;
}

const Node* Graph::find(std::string_view id) const {
  for (const Node& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

Node* Graph::find(std::string_view id) {
  for (Node& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

Node& Graph::at(std::string_view id) {
  Node* n = find(id);
  if (!n) {
    throw Error(ErrorCode::kDanglingEdge, "no node named '" + std::string(id) + "'");
  }
  return *n;
}

const Node& Graph::at(std::string_view id) const {
  return const_cast<Graph*>(this)->at(id);
}

std::vector<const Node*> Graph::consumers(std::string_view tensor) const {
  std::vector<const Node*> out;
  for (const Node& n : nodes) {
    if (std::find(n.inputs.begin(), n.inputs.end(), tensor) != n.inputs.end()) {
      out.push_back(&n);
    }
  }
  return out;
}

bool Graph::is_output(std::string_view tensor) const {
  return std::find(outputs.begin(), outputs.end(), tensor) != outputs.end();
}

void Graph::sort_topologically() {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == input_name || !index.emplace(nodes[i].id, i).second) {
      throw Error(ErrorCode::kMalformedManifest,
                  "tensor '" + nodes[i].id + "' has more than one producer");
    }
  }
  std::vector<std::size_t> pending(nodes.size(), 0);
  std::unordered_map<std::string, std::vector<std::size_t>> readers;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const std::string& in : nodes[i].inputs) {
      if (in == input_name) continue;
      if (!index.count(in)) {
        throw Error(ErrorCode::kDanglingEdge,
                    "node '" + nodes[i].id + "' reads unknown tensor '" + in + "'");
      }
      ++pending[i];
      readers[in].push_back(i);
    }
  }
  for (const std::string& out : outputs) {
    if (out != input_name && !index.count(out)) {
      throw Error(ErrorCode::kDanglingEdge, "graph output '" + out + "' is not produced");
    }
  }
  std::set<std::pair<std::string, std::size_t>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (pending[i] == 0) ready.emplace(nodes[i].id, i);
  }
  std::vector<Node> sorted;
  sorted.reserve(nodes.size());
  while (!ready.empty()) {
    const std::size_t i = ready.begin()->second;
    ready.erase(ready.begin());
    for (std::size_t r : readers[nodes[i].id]) {
      if (--pending[r] == 0) ready.emplace(nodes[r].id, r);
    }
    sorted.push_back(std::move(nodes[i]));
  }
  if (sorted.size() != nodes.size()) {
    // Moved-from entries are lost; the graph is unusable anyway.
    throw Error(ErrorCode::kCycle, "graph contains a cycle");
  }
  nodes = std::move(sorted);
}

std::map<std::string, Shape> Graph::infer_shapes() const {
  std::map<std::string, Shape> shapes;
  if (input_shape.empty() || element_count(input_shape) == 0) {
    throw Error(ErrorCode::kShapeMismatch, "graph input has an empty shape");
  }
  shapes[input_name] = input_shape;
  for (const Node& n : nodes) {
    std::vector<Shape> in;
    for (const std::string& name : n.inputs) {
      auto it = shapes.find(name);
      if (it == shapes.end()) {
        throw Error(ErrorCode::kDanglingEdge,
                    "node '" + n.id + "' reads '" + name + "' before it is produced");
      }
      in.push_back(it->second);
    }
    const std::size_t want_inputs = n.kind == OpKind::kAdd ? 2 : 1;
    if (in.size() != want_inputs) {
      shape_error(n, "expects " + std::to_string(want_inputs) + " input(s)");
    }
    const Shape& x = in[0];
    Shape out;
    switch (n.kind) {
      case OpKind::kConv2d:
      case OpKind::kDepthwiseConv2d: {
        if (x.size() != 3) shape_error(n, "input must be h x w x c");
        const Shape& w = n.weight.dims();
        if (w.size() != 4) shape_error(n, "weight must be kh x kw x cin x cout");
        const bool dw = n.kind == OpKind::kDepthwiseConv2d;
        if (dw ? (w[2] != 1 || w[3] != x[2]) : w[2] != x[2]) {
          shape_error(n, "weight " + shape_to_string(w) + " does not match input " +
                             shape_to_string(x));
        }
        if (n.stride[0] == 0 || n.stride[1] == 0) shape_error(n, "zero stride");
        const std::size_t ph = x[0] + 2 * n.pad[0];
        const std::size_t pw = x[1] + 2 * n.pad[1];
        if (ph < w[0] || pw < w[1]) shape_error(n, "kernel larger than padded input");
        out = {(ph - w[0]) / n.stride[0] + 1, (pw - w[1]) / n.stride[1] + 1, w[3]};
        break;
      }
      case OpKind::kDense: {
        if (x.size() != 1) shape_error(n, "dense input must be a vector");
        const Shape& w = n.weight.dims();
        if (w.size() != 2 || w[0] != x[0]) {
          shape_error(n, "weight " + shape_to_string(w) + " does not match input " +
                             shape_to_string(x));
        }
        out = {w[1]};
        break;
      }
      case OpKind::kBatchNorm: {
        const std::size_t c = x.back();
        if (n.bn.gamma.size() != c || n.bn.beta.size() != c || n.bn.mean.size() != c ||
            n.bn.variance.size() != c) {
          shape_error(n, "batch-norm parameters must have " + std::to_string(c) + " entries");
        }
        out = x;
        break;
      }
      case OpKind::kActivation: {
        const std::size_t c = x.back();
        const Activation& a = n.activation;
        if (a.kind == ActivationKind::kPRelu && a.slopes.size() != c && a.slopes.size() != 1) {
          shape_error(n, "prelu needs one slope per channel");
        }
        if (!a.clips.empty() && a.clips.size() != c) {
          shape_error(n, "per-channel clip values need one entry per channel");
        }
        out = x;
        break;
      }
      case OpKind::kAdd:
        if (in[0] != in[1]) shape_error(n, "add operands differ in shape");
        out = x;
        break;
      case OpKind::kGlobalAvgPool:
        if (x.size() != 3) shape_error(n, "input must be h x w x c");
        out = {x[2]};
        break;
      case OpKind::kMaxPool:
        if (x.size() != 3) shape_error(n, "input must be h x w x c");
        if (n.pool[0] > x[0] || n.pool[1] > x[1] || n.pool[0] == 0 || n.pool[1] == 0) {
          shape_error(n, "pool window does not fit the input");
        }
        if (n.stride[0] == 0 || n.stride[1] == 0) shape_error(n, "zero stride");
        out = {(x[0] - n.pool[0]) / n.stride[0] + 1, (x[1] - n.pool[1]) / n.stride[1] + 1, x[2]};
        break;
      case OpKind::kFlatten:
        out = {element_count(x)};
        break;
      case OpKind::kSoftmax:
        if (x.size() != 1) shape_error(n, "softmax input must be a vector");
        out = x;
        break;
    }
    if (n.is_linear()) {
      if (n.bias.dims() != Shape{out.back()}) {
        shape_error(n, "bias must have " + std::to_string(out.back()) + " entries");
      }
    }
    if (!n.out_scale.empty() && n.out_scale.size() != out.back()) {
      shape_error(n, "out_scale must have one entry per channel");
    }
    shapes[n.id] = std::move(out);
  }
  return shapes;
}

void Graph::validate() const {
  Graph copy = *this;
  copy.sort_topologically();
  // Any valid order is accepted, not only the canonical one.
  std::unordered_set<std::string> seen{input_name};
  for (const Node& n : nodes) {
    for (const std::string& in : n.inputs) {
      if (!seen.count(in)) {
        throw Error(ErrorCode::kMalformedManifest,
                    "nodes are not in topological order at '" + n.id + "'");
      }
    }
    seen.insert(n.id);
  }
  infer_shapes();
}

bool Graph::is_quantization_point(std::string_view tensor) const {
  if (tensor == input_name) return true;
  const Node* n = find(tensor);
  if (!n) return false;
  switch (n->kind) {
    case OpKind::kMaxPool:
    case OpKind::kFlatten:
    case OpKind::kSoftmax:
      return false;
    case OpKind::kActivation:
    case OpKind::kAdd:
    case OpKind::kGlobalAvgPool:
      return true;
    default:
      break;
  }
  if (is_output(tensor)) return true;
  const auto readers = consumers(tensor);
  if (readers.size() == 1 && (readers[0]->kind == OpKind::kActivation ||
                              readers[0]->kind == OpKind::kBatchNorm)) {
    return false;
  }
  return true;
}

std::vector<std::string> Graph::quantization_points() const {
  std::vector<std::string> out{input_name};
  for (const Node& n : nodes) {
    if (is_quantization_point(n.id)) out.push_back(n.id);
  }
  return out;
}

std::optional<QuantSpec> Graph::tensor_quant(std::string_view tensor) const {
  if (tensor == input_name) return input_quant;
  const Node* n = find(tensor);
  return n ? n->output_quant : std::nullopt;
}

void Graph::set_tensor_quant(std::string_view tensor, const QuantSpec& spec) {
  if (tensor == input_name) {
    input_quant = spec;
  } else {
    at(tensor).output_quant = spec;
  }
}

}  // namespace hfq
