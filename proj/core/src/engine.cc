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

#include "hfq/engine.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "hfq/error.h"
#include "hfq/quantizers.h"
#include "hfq/serialization.h"

namespace hfq {
namespace {

Tensor conv2d(const Node& n, const Tensor& x, const Tensor& w, const Shape& out_shape) {
  const std::size_t ih = x.dims()[0], iw = x.dims()[1], cin = x.dims()[2];
  const std::size_t kh = w.dims()[0], kw = w.dims()[1], cout = w.dims()[3];
  const std::size_t oh = out_shape[0], ow = out_shape[1];
  Tensor out(out_shape, Layout::kActivation);
  auto y = out.mutable_data();
  const auto xd = x.data();
  const auto wd = w.data();
  const auto bd = n.bias.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* acc = &y[(oy * ow + ox) * cout];
      for (std::size_t co = 0; co < cout; ++co) acc[co] = bd[co];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * n.stride[0] + ky) -
                        static_cast<std::ptrdiff_t>(n.pad[0]);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * n.stride[1] + kx) -
                          static_cast<std::ptrdiff_t>(n.pad[1]);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(ih) &&
                              ix < static_cast<std::ptrdiff_t>(iw);
          const double* wrow = &wd[(ky * kw + kx) * cin * cout];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = inside ? xd[(iy * iw + ix) * cin + ci] : n.pad_value;
            if (v == 0.0) continue;
            const double* wc = wrow + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) acc[co] += v * wc[co];
          }
        }
      }
    }
  }
  return out;
}

Tensor depthwise_conv2d(const Node& n, const Tensor& x, const Tensor& w, const Shape& out_shape) {
  const std::size_t ih = x.dims()[0], iw = x.dims()[1], c = x.dims()[2];
  const std::size_t kh = w.dims()[0], kw = w.dims()[1];
  const std::size_t oh = out_shape[0], ow = out_shape[1];
  Tensor out(out_shape, Layout::kActivation);
  auto y = out.mutable_data();
  const auto xd = x.data();
  const auto wd = w.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* acc = &y[(oy * ow + ox) * c];
      for (std::size_t k = 0; k < c; ++k) acc[k] = n.bias[k];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * n.stride[0] + ky) -
                        static_cast<std::ptrdiff_t>(n.pad[0]);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * n.stride[1] + kx) -
                          static_cast<std::ptrdiff_t>(n.pad[1]);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(ih) &&
                              ix < static_cast<std::ptrdiff_t>(iw);
          const double* wc = &wd[(ky * kw + kx) * c];
          for (std::size_t k = 0; k < c; ++k) {
            const double v = inside ? xd[(iy * iw + ix) * c + k] : n.pad_value;
            acc[k] += v * wc[k];
          }
        }
      }
    }
  }
  return out;
}

Tensor dense(const Node& n, const Tensor& x, const Tensor& w) {
  const std::size_t cin = w.dims()[0], cout = w.dims()[1];
  Tensor out(Shape{cout}, Layout::kActivation);
  auto y = out.mutable_data();
  for (std::size_t o = 0; o < cout; ++o) y[o] = n.bias[o];
  const auto wd = w.data();
  for (std::size_t i = 0; i < cin; ++i) {
    const double v = x[i];
    for (std::size_t o = 0; o < cout; ++o) y[o] += v * wd[i * cout + o];
  }
  return out;
}

Tensor batch_norm(const Node& n, const Tensor& x) {
  Tensor out = x;
  const std::size_t c = x.dims().back();
  std::vector<double> scale(c), shift(c);
  for (std::size_t k = 0; k < c; ++k) {
    scale[k] = n.bn.gamma[k] / std::sqrt(n.bn.variance[k] + n.bn.epsilon);
    shift[k] = n.bn.beta[k] - n.bn.mean[k] * scale[k];
  }
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] * scale[i % c] + shift[i % c];
  return out;
}

Tensor activation(const Node& n, const Tensor& x) {
  Tensor out = x;
  const std::size_t c = x.dims().back();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = n.activation(y[i], i % c);
  return out;
}

Tensor max_pool(const Node& n, const Tensor& x, const Shape& out_shape) {
  const std::size_t iw = x.dims()[1], c = x.dims()[2];
  const std::size_t oh = out_shape[0], ow = out_shape[1];
  Tensor out(out_shape, Layout::kActivation);
  auto y = out.mutable_data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t k = 0; k < c; ++k) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t py = 0; py < n.pool[0]; ++py) {
          for (std::size_t px = 0; px < n.pool[1]; ++px) {
            const std::size_t iy = oy * n.stride[0] + py, ix = ox * n.stride[1] + px;
            m = std::max(m, x[(iy * iw + ix) * c + k]);
          }
        }
        y[(oy * ow + ox) * c + k] = m;
      }
    }
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  const std::size_t c = x.dims()[2];
  const std::size_t positions = x.size() / c;
  Tensor out(Shape{c}, Layout::kActivation);
  auto y = out.mutable_data();
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t k = 0; k < c; ++k) y[k] += x[p * c + k];
  }
  for (double& v : y) v /= static_cast<double>(positions);
  return out;
}

Tensor softmax(const Tensor& x) {
  Tensor out = x;
  auto y = out.mutable_data();
  const double m = *std::max_element(y.begin(), y.end());
  double sum = 0.0;
  for (double& v : y) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : y) v /= sum;
  return out;
}

}  // namespace

const Tensor& ExecutionTrace::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw Error(ErrorCode::kInvalidArgument, "trace has no tensor '" + name + "'");
  }
  return it->second;
}

Executor::Executor(const Graph& graph, ExecutionMode mode) : graph_(graph), mode_(mode) {
  graph.validate();
  shapes_ = graph.infer_shapes();
  for (const Node& n : graph.nodes) {
    quantize_output_.push_back(mode_ == ExecutionMode::kQuantized &&
                               graph.is_quantization_point(n.id));
  }
  if (mode_ == ExecutionMode::kQuantized) {
    require_quantized(graph);
    for (const Node& n : graph.nodes) {
      if (n.is_linear()) dequantized_.emplace(n.id, n.weight_quant->dequantize(n.weight.dims()));
    }
  }
}

Tensor Executor::run_node(const Node& n, const std::vector<const Tensor*>& in,
                          const Tensor* weight) const {
  const Shape& out_shape = shapes_.at(n.id);
  switch (n.kind) {
    case OpKind::kConv2d: return conv2d(n, *in[0], *weight, out_shape);
    case OpKind::kDepthwiseConv2d: return depthwise_conv2d(n, *in[0], *weight, out_shape);
    case OpKind::kDense: return dense(n, *in[0], *weight);
    case OpKind::kBatchNorm: return batch_norm(n, *in[0]);
    case OpKind::kActivation: return activation(n, *in[0]);
    case OpKind::kAdd: {
      Tensor out = *in[0];
      auto y = out.mutable_data();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += (*in[1])[i];
      return out;
    }
    case OpKind::kGlobalAvgPool: return global_avg_pool(*in[0]);
    case OpKind::kMaxPool: return max_pool(n, *in[0], out_shape);
    case OpKind::kFlatten: return Tensor(out_shape, in[0]->values(), Layout::kActivation);
    case OpKind::kSoftmax: return softmax(*in[0]);
  }
  throw Error(ErrorCode::kUnsupportedOp, "node '" + n.id + "' has an unknown op");
}

ExecutionTrace Executor::run(const Tensor& input) const {
  if (input.dims() != graph_.input_shape) {
    throw Error(ErrorCode::kShapeMismatch, "input shape " + shape_to_string(input.dims()) +
                                               " does not match graph input " +
                                               shape_to_string(graph_.input_shape));
  }
  const bool quantized = mode_ == ExecutionMode::kQuantized;
  ExecutionTrace trace;
  Tensor x(input.dims(), input.values(), Layout::kActivation);
  if (quantized) x = fake_quantize(x, *graph_.input_quant);
  trace.tensors.emplace(graph_.input_name, std::move(x));
  std::vector<const Tensor*> in;
  for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
    const Node& n = graph_.nodes[i];
    in.clear();
    for (const std::string& name : n.inputs) in.push_back(&trace.tensors.at(name));
    const Tensor* weight = nullptr;
    if (n.is_linear()) weight = quantized ? &dequantized_.at(n.id) : &n.weight;
    Tensor y = run_node(n, in, weight);
    if (quantize_output_[i]) y = fake_quantize(y, *n.output_quant);
    trace.tensors.emplace(n.id, std::move(y));
  }
  for (const std::string& name : graph_.outputs) trace.outputs.push_back(trace.tensors.at(name));
  return trace;
}

ExecutionTrace run_float(const Graph& graph, const Tensor& input) {
  return Executor(graph, ExecutionMode::kFloat).run(input);
}

ExecutionTrace run_quantized(const Graph& graph, const Tensor& input) {
  return Executor(graph, ExecutionMode::kQuantized).run(input);
}

std::size_t argmax(const Tensor& t) {
  if (t.empty()) throw Error(ErrorCode::kEmptyInput, "empty input");
  const auto d = t.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

double EvalReport::mean_layer_mse() const {
  if (layers.empty()) return 0.0;
  double sum = 0.0;
  for (const LayerError& l : layers) sum += l.mse;
  return sum / static_cast<double>(layers.size());
}

double EvalReport::mean_layer_mse(const std::vector<std::string>& tensors) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const LayerError& l : layers) {
    if (std::find(tensors.begin(), tensors.end(), l.tensor) != tensors.end()) {
      sum += l.mse;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::string EvalReport::to_json() const {
  nlohmann::json j{{"schema_version", 1},
                   {"metric", metric},
                   {"samples", samples},
                   {"float_score", float_score},
                   {"quant_score", quant_score},
                   {"delta", delta},
                   {"mean_layer_mse", mean_layer_mse()}};
  nlohmann::json rows = nlohmann::json::array();
  for (const LayerError& l : layers) rows.push_back({{"tensor", l.tensor}, {"mse", l.mse}});
  j["layers"] = std::move(rows);
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%s over %zu samples\n", metric.c_str(), samples);
  out += line;
  std::snprintf(line, sizeof line, "  float  %8.3f\n  quant  %8.3f\n  delta  %8.3f\n",
                float_score, quant_score, delta);
  out += line;
  out += "  per-layer MSE (quantized vs float):\n";
  for (const LayerError& l : layers) {
    std::snprintf(line, sizeof line, "    %-24s %.6e\n", l.tensor.c_str(), l.mse);
    out += line;
  }
  std::snprintf(line, sizeof line, "    %-24s %.6e\n", "(mean)", mean_layer_mse());
  out += line;
  return out;
}

EvalReport evaluate(const Graph& float_graph, const Graph& quant_graph,
                    const CalibrationSet& labeled) {
  if (!labeled.has_labels()) {
    throw Error(ErrorCode::kInvalidArgument, "evaluation needs a labeled dataset");
  }
  if (labeled.labels.size() != labeled.size()) {
    throw Error(ErrorCode::kShapeMismatch, "label/sample count mismatch");
  }
  if (labeled.samples.empty()) throw Error(ErrorCode::kEmptyInput, "calibration set empty");
  const Executor fexec(float_graph, ExecutionMode::kFloat);
  const Executor qexec(quant_graph, ExecutionMode::kQuantized);

  // Tensors compared, in the quantized graph's order.
  std::vector<std::string> names{quant_graph.input_name};
  for (const Node& n : quant_graph.nodes) names.push_back(n.id);
  const auto fshapes = float_graph.infer_shapes();
  const auto qshapes = quant_graph.infer_shapes();
  std::vector<std::string> shared;
  for (const std::string& name : names) {
    auto f = fshapes.find(name);
    if (f != fshapes.end() && f->second == qshapes.at(name)) shared.push_back(name);
  }
  std::vector<double> sq(shared.size(), 0.0);
  std::vector<std::size_t> counts(shared.size(), 0);

  std::size_t f_correct = 0, q_correct = 0;
  for (std::size_t s = 0; s < labeled.size(); ++s) {
    const ExecutionTrace ft = fexec.run(labeled.samples[s]);
    const ExecutionTrace qt = qexec.run(labeled.samples[s]);
    const auto label = static_cast<std::size_t>(labeled.labels[s]);
    if (argmax(ft.outputs.at(0)) == label) ++f_correct;
    if (argmax(qt.outputs.at(0)) == label) ++q_correct;
    for (std::size_t i = 0; i < shared.size(); ++i) {
      const Tensor& a = ft.at(shared[i]);
      const Tensor& b = qt.at(shared[i]);
      const Node* producer = quant_graph.find(shared[i]);
      const std::vector<double>* scale = producer ? &producer->out_scale : nullptr;
      const double shift = producer ? producer->out_shift : 0.0;
      const std::size_t c = a.dims().back();
      for (std::size_t e = 0; e < a.size(); ++e) {
        double q = b[e] - shift;
        if (scale && !scale->empty()) q /= (*scale)[e % c];
        const double d = q - a[e];
        sq[i] += d * d;
      }
      counts[i] += a.size();
    }
  }
  EvalReport r;
  r.samples = labeled.size();
  r.float_score = 100.0 * static_cast<double>(f_correct) / static_cast<double>(r.samples);
  r.quant_score = 100.0 * static_cast<double>(q_correct) / static_cast<double>(r.samples);
  r.delta = r.float_score - r.quant_score;
  for (std::size_t i = 0; i < shared.size(); ++i) {
    r.layers.push_back({shared[i], sq[i] / static_cast<double>(counts[i])});
  }
  return r;
}

}  // namespace hfq
