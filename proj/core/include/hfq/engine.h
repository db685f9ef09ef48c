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

#ifndef HFQ_ENGINE_H_
#define HFQ_ENGINE_H_

#include <map>
#include <string>
#include <vector>

#include "hfq/ir.h"
#include "hfq/tensor.h"

namespace hfq {

struct ExecutionTrace {
  std::map<std::string, Tensor> tensors;
  std::vector<Tensor> outputs;

  const Tensor& at(const std::string& name) const;
};

enum class ExecutionMode {
  kFloat,
  // Weights come from the stored integers, every quantization point passes
  // through its activation quantizer, arithmetic stays in float.
  kQuantized,
};

// Reference executor. Kernels are naive loops with a fixed accumulation order
// so results are reproducible bit for bit. Construction validates the graph
// and, in quantized mode, that every quantizer slot is filled.
class Executor {
 public:
  Executor(const Graph& graph, ExecutionMode mode);

  ExecutionTrace run(const Tensor& input) const;
  ExecutionMode mode() const noexcept { return mode_; }

 private:
  Tensor run_node(const Node& node, const std::vector<const Tensor*>& inputs,
                  const Tensor* weight) const;

  Graph graph_;
  ExecutionMode mode_;
  std::map<std::string, Shape> shapes_;
  std::map<std::string, Tensor> dequantized_;
  std::vector<bool> quantize_output_;
};

ExecutionTrace run_float(const Graph& graph, const Tensor& input);
ExecutionTrace run_quantized(const Graph& graph, const Tensor& input);

// Index of the largest entry of a vector-shaped output.
std::size_t argmax(const Tensor& t);

struct LayerError {
  std::string tensor;
  double mse = 0.0;
};

struct EvalReport {
  std::string metric = "top1_accuracy";
  double float_score = 0.0;  // percent
  double quant_score = 0.0;  // percent
  double delta = 0.0;        // float_score - quant_score
  std::size_t samples = 0;
  std::vector<LayerError> layers;

  double mean_layer_mse() const;
  // Mean over the listed tensors only; tensors absent from the report are
  // ignored.
  double mean_layer_mse(const std::vector<std::string>& tensors) const;

  std::string to_json() const;
  std::string to_text() const;
};

// Top-1 accuracy of both graphs on a labeled set plus, for every tensor the
// two graphs share, the mean squared difference between the float tensor and
// the quantized one mapped back to the float model's scale.
EvalReport evaluate(const Graph& float_graph, const Graph& quant_graph,
                    const CalibrationSet& labeled);

}  // namespace hfq

#endif  // HFQ_ENGINE_H_
