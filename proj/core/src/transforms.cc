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

#include "hfq/transforms.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hfq/error.h"

namespace hfq {
namespace {

std::string format(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

void append(TransformLog* log, TransformEntry e) {
  if (log) log->push_back(std::move(e));
}

const Node* producer_of(const Graph& g, const std::string& tensor) { return g.find(tensor); }

bool is_passthrough(OpKind k) {
  return k == OpKind::kMaxPool || k == OpKind::kGlobalAvgPool || k == OpKind::kFlatten;
}

// Walks from `tensor` through pass-through nodes and collects the linear
// nodes that finally read it. Fails on graph outputs and any other reader.
bool collect_linear_readers(const Graph& g, const std::string& tensor,
                            std::vector<std::string>& passthrough,
                            std::vector<std::string>& linear) {
  if (g.is_output(tensor)) return false;
  for (const Node* c : g.consumers(tensor)) {
    if (c->is_linear()) {
      linear.push_back(c->id);
    } else if (is_passthrough(c->kind)) {
      passthrough.push_back(c->id);
      if (!collect_linear_readers(g, c->id, passthrough, linear)) return false;
    } else {
      return false;
    }
  }
  return true;
}

// Sum of the weights feeding each output channel.
std::vector<double> output_channel_sums(const Node& n) {
  const std::size_t c = n.weight.dims().back();
  std::vector<double> sums(c, 0.0);
  for (std::size_t i = 0; i < n.weight.size(); ++i) sums[i % c] += n.weight[i];
  return sums;
}

}  // namespace

Graph fold_batch_norm(const Graph& g, TransformLog* log) {
  Graph out = g;
  for (const Node& bn : g.nodes) {
    if (bn.kind != OpKind::kBatchNorm) continue;
    const Node* pred = producer_of(out, bn.inputs.at(0));
    if (!pred || !pred->is_linear() || out.consumers(pred->id).size() != 1 ||
        out.is_output(pred->id)) {
      throw Error(ErrorCode::kNotFoldable,
                  "batch_norm '" + bn.id + "' has no foldable linear predecessor");
    }
    Node folded = *pred;
    const std::string pred_id = pred->id;
    const std::size_t c = folded.weight.dims().back();
    std::vector<double> scale(c);
    for (std::size_t k = 0; k < c; ++k) {
      scale[k] = bn.bn.gamma[k] / std::sqrt(bn.bn.variance[k] + bn.bn.epsilon);
    }
    auto w = folded.weight.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= scale[i % c];
    auto b = folded.bias.mutable_data();
    for (std::size_t k = 0; k < c; ++k) {
      b[k] = bn.bn.beta[k] + (b[k] - bn.bn.mean[k]) * scale[k];
    }
    folded.id = bn.id;
    folded.output_quant = bn.output_quant;
    folded.weight_quant.reset();
    folded.out_scale = bn.out_scale;
    folded.out_shift = bn.out_shift;

    auto bn_it = std::find_if(out.nodes.begin(), out.nodes.end(),
                              [&](const Node& n) { return n.id == bn.id; });
    *bn_it = std::move(folded);
    out.nodes.erase(std::find_if(out.nodes.begin(), out.nodes.end(),
                                 [&](const Node& n) { return n.id == pred_id; }));
    append(log, {"bn_fold", bn.id, "folded into " + pred_id, "channels=" + std::to_string(c)});
  }
  out.sort_topologically();
  out.validate();
  return out;
}

bool snc_candidate(const Activation& a) {
  switch (a.kind) {
    case ActivationKind::kLeakyRelu:
    case ActivationKind::kPRelu:
    case ActivationKind::kSwish:
    case ActivationKind::kSelu:
    case ActivationKind::kHSwish:
      return a.shift == 0.0;
    default:
      return false;
  }
}

SncResult apply_snc(const Graph& g, const StatsStore& stats, double alpha, TransformLog* log) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "SNC alpha must lie in (0, 1)");
  }
  SncResult r{g, {}};
  Graph& out = r.graph;
  for (const Node& n : g.nodes) {
    if (n.kind != OpKind::kActivation || !snc_candidate(n.activation)) continue;
    if (!n.output_quant) {
      throw Error(ErrorCode::kMissingQuantParams,
                  "missing quantization parameters for tensor '" + n.id + "'");
    }
    const double s = stats.at(n.id).min;
    if (s >= 0.0) continue;
    const double shift = -s;
    const double t = n.output_quant->threshold();
    if (!(shift / t < alpha)) continue;

    std::vector<std::string> passthrough, linear;
    if (!collect_linear_readers(g, n.id, passthrough, linear)) {
      append(log, {"snc", n.id, "skipped", "a reader cannot absorb the shift", true});
      continue;
    }
    Node& act = out.at(n.id);
    act.activation.shift = shift;
    act.out_shift = shift;
    act.output_quant->is_signed = false;
    r.touched.push_back(n.id);
    for (const std::string& id : passthrough) {
      out.at(id).out_shift = shift;
      r.touched.push_back(id);
    }
    for (const std::string& id : linear) {
      Node& c = out.at(id);
      const std::vector<double> sums = output_channel_sums(c);
      auto b = c.bias.mutable_data();
      for (std::size_t k = 0; k < sums.size(); ++k) b[k] -= shift * sums[k];
      if (c.kind != OpKind::kDense && (c.pad[0] != 0 || c.pad[1] != 0)) c.pad_value = shift;
    }
    append(log, {"snc", n.id, "shifted",
                 format("shift=%.9g threshold=%.9g ratio=%.6g", shift, t, shift / t)});
  }
  out.validate();
  return r;
}

double equalization_scale(double channel_max, double threshold) {
  if (!(threshold > 0.0)) throw Error(ErrorCode::kInvalidArgument, "threshold must be positive");
  if (!(channel_max > 0.0)) return 1.0;
  return std::min(channel_max / threshold, 1.0);
}

EqualizationResult equalize_activations(const Graph& g, const StatsStore& stats,
                                        TransformLog* log) {
  EqualizationResult r{g, {}, {}};
  Graph& out = r.graph;
  for (const Node& a : g.nodes) {
    if (a.kind != OpKind::kActivation || a.activation.shift != 0.0) continue;
    const ActivationKind kind = a.activation.kind;
    if (kind != ActivationKind::kRelu && kind != ActivationKind::kRelu6 &&
        kind != ActivationKind::kPRelu) {
      continue;
    }
    const Node* p = producer_of(g, a.inputs.at(0));
    if (!p || !p->is_linear() || g.consumers(p->id).size() != 1 || g.is_output(p->id)) continue;
    if (!a.output_quant) continue;

    EqualizationTriple triple{p->id, a.id, {}, {}, {}};
    std::string cur = a.id;
    bool ok = false;
    while (!g.is_output(cur)) {
      const auto readers = g.consumers(cur);
      if (readers.size() != 1) break;
      const Node* c = readers[0];
      if (c->is_linear()) {
        triple.consumer = c->id;
        ok = true;
        break;
      }
      if (!is_passthrough(c->kind)) break;
      triple.passthrough.push_back(c->id);
      cur = c->id;
    }
    if (!ok) continue;

    const double t = a.output_quant->threshold();
    const std::vector<double>& v = stats.at(a.id).channel_max;
    const std::size_t ch = v.size();
    triple.scale.resize(ch);
    for (std::size_t k = 0; k < ch; ++k) triple.scale[k] = equalization_scale(v[k], t);
    const std::vector<double>& s = triple.scale;
    if (std::all_of(s.begin(), s.end(), [](double x) { return x == 1.0; })) continue;

    std::vector<double> inv(ch);
    for (std::size_t k = 0; k < ch; ++k) inv[k] = 1.0 / s[k];

    Node& prod = out.at(p->id);
    auto w1 = prod.weight.mutable_data();
    for (std::size_t i = 0; i < w1.size(); ++i) w1[i] *= inv[i % ch];
    auto b1 = prod.bias.mutable_data();
    for (std::size_t k = 0; k < ch; ++k) b1[k] *= inv[k];
    prod.out_scale = inv;

    Node& act = out.at(a.id);
    if (kind == ActivationKind::kRelu6) {
      std::vector<double>& clips = act.activation.clips;
      if (clips.empty()) clips.assign(ch, act.activation.clip);
      for (std::size_t k = 0; k < ch; ++k) clips[k] *= inv[k];
    }
    act.out_scale = inv;

    for (const std::string& id : triple.passthrough) {
      Node& pt = out.at(id);
      if (pt.kind == OpKind::kFlatten) {
        const std::size_t len = out.infer_shapes().at(id).back();
        pt.out_scale.resize(len);
        for (std::size_t e = 0; e < len; ++e) pt.out_scale[e] = inv[e % ch];
      } else {
        pt.out_scale = inv;
      }
    }

    Node& cons = out.at(triple.consumer);
    auto w2 = cons.weight.mutable_data();
    const std::size_t cout = cons.weight.dims().back();
    switch (cons.kind) {
      case OpKind::kConv2d:
        for (std::size_t i = 0; i < w2.size(); ++i) w2[i] *= s[(i / cout) % ch];
        break;
      case OpKind::kDepthwiseConv2d:
        for (std::size_t i = 0; i < w2.size(); ++i) w2[i] *= s[i % ch];
        break;
      default:  // dense; a flattened row r belongs to channel r % ch
        for (std::size_t i = 0; i < w2.size(); ++i) w2[i] *= s[(i / cout) % ch];
        break;
    }

    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    append(log, {"equalization", a.id,
                 "scaled " + p->id + " -> " + triple.consumer,
                 format("threshold=%.9g min_scale=%.9g max_scale=%.9g", t, *lo, *hi)});
    r.touched.push_back(p->id);
    r.touched.push_back(a.id);
    r.touched.insert(r.touched.end(), triple.passthrough.begin(), triple.passthrough.end());
    r.plan.triples.push_back(std::move(triple));
  }
  out.validate();
  return r;
}

Graph bias_correction(const Graph& g, const StatsStore& stats,
                      std::vector<BiasCorrectionRecord>* records, TransformLog* log) {
  Graph out = g;
  for (Node& n : out.nodes) {
    if (!n.is_linear() || !n.weight_quant) continue;
    const std::vector<double>& mean = stats.window_mean(n.id);
    const Tensor wq = n.weight_quant->dequantize(n.weight.dims());
    const std::size_t cout = n.weight.dims().back();
    const bool depthwise = n.kind == OpKind::kDepthwiseConv2d;
    const std::size_t expected = depthwise ? n.weight.size() : n.weight.size() / cout;
    if (mean.size() != expected) {
      throw Error(ErrorCode::kMissingStatistics,
                  "input means for layer '" + n.id + "' do not match its weights");
    }
    BiasCorrectionRecord rec{n.id, std::vector<double>(cout, 0.0), mean,
                             std::vector<double>(cout, 0.0)};
    for (std::size_t i = 0; i < n.weight.size(); ++i) {
      const double err = n.weight[i] - wq[i];
      rec.weight_error[i % cout] += err;
      rec.delta[i % cout] += err * mean[depthwise ? i : i / cout];
    }
    auto b = n.bias.mutable_data();
    double largest = 0.0;
    for (std::size_t k = 0; k < cout; ++k) {
      b[k] += rec.delta[k];
      largest = std::max(largest, std::abs(rec.delta[k]));
    }
    append(log, {"bias_correction", n.id, "bias corrected", format("max_abs_delta=%.9g", largest)});
    if (records) records->push_back(std::move(rec));
  }
  return out;
}

}  // namespace hfq
