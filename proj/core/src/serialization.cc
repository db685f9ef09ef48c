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

#include "hfq/serialization.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <nlohmann/json.hpp>

#include "hfq/error.h"

namespace hfq {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kFormatName = "hptq-container";

// ---------------------------------------------------------------------------
// Little-endian byte codec.

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kUnexpectedEof, "unexpected end of container");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::int8_t i8() {
    need(1);
    return static_cast<std::int8_t>(bytes_[pos_++]);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Record table used while assembling or reading a container.

class RecordTable {
 public:
  RecordTable() = default;
  explicit RecordTable(std::vector<BlobRecord> records) {
    for (auto& r : records) {
      std::string name = r.name;
      if (!by_name_.emplace(name, records_.size()).second) {
        throw Error(ErrorCode::kMalformedManifest, "duplicate blob tensor '" + name + "'");
      }
      records_.push_back(std::move(r));
    }
  }

  void add_float(const std::string& name, const Shape& dims, std::span<const double> values) {
    BlobRecord r{name, DType::kFloat32, dims, {}, {}};
    r.f32.reserve(values.size());
    for (double v : values) r.f32.push_back(static_cast<float>(v));
    push(std::move(r));
  }
  void add_float(const std::string& name, const Tensor& t) {
    add_float(name, t.dims(), t.data());
  }
  void add_int8(const std::string& name, const Shape& dims, std::vector<std::int8_t> values) {
    push(BlobRecord{name, DType::kInt8, dims, {}, std::move(values)});
  }

  const BlobRecord& get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
      throw Error(ErrorCode::kMalformedManifest,
                  "manifest references missing blob tensor '" + name + "'");
    }
    return records_[it->second];
  }
  Tensor tensor(const std::string& name, Layout layout) const {
    const BlobRecord& r = get(name);
    if (r.dtype != DType::kFloat32) {
      throw Error(ErrorCode::kMalformedManifest, "tensor '" + name + "' is not float32");
    }
    return Tensor(r.dims, std::vector<double>(r.f32.begin(), r.f32.end()), layout);
  }
  std::vector<double> vector(const std::string& name) const {
    return tensor(name, Layout::kNone).values();
  }

  const std::vector<BlobRecord>& records() const { return records_; }

 private:
  void push(BlobRecord r) {
    if (!by_name_.emplace(r.name, records_.size()).second) {
      throw Error(ErrorCode::kMalformedManifest, "duplicate blob tensor '" + r.name + "'");
    }
    records_.push_back(std::move(r));
  }

  std::vector<BlobRecord> records_;
  std::map<std::string, std::size_t> by_name_;
};

// ---------------------------------------------------------------------------
// Manifest helpers.

json quant_to_json(const QuantSpec& q, double shift) {
  json j{{"bits", q.bits}, {"signed", q.is_signed}, {"exponent", q.exponent}};
  j["snc_shift"] = shift;
  return j;
}

QuantSpec quant_from_json(const json& j) {
  QuantSpec q;
  q.bits = j.at("bits").get<int>();
  q.is_signed = j.at("signed").get<bool>();
  q.exponent = j.at("exponent").get<int>();
  q.validate();
  return q;
}

template <typename T, std::size_t N>
std::array<T, N> array_from_json(const json& j) {
  const auto v = j.get<std::vector<T>>();
  if (v.size() != N) throw Error(ErrorCode::kMalformedManifest, "attribute has wrong arity");
  std::array<T, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

json manifest_header(const std::string& kind, const fs::path& manifest) {
  return json{{"format", kFormatName},
              {"version", kContainerVersion},
              {"kind", kind},
              {"blob", blob_path_for(manifest).filename().string()}};
}

void write_container(const json& manifest, const RecordTable& table, const fs::path& path) {
  const auto blob = encode_blob(table.records());
  write_file(blob_path_for(path), blob.data(), blob.size());
  const std::string text = manifest.dump(2) + "\n";
  write_file(path, text.data(), text.size());
}

struct Container {
  json manifest;
  RecordTable table;
};

Container read_container(const fs::path& path) {
  const auto text = read_file(path);
  json manifest;
  try {
    manifest = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedManifest,
                "cannot parse manifest '" + path.string() + "': " + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != kFormatName) {
    throw Error(ErrorCode::kBadMagic, "'" + path.string() + "' is not a container manifest");
  }
  if (manifest.value("version", 0u) != kContainerVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "unsupported container version " + manifest["version"].dump());
  }
  const fs::path blob = path.parent_path() / manifest.at("blob").get<std::string>();
  return {std::move(manifest), RecordTable(decode_blob(read_file(blob)))};
}

std::string weight_name(const Node& n) { return n.id + ".weight"; }
std::string bias_name(const Node& n) { return n.id + ".bias"; }

json node_to_json(const Node& n, RecordTable& table, bool quantized) {
  json j{{"id", n.id}, {"op", op_kind_name(n.kind)}, {"inputs", n.inputs}};
  switch (n.kind) {
    case OpKind::kConv2d:
    case OpKind::kDepthwiseConv2d:
      j["stride"] = n.stride;
      j["pad"] = n.pad;
      if (n.pad_value != 0.0) j["pad_value"] = n.pad_value;
      [[fallthrough]];
    case OpKind::kDense:
      j["weight"] = weight_name(n);
      j["bias"] = bias_name(n);
      if (quantized) {
        const WeightQuant& wq = *n.weight_quant;
        std::vector<std::int8_t> ints(wq.values.begin(), wq.values.end());
        table.add_int8(weight_name(n), n.weight.dims(), std::move(ints));
        j["weight_quant"] = {{"bits", wq.bits}, {"exponents", wq.exponents}};
      } else {
        table.add_float(weight_name(n), n.weight);
      }
      table.add_float(bias_name(n), n.bias);
      break;
    case OpKind::kBatchNorm: {
      const Shape c{n.bn.gamma.size()};
      for (const auto& [key, values] :
           {std::pair<const char*, const std::vector<double>*>{"gamma", &n.bn.gamma},
            {"beta", &n.bn.beta},
            {"mean", &n.bn.mean},
            {"variance", &n.bn.variance}}) {
        const std::string name = n.id + "." + key;
        table.add_float(name, c, *values);
        j[key] = name;
      }
      j["epsilon"] = n.bn.epsilon;
      break;
    }
    case OpKind::kActivation: {
      const Activation& a = n.activation;
      j["activation"] = activation_kind_name(a.kind);
      if (a.kind == ActivationKind::kLeakyRelu) j["slope"] = a.slope;
      if (a.kind == ActivationKind::kPRelu) {
        const std::string name = n.id + ".slopes";
        table.add_float(name, Shape{a.slopes.size()}, a.slopes);
        j["slopes"] = name;
      }
      if (a.kind == ActivationKind::kRelu6) {
        j["clip"] = a.clip;
        if (!a.clips.empty()) j["clips"] = a.clips;
      }
      if (a.shift != 0.0) j["shift"] = a.shift;
      break;
    }
    case OpKind::kMaxPool:
      j["pool"] = n.pool;
      j["stride"] = n.stride;
      break;
    default:
      break;
  }
  if (!n.out_scale.empty()) j["out_scale"] = n.out_scale;
  if (n.out_shift != 0.0) j["out_shift"] = n.out_shift;
  if (quantized && n.output_quant) j["quant"] = quant_to_json(*n.output_quant, n.out_shift);
  return j;
}

Node node_from_json(const json& j, const RecordTable& table) {
  Node n;
  n.id = j.at("id").get<std::string>();
  const std::string op = j.at("op").get<std::string>();
  const auto kind = parse_op_kind(op);
  if (!kind) {
    throw Error(ErrorCode::kUnsupportedOp,
                "node '" + n.id + "' uses unsupported op '" + op + "'");
  }
  n.kind = *kind;
  n.inputs = j.at("inputs").get<std::vector<std::string>>();
  if (j.contains("stride")) n.stride = array_from_json<std::size_t, 2>(j["stride"]);
  if (j.contains("pad")) n.pad = array_from_json<std::size_t, 2>(j["pad"]);
  if (j.contains("pool")) n.pool = array_from_json<std::size_t, 2>(j["pool"]);
  n.pad_value = j.value("pad_value", 0.0);
  if (n.is_linear()) {
    const std::string wname = j.at("weight").get<std::string>();
    const BlobRecord& w = table.get(wname);
    n.bias = table.tensor(j.at("bias").get<std::string>(), Layout::kActivation);
    if (j.contains("weight_quant")) {
      WeightQuant wq;
      wq.bits = j["weight_quant"].at("bits").get<int>();
      wq.exponents = j["weight_quant"].at("exponents").get<std::vector<int>>();
      if (w.dtype != DType::kInt8) {
        throw Error(ErrorCode::kMalformedManifest, "quantized weight '" + wname + "' is not int8");
      }
      wq.values.assign(w.i8.begin(), w.i8.end());
      n.weight = wq.dequantize(w.dims);
      n.weight_quant = std::move(wq);
    } else {
      n.weight = table.tensor(wname, Layout::kWeights);
    }
  }
  if (n.kind == OpKind::kBatchNorm) {
    n.bn.gamma = table.vector(j.at("gamma").get<std::string>());
    n.bn.beta = table.vector(j.at("beta").get<std::string>());
    n.bn.mean = table.vector(j.at("mean").get<std::string>());
    n.bn.variance = table.vector(j.at("variance").get<std::string>());
    n.bn.epsilon = j.at("epsilon").get<double>();
  }
  if (n.kind == OpKind::kActivation) {
    const std::string name = j.at("activation").get<std::string>();
    const auto act = parse_activation_kind(name);
    if (!act) {
      throw Error(ErrorCode::kUnsupportedOp,
                  "node '" + n.id + "' uses unsupported activation '" + name + "'");
    }
    Activation& a = n.activation;
    a.kind = *act;
    a.slope = j.value("slope", a.slope);
    if (a.kind == ActivationKind::kPRelu) a.slopes = table.vector(j.at("slopes").get<std::string>());
    a.clip = j.value("clip", a.clip);
    if (j.contains("clips")) a.clips = j["clips"].get<std::vector<double>>();
    a.shift = j.value("shift", 0.0);
  }
  if (j.contains("out_scale")) n.out_scale = j["out_scale"].get<std::vector<double>>();
  n.out_shift = j.value("out_shift", 0.0);
  if (j.contains("quant")) n.output_quant = quant_from_json(j["quant"]);
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_blob(const std::vector<BlobRecord>& records) {
  ByteWriter w;
  w.raw(kBlobMagic, 4);
  w.u32(kContainerVersion);
  for (const BlobRecord& r : records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.raw(r.name.data(), r.name.size());
    w.u32(static_cast<std::uint32_t>(r.dtype));
    w.u32(static_cast<std::uint32_t>(r.dims.size()));
    for (std::size_t d : r.dims) w.u32(static_cast<std::uint32_t>(d));
    const std::size_t n = element_count(r.dims);
    if (r.dtype == DType::kFloat32) {
      if (r.f32.size() != n) throw Error(ErrorCode::kShapeMismatch, "record '" + r.name + "' payload size");
      for (float v : r.f32) w.f32(v);
    } else {
      if (r.i8.size() != n) throw Error(ErrorCode::kShapeMismatch, "record '" + r.name + "' payload size");
      w.raw(r.i8.data(), r.i8.size());
    }
  }
  return w.take();
}

std::vector<BlobRecord> decode_blob(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != std::string(kBlobMagic, 4)) {
    throw Error(ErrorCode::kBadMagic, "bad magic: not a tensor blob");
  }
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "blob version " + std::to_string(version) + " is not supported");
  }
  std::vector<BlobRecord> records;
  while (!r.at_end()) {
    BlobRecord rec;
    rec.name = r.str(r.u32());
    const std::uint32_t code = r.u32();
    if (code > 1) {
      throw Error(ErrorCode::kMalformedManifest,
                  "record '" + rec.name + "' has unknown dtype " + std::to_string(code));
    }
    rec.dtype = static_cast<DType>(code);
    const std::uint32_t rank = r.u32();
    for (std::uint32_t i = 0; i < rank; ++i) rec.dims.push_back(r.u32());
    const std::size_t n = element_count(rec.dims);
    if (rec.dtype == DType::kFloat32) {
      r.need(4 * n);
      rec.f32.resize(n);
      for (float& v : rec.f32) v = r.f32();
    } else {
      r.need(n);
      rec.i8.resize(n);
      for (std::int8_t& v : rec.i8) v = r.i8();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

fs::path blob_path_for(const fs::path& manifest) {
  fs::path p = manifest;
  return p.replace_extension(".bin");
}

Graph load_model(const fs::path& path) {
  Container c = read_container(path);
  const json& m = c.manifest;
  const std::string kind = m.value("kind", "");
  if (kind != "model" && kind != "quantized_model") {
    throw Error(ErrorCode::kMalformedManifest, "container kind '" + kind + "' is not a model");
  }
  Graph g;
  try {
    const json& in = m.at("input");
    g.input_name = in.at("name").get<std::string>();
    g.input_shape = in.at("shape").get<Shape>();
    if (in.contains("quant")) g.input_quant = quant_from_json(in["quant"]);
    g.outputs = m.at("outputs").get<std::vector<std::string>>();
    for (const json& jn : m.at("nodes")) g.nodes.push_back(node_from_json(jn, c.table));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, std::string("malformed manifest: ") + e.what());
  }
  g.sort_topologically();
  g.validate();
  if (kind == "quantized_model") require_quantized(g);
  return g;
}

void save_model(const Graph& g, const fs::path& path) {
  g.validate();
  RecordTable table;
  json m = manifest_header("model", path);
  m["input"] = {{"name", g.input_name}, {"shape", g.input_shape}};
  m["outputs"] = g.outputs;
  json nodes = json::array();
  for (const Node& n : g.nodes) nodes.push_back(node_to_json(n, table, false));
  m["nodes"] = std::move(nodes);
  write_container(m, table, path);
}

void require_quantized(const Graph& g) {
  for (const std::string& t : g.quantization_points()) {
    if (!g.tensor_quant(t)) {
      throw Error(ErrorCode::kMissingQuantParams,
                  "missing quantization parameters for tensor '" + t + "'");
    }
  }
  for (const Node& n : g.nodes) {
    if (!n.is_linear()) continue;
    if (!n.weight_quant) {
      throw Error(ErrorCode::kMissingQuantParams,
                  "missing quantization parameters for weights of '" + n.id + "'");
    }
    if (n.weight_quant->exponents.size() != n.weight.dims().back() ||
        n.weight_quant->values.size() != n.weight.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "weight quantization of '" + n.id + "' does not match its weights");
    }
  }
}

void save_quantized(const Graph& g, const fs::path& path) {
  g.validate();
  require_quantized(g);
  for (const Node& n : g.nodes) {
    if (n.weight_quant && n.weight_quant->bits > 8) {
      throw Error(ErrorCode::kInvalidArgument,
                  "node '" + n.id + "': quantized containers store at most 8-bit weights");
    }
  }
  RecordTable table;
  json m = manifest_header("quantized_model", path);
  m["input"] = {{"name", g.input_name},
                {"shape", g.input_shape},
                {"quant", quant_to_json(*g.input_quant, 0.0)}};
  m["outputs"] = g.outputs;
  json nodes = json::array();
  for (const Node& n : g.nodes) nodes.push_back(node_to_json(n, table, true));
  m["nodes"] = std::move(nodes);
  write_container(m, table, path);
}

CalibrationSet load_dataset(const fs::path& path) {
  Container c = read_container(path);
  const json& m = c.manifest;
  if (m.value("kind", "") != "dataset") {
    throw Error(ErrorCode::kMalformedManifest, "'" + path.string() + "' is not a dataset");
  }
  CalibrationSet set;
  try {
    const auto n = m.at("samples").get<std::size_t>();
    const auto shape = m.at("input_shape").get<Shape>();
    const BlobRecord& inputs = c.table.get(m.at("inputs").get<std::string>());
    Shape expected{n};
    expected.insert(expected.end(), shape.begin(), shape.end());
    if (inputs.dtype != DType::kFloat32 || inputs.dims != expected) {
      throw Error(ErrorCode::kShapeMismatch,
                  "dataset inputs have shape " + shape_to_string(inputs.dims) + ", expected " +
                      shape_to_string(expected));
    }
    const std::size_t per = element_count(shape);
    set.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(inputs.f32.begin() + i * per, inputs.f32.begin() + (i + 1) * per);
      set.samples.emplace_back(shape, std::move(v), Layout::kActivation);
    }
    if (m.contains("labels")) {
      const BlobRecord& labels = c.table.get(m["labels"].get<std::string>());
      if (labels.dtype != DType::kFloat32 || labels.dims != Shape{n}) {
        throw Error(ErrorCode::kShapeMismatch, "label vector must have one entry per sample");
      }
      for (float v : labels.f32) {
        if (v != std::floor(v) || v < 0) {
          throw Error(ErrorCode::kMalformedManifest, "labels must be non-negative integers");
        }
        set.labels.push_back(static_cast<int>(v));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, std::string("malformed manifest: ") + e.what());
  }
  return set;
}

void save_dataset(const CalibrationSet& set, const fs::path& path) {
  if (set.samples.empty()) throw Error(ErrorCode::kEmptyInput, "calibration set empty");
  const Shape shape = set.samples.front().dims();
  std::vector<double> flat;
  flat.reserve(set.size() * element_count(shape));
  for (const Tensor& s : set.samples) {
    if (s.dims() != shape) {
      throw Error(ErrorCode::kShapeMismatch, "dataset samples differ in shape");
    }
    flat.insert(flat.end(), s.data().begin(), s.data().end());
  }
  Shape dims{set.size()};
  dims.insert(dims.end(), shape.begin(), shape.end());
  RecordTable table;
  table.add_float("inputs", dims, flat);
  json m = manifest_header("dataset", path);
  m["samples"] = set.size();
  m["input_shape"] = shape;
  m["inputs"] = "inputs";
  if (set.has_labels()) {
    if (set.labels.size() != set.size()) {
      throw Error(ErrorCode::kShapeMismatch, "label/sample count mismatch");
    }
    std::vector<double> labels(set.labels.begin(), set.labels.end());
    table.add_float("labels", Shape{set.size()}, labels);
    m["labels"] = "labels";
  }
  write_container(m, table, path);
}

}  // namespace hfq
