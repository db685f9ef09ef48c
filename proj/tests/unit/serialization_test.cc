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

#include <filesystem>
#include <fstream>
#include <functional>

#include <gtest/gtest.h>

#include "hfq/engine.h"
#include "hfq/error.h"
#include "hfq/stats.h"
#include "test_util.h"

namespace hfq {
namespace {

namespace fs = std::filesystem;
using testing::Rng;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("hfq_ser_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

ErrorCode code_of(const std::function<void()>& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Rounds every stored float parameter to float32 so round trips are exact.
Tensor to_f32(const Tensor& t) {
  std::vector<double> v(t.values());
  for (double& x : v) x = static_cast<float>(x);
  return Tensor(t.dims(), std::move(v), t.layout());
}

std::vector<double> to_f32(std::vector<double> v) {
  for (double& x : v) x = static_cast<float>(x);
  return v;
}

Graph f32_graph(Graph g) {
  for (Node& n : g.nodes) {
    if (!n.weight.empty()) n.weight = to_f32(n.weight);
    if (!n.bias.empty()) n.bias = to_f32(n.bias);
    n.bn.gamma = to_f32(n.bn.gamma);
    n.bn.beta = to_f32(n.bn.beta);
    n.bn.mean = to_f32(n.bn.mean);
    n.bn.variance = to_f32(n.bn.variance);
    n.activation.slopes = to_f32(n.activation.slopes);
  }
  return g;
}

TEST(BlobTest, EncodeDecodeRoundTrip) {
  BlobRecord a{"a", DType::kFloat32, {2, 3}, {1, 2, 3, 4, 5, 6.5f}, {}};
  BlobRecord b{"b", DType::kInt8, {4}, {}, {-128, -1, 0, 127}};
  BlobRecord c{"scalar", DType::kFloat32, {}, {3.25f}, {}};
  const auto bytes = encode_blob({a, b, c});
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "HPTQ");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  const auto back = decode_blob(bytes);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].name, "a");
  EXPECT_EQ(back[0].dims, (Shape{2, 3}));
  EXPECT_EQ(back[0].f32, a.f32);
  EXPECT_EQ(back[1].dtype, DType::kInt8);
  EXPECT_EQ(back[1].i8, b.i8);
  EXPECT_TRUE(back[2].dims.empty());
  EXPECT_EQ(back[2].f32, c.f32);
}

TEST(BlobTest, ByteLayoutIsLittleEndian) {
  const auto bytes = encode_blob({BlobRecord{"w", DType::kFloat32, {1}, {1.0f}, {}}});
  const std::vector<std::uint8_t> expected{'H', 'P', 'T', 'Q', 1, 0, 0, 0,  // header
                                           1, 0, 0, 0, 'w',                  // name
                                           0, 0, 0, 0,                       // dtype
                                           1, 0, 0, 0, 1, 0, 0, 0,           // rank, dims
                                           0x00, 0x00, 0x80, 0x3f};          // 1.0f
  EXPECT_EQ(bytes, expected);
}

TEST(BlobTest, CorruptBlobsAreRejected) {
  auto bytes = encode_blob({BlobRecord{"w", DType::kFloat32, {3}, {1, 2, 3}, {}}});
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_blob(bad); }), ErrorCode::kBadMagic);
  bad = bytes;
  bad[4] = 2;
  EXPECT_EQ(code_of([&] { decode_blob(bad); }), ErrorCode::kVersionMismatch);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    std::string msg;
    EXPECT_EQ(code_of([&] { decode_blob(bad); }, &msg), ErrorCode::kUnexpectedEof) << cut;
    EXPECT_EQ(msg, "unexpected end of container");
  }
}

TEST(BlobTest, BlobPathSharesTheStem) {
  EXPECT_EQ(blob_path_for("a/b/model.json"), fs::path("a/b/model.bin"));
}

TEST_F(TempDir, FloatModelRoundTripIsExact) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Graph g = f32_graph(testing::random_cnn(
        rng, true, {ActivationKind::kRelu, ActivationKind::kPRelu, ActivationKind::kRelu6,
                    ActivationKind::kSwish, ActivationKind::kLeakyRelu}));
    save_model(g, dir_ / "m.json");
    Graph back = load_model(dir_ / "m.json");
    Graph sorted = g;
    sorted.sort_topologically();
    EXPECT_EQ(back, sorted) << "trial " << trial;
  }
}

TEST_F(TempDir, DatasetRoundTripWithFiveHundredSamples) {
  Rng rng(2);
  CalibrationSet set = testing::random_set(rng, {4, 4, 3}, 500);
  for (Tensor& t : set.samples) t = to_f32(t);
  for (std::size_t i = 0; i < 500; ++i) set.labels.push_back(static_cast<int>(i % 10));
  save_dataset(set, dir_ / "d.json");
  const CalibrationSet back = load_dataset(dir_ / "d.json");
  ASSERT_EQ(back.size(), 500u);
  EXPECT_EQ(back.samples, set.samples);
  EXPECT_EQ(back.labels, set.labels);
}

TEST_F(TempDir, ManifestErrors) {
  Rng rng(3);
  save_dataset(testing::random_set(rng, {2}, 3), dir_ / "d.json");
  const auto bin = read_bytes(dir_ / "d.bin");

  std::ifstream in(dir_ / "d.json");
  const std::string manifest((std::istreambuf_iterator<char>(in)), {});
  const auto rewrite = [&](const std::string& from, const std::string& to) {
    std::string m = manifest;
    m.replace(m.find(from), from.size(), to);
    std::ofstream(dir_ / "e.json") << m;
    write_bytes(dir_ / "e.bin", bin);
  };

  rewrite("\"version\": 1", "\"version\": 2");
  EXPECT_EQ(code_of([&] { load_dataset(dir_ / "e.json"); }), ErrorCode::kVersionMismatch);
  rewrite("hptq-container", "zip");
  EXPECT_EQ(code_of([&] { load_dataset(dir_ / "e.json"); }), ErrorCode::kBadMagic);
  rewrite("{", "[");
  EXPECT_EQ(code_of([&] { load_dataset(dir_ / "e.json"); }), ErrorCode::kMalformedManifest);
  rewrite("\"samples\": 3", "\"samples\": 4");
  EXPECT_EQ(code_of([&] { load_dataset(dir_ / "e.json"); }), ErrorCode::kShapeMismatch);

  EXPECT_EQ(code_of([&] { load_model(dir_ / "d.json"); }), ErrorCode::kMalformedManifest);

  write_bytes(dir_ / "d.bin", std::vector<std::uint8_t>(bin.begin(), bin.end() - 2));
  std::string msg;
  EXPECT_EQ(code_of([&] { load_dataset(dir_ / "d.json"); }, &msg), ErrorCode::kUnexpectedEof);
  EXPECT_EQ(msg, "unexpected end of container");
  EXPECT_EQ(code_of([&] { load_dataset(dir_ / "missing.json"); }), ErrorCode::kIo);
}

Graph quantized(Graph g, const CalibrationSet& data) {
  testing::assign_thresholds(g, collect_statistics(g, data));
  for (Node& n : g.nodes) {
    if (!n.is_linear()) continue;
    const auto r = select_weight_thresholds(n.weight, 8, 10, ErrorMeasure::kMse);
    std::vector<int> exps;
    for (const auto& c : r) exps.push_back(c.exponent);
    n.weight_quant = WeightQuant::quantize(n.weight, 8, exps);
    n.weight = n.weight_quant->dequantize(n.weight.dims());
    n.bias = to_f32(n.bias);
  }
  return g;
}

TEST_F(TempDir, QuantizedModelStoresInt8AndRoundTrips) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Graph f = testing::random_cnn(rng, false, {ActivationKind::kRelu, ActivationKind::kSwish});
    const CalibrationSet data = testing::random_set(rng, f.input_shape, 20);
    const Graph g = quantized(f, data);
    save_quantized(g, dir_ / "q.json");

    for (const BlobRecord& r : decode_blob(read_bytes(dir_ / "q.bin"))) {
      if (r.name.ends_with(".weight")) {
        EXPECT_EQ(r.dtype, DType::kInt8) << r.name;
      }
    }
    const Graph back = load_model(dir_ / "q.json");
    for (const Node& n : g.nodes) {
      const Node& b = back.at(n.id);
      EXPECT_EQ(b.output_quant, n.output_quant) << n.id;
      EXPECT_EQ(b.weight_quant, n.weight_quant) << n.id;
      if (n.is_linear()) {
        EXPECT_EQ(b.weight, n.weight) << n.id;
      }
    }
    EXPECT_EQ(back.input_quant, g.input_quant);
    for (const Tensor& x : data.samples) {
      const Tensor a = run_quantized(g, x).outputs[0];
      const Tensor b = run_quantized(back, x).outputs[0];
      EXPECT_EQ(a, b);
    }
  }
}

TEST_F(TempDir, QuantizedSaveRequiresEveryQuantizer) {
  Rng rng(5);
  Graph g = testing::random_cnn(rng, false, {ActivationKind::kRelu});
  std::string msg;
  EXPECT_EQ(code_of([&] { save_quantized(g, dir_ / "q.json"); }, &msg),
            ErrorCode::kMissingQuantParams);
  EXPECT_NE(msg.find("'input'"), std::string::npos);
}

TEST_F(TempDir, WideWeightsCannotBeStoredAsInt8) {
  Rng rng(6);
  Graph g = testing::random_cnn(rng, false, {ActivationKind::kRelu});
  const CalibrationSet data = testing::random_set(rng, g.input_shape, 5);
  testing::assign_thresholds(g, collect_statistics(g, data));
  for (Node& n : g.nodes) {
    if (!n.is_linear()) continue;
    n.weight_quant = WeightQuant::quantize(n.weight, 12, std::vector<int>(n.weight.dims().back(), 0));
  }
  EXPECT_EQ(code_of([&] { save_quantized(g, dir_ / "q.json"); }), ErrorCode::kInvalidArgument);
}

TEST(FixtureTest, PythonWrittenContainersLoad) {
  const Graph g = load_model(testing::data_dir() / "small.json");
  EXPECT_EQ(g.input_shape, (Shape{6, 6, 2}));
  EXPECT_EQ(g.outputs, (std::vector<std::string>{"prob"}));
  EXPECT_EQ(g.at("dw").kind, OpKind::kDepthwiseConv2d);
  EXPECT_EQ(g.at("act").activation.slopes.size(), 4u);
  EXPECT_EQ(g.at("bn").bn.epsilon, 1e-3);
  const CalibrationSet calib = load_dataset(testing::data_dir() / "cnn_calib.json");
  EXPECT_EQ(calib.size(), 500u);
  EXPECT_EQ(calib.labels.size(), 500u);
  EXPECT_EQ(load_dataset(testing::data_dir() / "cnn_eval.json").size(), 2000u);
}

}  // namespace
}  // namespace hfq
