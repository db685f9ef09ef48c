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

// Container format shared by float models, quantized models and datasets.
//
// A container is a UTF-8 JSON manifest plus one binary blob. The manifest
// names the blob (a path relative to the manifest) and describes topology and
// attributes; the blob carries every tensor payload:
//
//   "HPTQ"                      4 bytes magic
//   version                     u32 little-endian
//   repeated until end of file:
//     name length               u32 LE, then that many UTF-8 bytes
//     dtype code                u32 LE: 0 = float32 LE IEEE-754, 1 = int8
//     rank                      u32 LE, then rank x u32 LE dims
//     payload                   row-major, element size per dtype

#ifndef HFQ_SERIALIZATION_H_
#define HFQ_SERIALIZATION_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hfq/ir.h"

namespace hfq {

inline constexpr char kBlobMagic[4] = {'H', 'P', 'T', 'Q'};
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint32_t { kFloat32 = 0, kInt8 = 1 };

struct BlobRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  Shape dims;
  std::vector<float> f32;        // dtype == kFloat32
  std::vector<std::int8_t> i8;   // dtype == kInt8
};

std::vector<std::uint8_t> encode_blob(const std::vector<BlobRecord>& records);
// Throws kBadMagic, kVersionMismatch or kUnexpectedEof.
std::vector<BlobRecord> decode_blob(const std::vector<std::uint8_t>& bytes);

// Blob file that accompanies a manifest: same stem, ".bin" extension.
std::filesystem::path blob_path_for(const std::filesystem::path& manifest);

// Loads a float or quantized model. For quantized containers the node
// weights are the de-quantized integers and weight_quant is populated.
Graph load_model(const std::filesystem::path& manifest);

// Float payloads are stored as float32.
void save_model(const Graph& graph, const std::filesystem::path& manifest);

// Stores linear weights as int8 plus per-channel exponents and activation
// quantizers as manifest attributes. Throws kMissingQuantParams when any
// quantizer slot is empty.
void save_quantized(const Graph& graph, const std::filesystem::path& manifest);

CalibrationSet load_dataset(const std::filesystem::path& manifest);
void save_dataset(const CalibrationSet& set, const std::filesystem::path& manifest);

// Checks every slot save_quantized needs; throws kMissingQuantParams naming
// the first tensor or node without parameters.
void require_quantized(const Graph& graph);

}  // namespace hfq

#endif  // HFQ_SERIALIZATION_H_
