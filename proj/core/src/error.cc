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

#include "hfq/error.h"

namespace hfq {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kUnexpectedEof: return "unexpected_eof";
    case ErrorCode::kDanglingEdge: return "dangling_edge";
    case ErrorCode::kCycle: return "cycle";
    case ErrorCode::kUnsupportedOp: return "unsupported_op";
    case ErrorCode::kMalformedManifest: return "malformed_manifest";
    case ErrorCode::kMissingQuantParams: return "missing_quant_params";
    case ErrorCode::kNotFoldable: return "not_foldable";
    case ErrorCode::kMissingStatistics: return "missing_statistics";
  }
  return "unknown";
}

}  // namespace hfq
