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

#ifndef HFQ_ERROR_H_
#define HFQ_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace hfq {

enum class ErrorCode {
  kInvalidArgument,
  kEmptyInput,
  kNonFinite,
  kShapeMismatch,
  kIo,
  kBadMagic,
  kVersionMismatch,
  kUnexpectedEof,
  kDanglingEdge,
  kCycle,
  kUnsupportedOp,
  kMalformedManifest,
  kMissingQuantParams,
  kNotFoldable,
  kMissingStatistics,
};

std::string_view error_code_name(ErrorCode code);

// All failures surfaced by the library are reported through this type. The
// code is stable and meant for programmatic dispatch; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hfq

#endif  // HFQ_ERROR_H_
