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

#ifndef HFQ_QUANTIZERS_H_
#define HFQ_QUANTIZERS_H_

#include <cmath>
#include <cstdint>
#include <vector>

#include "hfq/tensor.h"

namespace hfq {

// Round half away from zero. Every quantizer and every oracle in the project
// goes through this so tie-breaking is identical everywhere.
inline double round_half_away(double x) { return std::round(x); }

// General uniform affine quantizer with clipping range [a, b].
struct UniformSpec {
  double a = 0.0;
  double b = 1.0;
  int bits = 8;

  // Throws kInvalidArgument unless a < b and bits >= 2.
  void validate() const;
  double step() const;
  double zero_point() const { return a / step(); }
};

double uniform_quantize(double x, const UniformSpec& spec);

// Symmetric quantizer with a power-of-two threshold t = 2^exponent and a zero
// point fixed at 0.
struct QuantSpec {
  int bits = 8;
  bool is_signed = true;
  int exponent = 0;

  double threshold() const;
  // 2t / 2^bits when signed, t / 2^bits when unsigned. Always a power of two.
  double step() const;
  std::int64_t int_min() const;
  std::int64_t int_max() const;

  // Throws kInvalidArgument for bits outside [2, 30].
  void validate() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

// Integer image of x: clip(round(x / s), int_min, int_max).
std::int64_t quantize_to_int(double x, const QuantSpec& spec);

// Quantize-dequantize of a single value (s * x_int).
double fake_quantize(double x, const QuantSpec& spec);

// Tensor-level signed/unsigned quantizers. They reject a spec of the wrong
// signedness with kInvalidArgument.
Tensor quantize_signed(const Tensor& x, const QuantSpec& spec);
Tensor quantize_unsigned(const Tensor& x, const QuantSpec& spec);

// Dispatches on spec.is_signed.
Tensor fake_quantize(const Tensor& x, const QuantSpec& spec);
std::vector<std::int64_t> quantize_ints(const Tensor& x, const QuantSpec& spec);

}  // namespace hfq

#endif  // HFQ_QUANTIZERS_H_
