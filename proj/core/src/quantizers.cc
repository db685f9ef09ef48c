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

#include "hfq/quantizers.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "hfq/error.h"

namespace hfq {

void UniformSpec::validate() const {
  if (!(a < b)) {
    throw Error(ErrorCode::kInvalidArgument,
                "uniform quantizer needs a < b");
  }
  if (bits < 2) {
    throw Error(ErrorCode::kInvalidArgument, "bit width must be >= 2");
  }
}

double UniformSpec::step() const {
  return (b - a) / (std::ldexp(1.0, bits) - 1.0);
}

double uniform_quantize(double x, const UniformSpec& spec) {
  spec.validate();
  const double s = spec.step();
  const double clipped = std::clamp(x, spec.a, spec.b);
  return s * round_half_away((clipped - spec.a) / s) + spec.a;
}

double QuantSpec::threshold() const { return std::ldexp(1.0, exponent); }

double QuantSpec::step() const {
  return std::ldexp(1.0, exponent + (is_signed ? 1 : 0) - bits);
}

std::int64_t QuantSpec::int_min() const {
  return is_signed ? -(std::int64_t{1} << (bits - 1)) : 0;
}

std::int64_t QuantSpec::int_max() const {
  return is_signed ? (std::int64_t{1} << (bits - 1)) - 1
                   : (std::int64_t{1} << bits) - 1;
}

void QuantSpec::validate() const {
  if (bits < 2 || bits > 30) {
    throw Error(ErrorCode::kInvalidArgument,
                "bit width must lie in [2, 30], got " + std::to_string(bits));
  }
}

std::int64_t quantize_to_int(double x, const QuantSpec& spec) {
  // Clip in the real domain first so huge inputs cannot overflow the cast.
  const double scaled = x / spec.step();
  const double lo = static_cast<double>(spec.int_min());
  const double hi = static_cast<double>(spec.int_max());
  return static_cast<std::int64_t>(std::clamp(round_half_away(scaled), lo, hi));
}

double fake_quantize(double x, const QuantSpec& spec) {
  return spec.step() * static_cast<double>(quantize_to_int(x, spec));
}

namespace {

Tensor apply(const Tensor& x, const QuantSpec& spec) {
  spec.validate();
  Tensor out = x;
  for (double& v : out.mutable_data()) v = fake_quantize(v, spec);
  return out;
}

}  // namespace

Tensor quantize_signed(const Tensor& x, const QuantSpec& spec) {
  if (!spec.is_signed) {
    throw Error(ErrorCode::kInvalidArgument,
                "quantize_signed called with an unsigned spec");
  }
  return apply(x, spec);
}

Tensor quantize_unsigned(const Tensor& x, const QuantSpec& spec) {
  if (spec.is_signed) {
    throw Error(ErrorCode::kInvalidArgument,
                "quantize_unsigned called with a signed spec");
  }
  return apply(x, spec);
}

Tensor fake_quantize(const Tensor& x, const QuantSpec& spec) {
  return apply(x, spec);
}

std::vector<std::int64_t> quantize_ints(const Tensor& x, const QuantSpec& spec) {
  spec.validate();
  std::vector<std::int64_t> out;
  out.reserve(x.size());
  for (double v : x.data()) out.push_back(quantize_to_int(v, spec));
  return out;
}

}  // namespace hfq
