// Copyright 2026 The fedsim Authors. All Rights Reserved.
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
// =============================================================================

#ifndef FEDSIM_COMPRESSORS_HPP_
#define FEDSIM_COMPRESSORS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedsim/schedules.hpp"

namespace fedsim {

enum class SparseEncoding { kIndexValue, kTernary };

/// A compressed update message: the coordinates that survived compression.
/// Indices are strictly increasing; under ternary encoding every value is
/// +/- ternary_magnitude and the wire format stores one magnitude plus a
/// sign bitmap instead of per-coordinate values.
struct SparseUpdate {
  std::uint32_t dim = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  SparseEncoding encoding = SparseEncoding::kIndexValue;
  double ternary_magnitude = 0.0;

  std::size_t nnz() const { return indices.size(); }

  bool operator==(const SparseUpdate&) const = default;
};

enum class CompressorType { kIdentity, kHardThreshold, kTopK, kGammaFedHT };

struct CompressorKind {
  CompressorType type = CompressorType::kIdentity;
  double lambda = 0.0;          // fixed hard threshold
  double k = 1.0;               // top-k ratio in (0, 1]
  ThresholdSchedule schedule;   // adaptive threshold
  bool quantize_after = false;  // apply the ternary quantizer to survivors

  static CompressorKind identity();
  static CompressorKind hard_threshold(double lambda);
  static CompressorKind topk(double k);
  static CompressorKind gamma_fedht(const ThresholdSchedule& schedule);

  bool operator==(const CompressorKind&) const = default;
};

/// Keeps coordinates with |x_i| strictly above lambda, values exact.
/// Single pass; the dropped residual is at most lambda per coordinate.
SparseUpdate compress_hard_threshold(std::span<const double> x, double lambda);

/// Keeps the m = max(1, floor(k*d)) coordinates of largest magnitude, ties
/// broken toward the lower index. Selection runs through a size-m heap.
SparseUpdate compress_topk(std::span<const double> x, double k);

/// Replaces survivor values by sign(v) * mean(|v|), preserving total L1 mass.
SparseUpdate quantize_ternary(const SparseUpdate& u);

/// Dense vector of length dim with message values scattered at their indices.
std::vector<double> decompress(const SparseUpdate& u);

/// Wire size of the canonical encoding: 8-byte header plus, for index/value
/// messages, 8 bytes per coordinate (4-byte index, 4-byte value); ternary
/// messages carry a 4-byte magnitude, 4-byte indices and a sign bitmap.
std::size_t encoded_size_bytes(const SparseUpdate& u);

/// Transmitted coordinates over model dimension, in [0, 1].
double compression_ratio(const SparseUpdate& u);

/// Canonical little-endian wire layout; encoded_size_bytes(u) bytes long.
/// Values are narrowed to 32-bit floats on the wire, so this is for byte
/// accounting and message dumps, not for the in-process update path.
std::vector<std::uint8_t> serialize(const SparseUpdate& u);
SparseUpdate deserialize(std::span<const std::uint8_t> bytes);

/// Dispatch over CompressorType. lambda_next supplies the adaptive threshold
/// for kGammaFedHT (the caller evaluates the schedule); it is ignored by the
/// other kinds. Applies the ternary quantizer when kind.quantize_after.
SparseUpdate apply_compressor(std::span<const double> x, const CompressorKind& kind,
                              double lambda_next = 0.0);

}  // namespace fedsim

#endif  // FEDSIM_COMPRESSORS_HPP_
