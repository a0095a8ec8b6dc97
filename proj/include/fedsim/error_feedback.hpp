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

#ifndef FEDSIM_ERROR_FEEDBACK_HPP_
#define FEDSIM_ERROR_FEEDBACK_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "fedsim/compressors.hpp"

namespace fedsim {

/// Per-client residual accumulator. One buffer per client for the lifetime of
/// a run; 64-bit throughout so the conservation identity
///   decompress(message) + e_new == e_old + delta
/// holds exactly, coordinate by coordinate.
struct ErrorBuffer {
  std::vector<double> e;

  ErrorBuffer() = default;
  explicit ErrorBuffer(std::size_t dim) : e(dim, 0.0) {}

  std::size_t dim() const { return e.size(); }

  bool operator==(const ErrorBuffer&) const = default;
};

/// Compresses e + delta and keeps the residual in the buffer. lambda_next
/// feeds the adaptive threshold (see apply_compressor). The residual is taken
/// against the message actually sent, so with quantize_after the quantization
/// error is absorbed too. Throws std::invalid_argument on dimension mismatch.
SparseUpdate compress_with_ef(ErrorBuffer& buffer, std::span<const double> delta,
                              const CompressorKind& comp, double lambda_next = 0.0);

/// A client that does not communicate keeps its buffer untouched.
inline ErrorBuffer freeze(ErrorBuffer buffer) { return buffer; }

}  // namespace fedsim

#endif  // FEDSIM_ERROR_FEEDBACK_HPP_
