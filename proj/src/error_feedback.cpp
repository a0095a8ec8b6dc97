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

#include "fedsim/error_feedback.hpp"

#include <stdexcept>
#include <string>

namespace fedsim {

SparseUpdate compress_with_ef(ErrorBuffer& buffer, std::span<const double> delta,
                              const CompressorKind& comp, double lambda_next) {
  if (buffer.dim() != delta.size()) {
    throw std::invalid_argument("error buffer dimension " + std::to_string(buffer.dim()) +
                                " does not match update dimension " +
                                std::to_string(delta.size()));
  }
  // Accumulate in place: buffer.e becomes e + delta, the compressor input.
  for (std::size_t i = 0; i < delta.size(); ++i) buffer.e[i] += delta[i];

  const SparseUpdate message = apply_compressor(buffer.e, comp, lambda_next);

  // Residual of what was actually sent. For threshold and top-k messages the
  // transmitted values equal the input exactly, so kept coordinates zero out.
  for (std::size_t j = 0; j < message.indices.size(); ++j) {
    buffer.e[message.indices[j]] -= message.values[j];
  }
  return message;
}

}  // namespace fedsim
