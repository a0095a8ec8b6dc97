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

#include "fedsim/compressors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace fedsim {
namespace {

void check_dim(std::size_t n) {
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("vector dimension exceeds 32-bit index space");
  }
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  append_u32(out, bits);
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + 4 > bytes.size()) {
    throw std::runtime_error("sparse update truncated at byte " + std::to_string(at));
  }
  return static_cast<std::uint32_t>(bytes[at]) |
         static_cast<std::uint32_t>(bytes[at + 1]) << 8 |
         static_cast<std::uint32_t>(bytes[at + 2]) << 16 |
         static_cast<std::uint32_t>(bytes[at + 3]) << 24;
}

float read_f32(std::span<const std::uint8_t> bytes, std::size_t at) {
  const std::uint32_t bits = read_u32(bytes, at);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

CompressorKind CompressorKind::identity() { return CompressorKind{}; }

CompressorKind CompressorKind::hard_threshold(double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("hard threshold must be non-negative");
  CompressorKind c;
  c.type = CompressorType::kHardThreshold;
  c.lambda = lambda;
  return c;
}

CompressorKind CompressorKind::topk(double k) {
  if (k <= 0.0 || k > 1.0) throw std::invalid_argument("top-k ratio must lie in (0, 1]");
  CompressorKind c;
  c.type = CompressorType::kTopK;
  c.k = k;
  return c;
}

CompressorKind CompressorKind::gamma_fedht(const ThresholdSchedule& schedule) {
  CompressorKind c;
  c.type = CompressorType::kGammaFedHT;
  c.schedule = schedule;
  return c;
}

SparseUpdate compress_hard_threshold(std::span<const double> x, double lambda) {
  check_dim(x.size());
  SparseUpdate u;
  u.dim = static_cast<std::uint32_t>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::fabs(x[i]) > lambda) {
      u.indices.push_back(static_cast<std::uint32_t>(i));
      u.values.push_back(x[i]);
    }
  }
  return u;
}

SparseUpdate compress_topk(std::span<const double> x, double k) {
  check_dim(x.size());
  if (k <= 0.0 || k > 1.0) throw std::invalid_argument("top-k ratio must lie in (0, 1]");
  SparseUpdate u;
  u.dim = static_cast<std::uint32_t>(x.size());
  if (x.empty()) return u;

  // Nudge against ulp-level underestimates when k was derived as m/d.
  const std::size_t budget = static_cast<std::size_t>(
      std::floor(k * static_cast<double>(x.size()) + 1e-9));
  const std::size_t m = std::min(x.size(), std::max<std::size_t>(1, budget));

  // Min-heap of the m best seen so far; top is the weakest keeper. Streaming
  // in index order means an equal-magnitude newcomer never displaces an
  // earlier index, which settles ties toward the lower index.
  struct Entry {
    double mag;
    std::uint32_t idx;
  };
  const auto weaker = [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag > b.mag;  // heap orders weakest on top
    return a.idx < b.idx;
  };
  std::vector<Entry> heap;
  heap.reserve(m + 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Entry e{std::fabs(x[i]), static_cast<std::uint32_t>(i)};
    if (heap.size() < m) {
      heap.push_back(e);
      std::push_heap(heap.begin(), heap.end(), weaker);
    } else if (e.mag > heap.front().mag) {
      std::pop_heap(heap.begin(), heap.end(), weaker);
      heap.back() = e;
      std::push_heap(heap.begin(), heap.end(), weaker);
    }
  }

  std::vector<std::uint32_t> kept;
  kept.reserve(heap.size());
  for (const Entry& e : heap) kept.push_back(e.idx);
  std::sort(kept.begin(), kept.end());
  u.indices = std::move(kept);
  u.values.reserve(u.indices.size());
  for (std::uint32_t idx : u.indices) u.values.push_back(x[idx]);
  return u;
}

SparseUpdate quantize_ternary(const SparseUpdate& u) {
  if (u.encoding != SparseEncoding::kIndexValue) {
    throw std::invalid_argument("ternary quantizer expects an index/value update");
  }
  SparseUpdate q;
  q.dim = u.dim;
  q.indices = u.indices;
  q.encoding = SparseEncoding::kTernary;
  double mass = 0.0;
  for (double v : u.values) mass += std::fabs(v);
  const double mu = u.values.empty() ? 0.0 : mass / static_cast<double>(u.values.size());
  q.ternary_magnitude = mu;
  q.values.reserve(u.values.size());
  for (double v : u.values) q.values.push_back(std::signbit(v) ? -mu : mu);
  return q;
}

std::vector<double> decompress(const SparseUpdate& u) {
  std::vector<double> dense(u.dim, 0.0);
  for (std::size_t j = 0; j < u.indices.size(); ++j) {
    dense[u.indices[j]] = u.values[j];
  }
  return dense;
}

std::size_t encoded_size_bytes(const SparseUpdate& u) {
  const std::size_t nnz = u.nnz();
  if (u.encoding == SparseEncoding::kIndexValue) {
    return 8 + 8 * nnz;
  }
  return 8 + 4 + 4 * nnz + (nnz + 7) / 8;
}

double compression_ratio(const SparseUpdate& u) {
  if (u.dim == 0) return 0.0;
  return static_cast<double>(u.nnz()) / static_cast<double>(u.dim);
}

std::vector<std::uint8_t> serialize(const SparseUpdate& u) {
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size_bytes(u));
  append_u32(out, u.dim);
  append_u32(out, static_cast<std::uint32_t>(u.nnz()));
  if (u.encoding == SparseEncoding::kIndexValue) {
    for (std::size_t j = 0; j < u.nnz(); ++j) {
      append_u32(out, u.indices[j]);
      append_f32(out, static_cast<float>(u.values[j]));
    }
  } else {
    append_f32(out, static_cast<float>(u.ternary_magnitude));
    for (std::uint32_t idx : u.indices) append_u32(out, idx);
    std::uint8_t bits = 0;
    for (std::size_t j = 0; j < u.nnz(); ++j) {
      if (std::signbit(u.values[j])) bits |= static_cast<std::uint8_t>(1u << (j % 8));
      if (j % 8 == 7) {
        out.push_back(bits);
        bits = 0;
      }
    }
    if (u.nnz() % 8 != 0) out.push_back(bits);
  }
  return out;
}

SparseUpdate deserialize(std::span<const std::uint8_t> bytes) {
  SparseUpdate u;
  u.dim = read_u32(bytes, 0);
  const std::uint32_t count = read_u32(bytes, 4);
  // The header does not name the encoding; infer it from the length.
  const std::size_t index_value_size = 8 + 8 * static_cast<std::size_t>(count);
  if (bytes.size() == index_value_size) {
    u.encoding = SparseEncoding::kIndexValue;
    std::size_t at = 8;
    for (std::uint32_t j = 0; j < count; ++j) {
      u.indices.push_back(read_u32(bytes, at));
      u.values.push_back(static_cast<double>(read_f32(bytes, at + 4)));
      at += 8;
    }
  } else {
    u.encoding = SparseEncoding::kTernary;
    u.ternary_magnitude = static_cast<double>(read_f32(bytes, 8));
    std::size_t at = 12;
    for (std::uint32_t j = 0; j < count; ++j) {
      u.indices.push_back(read_u32(bytes, at));
      at += 4;
    }
    const std::size_t bitmap_len = (count + 7) / 8;
    if (at + bitmap_len != bytes.size()) {
      throw std::runtime_error("sparse update has unexpected length " +
                               std::to_string(bytes.size()));
    }
    for (std::uint32_t j = 0; j < count; ++j) {
      const bool negative = (bytes[at + j / 8] >> (j % 8)) & 1u;
      u.values.push_back(negative ? -u.ternary_magnitude : u.ternary_magnitude);
    }
  }
  for (std::size_t j = 0; j < u.indices.size(); ++j) {
    if (u.indices[j] >= u.dim || (j > 0 && u.indices[j] <= u.indices[j - 1])) {
      throw std::runtime_error("sparse update indices not strictly increasing");
    }
  }
  return u;
}

SparseUpdate apply_compressor(std::span<const double> x, const CompressorKind& kind,
                              double lambda_next) {
  SparseUpdate msg;
  switch (kind.type) {
    case CompressorType::kIdentity:
      msg = compress_hard_threshold(x, 0.0);
      break;
    case CompressorType::kHardThreshold:
      msg = compress_hard_threshold(x, kind.lambda);
      break;
    case CompressorType::kTopK:
      msg = compress_topk(x, kind.k);
      break;
    case CompressorType::kGammaFedHT:
      msg = compress_hard_threshold(x, lambda_next);
      break;
  }
  if (kind.quantize_after) msg = quantize_ternary(msg);
  return msg;
}

}  // namespace fedsim
