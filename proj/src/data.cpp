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

#include "fedsim/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

#include "fedsim/rng.hpp"

namespace fedsim {
namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic = 0x00000803;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + 4 > bytes.size()) {
    throw IdxParseError("truncated IDX header", at);
  }
  return static_cast<std::uint32_t>(bytes[at]) << 24 |
         static_cast<std::uint32_t>(bytes[at + 1]) << 16 |
         static_cast<std::uint32_t>(bytes[at + 2]) << 8 |
         static_cast<std::uint32_t>(bytes[at + 3]);
}

std::vector<std::uint8_t> inflate_gzip(std::span<const std::uint8_t> raw,
                                       const std::string& path) {
  z_stream zs{};
  // 15 window bits + 16 selects gzip framing.
  if (inflateInit2(&zs, 15 + 16) != Z_OK) {
    throw std::runtime_error("zlib init failed for " + path);
  }
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 16);
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("corrupt gzip stream in " + path);
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

Batch Dataset::batch(std::span<const int> rows) const {
  Batch b;
  b.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  b.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(rows[i]);
    b.labels.push_back(labels[rows[i]]);
  }
  return b;
}

IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  std::size_t ndims = 0;
  if (magic == kLabelMagic) {
    ndims = 1;
  } else if (magic == kImageMagic) {
    ndims = 3;
  } else {
    throw IdxParseError("bad IDX magic 0x" + [&] {
      char buf[9];
      std::snprintf(buf, sizeof(buf), "%08x", magic);
      return std::string(buf);
    }(), 0);
  }

  IdxTensor t;
  std::size_t payload = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::size_t at = 4 + 4 * d;
    const std::uint32_t extent = read_be32(bytes, at);
    if (payload > std::numeric_limits<std::size_t>::max() / std::max<std::size_t>(extent, 1)) {
      throw IdxParseError("IDX dimension product overflows", at);
    }
    t.dims.push_back(extent);
    payload *= extent;
  }

  const std::size_t data_at = 4 + 4 * ndims;
  if (bytes.size() < data_at + payload) {
    throw IdxParseError("truncated IDX payload: declared " + std::to_string(payload) +
                            " bytes, found " + std::to_string(bytes.size() - data_at),
                        bytes.size());
  }
  if (bytes.size() > data_at + payload) {
    throw IdxParseError("trailing bytes after IDX payload", data_at + payload);
  }
  t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_at), bytes.end());
  return t;
}

std::vector<std::uint8_t> read_file_maybe_gzip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) {
    return inflate_gzip(raw, path);
  }
  return raw;
}

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int class_count) {
  const IdxTensor images = parse_idx(read_file_maybe_gzip(images_path));
  const IdxTensor labels = parse_idx(read_file_maybe_gzip(labels_path));
  if (images.dims.size() != 3) {
    throw std::runtime_error(images_path + " is not an IDX image stack");
  }
  if (labels.dims.size() != 1) {
    throw std::runtime_error(labels_path + " is not an IDX label vector");
  }
  if (images.dims[0] != labels.dims[0]) {
    throw std::runtime_error("image and label counts disagree: " +
                             std::to_string(images.dims[0]) + " vs " +
                             std::to_string(labels.dims[0]));
  }

  Dataset ds;
  const std::size_t count = images.dims[0];
  const std::size_t pixels = images.dims[1] * images.dims[2];
  ds.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < pixels; ++j) {
      ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<double>(images.data[i * pixels + j]) / 255.0;
    }
  }
  ds.labels.reserve(count);
  int max_label = -1;
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels.push_back(static_cast<int>(labels.data[i]));
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.classes = class_count > 0 ? class_count : max_label + 1;
  for (int label : ds.labels) {
    if (label >= ds.classes) {
      throw std::runtime_error("label " + std::to_string(label) +
                               " exceeds declared class count");
    }
  }
  return ds;
}

Partition partition_quantity_label(const Dataset& ds, int n_clients,
                                   int labels_per_client, std::uint64_t seed) {
  const int classes = ds.classes;
  if (n_clients < 1) throw std::invalid_argument("need at least one client");
  if (labels_per_client < 1 || labels_per_client > classes) {
    throw std::invalid_argument("labels per client must lie in [1, classes]");
  }
  if (static_cast<long>(n_clients) * labels_per_client < classes) {
    throw std::invalid_argument(
        "infeasible partition: n * labels_per_client < classes leaves labels unassigned");
  }

  // Seeded label order, dealt round-robin into client slots.
  std::vector<int> order(classes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "label-shuffle"));
  for (int i = classes - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }

  std::vector<std::vector<int>> holders(classes);  // label -> client ids
  const long slots = static_cast<long>(n_clients) * labels_per_client;
  for (long s = 0; s < slots; ++s) {
    const int label = order[static_cast<std::size_t>(s % classes)];
    holders[label].push_back(static_cast<int>(s / labels_per_client));
  }

  std::vector<std::vector<int>> by_label(classes);
  for (int row = 0; row < static_cast<int>(ds.size()); ++row) {
    by_label[ds.labels[row]].push_back(row);
  }

  Partition part;
  part.assignments.resize(n_clients);
  for (int label = 0; label < classes; ++label) {
    auto& who = holders[label];
    std::sort(who.begin(), who.end());
    const std::size_t m = who.size();
    const std::size_t count = by_label[label].size();
    const std::size_t base = m ? count / m : 0;
    const std::size_t extra = m ? count % m : 0;
    std::size_t cursor = 0;
    for (std::size_t h = 0; h < m; ++h) {
      const std::size_t take = base + (h < extra ? 1 : 0);
      auto& dest = part.assignments[who[h]];
      dest.insert(dest.end(), by_label[label].begin() + cursor,
                  by_label[label].begin() + cursor + take);
      cursor += take;
    }
  }

  double total = 0.0;
  for (auto& rows : part.assignments) {
    std::sort(rows.begin(), rows.end());
    total += static_cast<double>(rows.size());
  }
  part.weights.reserve(n_clients);
  for (const auto& rows : part.assignments) {
    part.weights.push_back(static_cast<double>(rows.size()) / total);
  }
  return part;
}

Dataset make_blobs(const BlobsParams& params) {
  if (params.classes < 2) throw std::invalid_argument("blobs need at least two classes");
  if (params.features < 1 || params.samples < 1) {
    throw std::invalid_argument("blobs need positive feature and sample counts");
  }
  Rng rng(derive_seed(params.seed, "blobs"));

  Eigen::MatrixXd means(params.classes, params.features);
  for (int c = 0; c < params.classes; ++c) {
    for (int f = 0; f < params.features; ++f) {
      means(c, f) = params.separation * rng.normal();
    }
  }

  Dataset ds;
  ds.classes = params.classes;
  ds.inputs.resize(params.samples, params.features);
  ds.labels.reserve(params.samples);
  for (int i = 0; i < params.samples; ++i) {
    const int label = i % params.classes;
    ds.labels.push_back(label);
    for (int f = 0; f < params.features; ++f) {
      ds.inputs(i, f) = means(label, f) + rng.normal();
    }
  }

  // One global affine map into [0, 1] keeps the cluster geometry intact.
  const double lo = ds.inputs.minCoeff();
  const double hi = ds.inputs.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  ds.inputs = (ds.inputs.array() - lo) / span;
  return ds;
}

void split_holdout(const Dataset& ds, Eigen::Index train_count, Dataset* train,
                   Dataset* eval) {
  if (train_count <= 0 || train_count > ds.size()) {
    throw std::invalid_argument("holdout split outside dataset size");
  }
  train->classes = eval->classes = ds.classes;
  train->inputs = ds.inputs.topRows(train_count);
  train->labels.assign(ds.labels.begin(), ds.labels.begin() + train_count);
  eval->inputs = ds.inputs.bottomRows(ds.size() - train_count);
  eval->labels.assign(ds.labels.begin() + train_count, ds.labels.end());
}

QuadraticProblem make_quadratic(int dim, double mu, double smoothness,
                                std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("quadratic dimension must be positive");
  if (mu <= 0.0 || smoothness < mu) {
    throw std::invalid_argument("quadratic spectrum requires 0 < mu <= smoothness");
  }
  Rng rng(derive_seed(seed, "quadratic"));

  Eigen::MatrixXd gauss(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) gauss(i, j) = rng.normal();
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ();

  Eigen::VectorXd spectrum(dim);
  for (int i = 0; i < dim; ++i) {
    const double frac = dim == 1 ? 0.0 : static_cast<double>(i) / (dim - 1);
    spectrum[i] = mu + frac * (smoothness - mu);
  }

  QuadraticProblem p;
  p.curvature = q * spectrum.asDiagonal() * q.transpose();
  // Symmetrize away the last ulps so gradients stay exactly A(x - x*).
  p.curvature = 0.5 * (p.curvature + p.curvature.transpose()).eval();
  p.optimum.resize(dim);
  for (int i = 0; i < dim; ++i) p.optimum[i] = rng.normal();
  p.optimal_value = 0.0;
  return p;
}

}  // namespace fedsim
