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

#ifndef FEDSIM_DATA_HPP_
#define FEDSIM_DATA_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/models.hpp"

namespace fedsim {

struct Dataset {
  Eigen::MatrixXd inputs;   // samples x features, values in [0, 1]
  std::vector<int> labels;  // class indices
  int classes = 0;

  Eigen::Index size() const { return inputs.rows(); }
  int features() const { return static_cast<int>(inputs.cols()); }

  /// Materializes the given rows as a batch.
  Batch batch(std::span<const int> rows) const;
};

struct Partition {
  std::vector<std::vector<int>> assignments;  // per-client sample rows
  std::vector<double> weights;                // p_i = |D_i| / sum |D_j|
};

class IdxParseError : public std::runtime_error {
 public:
  IdxParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Decoded IDX tensor: unsigned-byte payload with big-endian dimension sizes.
struct IdxTensor {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> data;
};

/// Parses an IDX buffer (magic 0x00000801 for label vectors, 0x00000803 for
/// image stacks). Throws IdxParseError naming the offending offset.
IdxTensor parse_idx(std::span<const std::uint8_t> bytes);

/// Reads a file, transparently inflating gzip content (paths may point at
/// .gz copies of the IDX files).
std::vector<std::uint8_t> read_file_maybe_gzip(const std::string& path);

/// Loads an images/labels IDX pair into a dataset; pixel bytes are scaled by
/// 1/255 into [0, 1]. class_count defaults to max(label)+1 when zero.
Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int class_count = 0);

/// Quantity-based label imbalance: each client holds samples of exactly
/// labels_per_client distinct labels. Labels are dealt round-robin over a
/// seeded shuffle so every label ends up with floor or ceil of
/// n*C/classes holders, and each label's samples split evenly among its
/// holders with the remainder going to the lowest client ids.
Partition partition_quantity_label(const Dataset& ds, int n_clients,
                                   int labels_per_client, std::uint64_t seed);

struct BlobsParams {
  int features = 2;
  int classes = 2;
  int samples = 100;
  double separation = 1.0;  // scale of the Gaussian class-mean spread
  std::uint64_t seed = 0;
};

/// Gaussian class-conditional clusters, globally min-max rescaled into [0,1].
/// separation 0 collapses all class means, leaving the classes
/// indistinguishable. Balanced labels (sample i gets label i mod classes).
Dataset make_blobs(const BlobsParams& params);

/// Leading `train_count` rows as the training set, the rest held out.
void split_holdout(const Dataset& ds, Eigen::Index train_count, Dataset* train,
                   Dataset* eval);

/// Random SPD quadratic with spectrum evenly spread over [mu, smoothness] and
/// a Gaussian optimum; optimal value zero.
QuadraticProblem make_quadratic(int dim, double mu, double smoothness,
                                std::uint64_t seed);

}  // namespace fedsim

#endif  // FEDSIM_DATA_HPP_
