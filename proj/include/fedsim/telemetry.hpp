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

#ifndef FEDSIM_TELEMETRY_HPP_
#define FEDSIM_TELEMETRY_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/models.hpp"

namespace fedsim {

/// One aggregation round of telemetry. Loss/accuracy are NaN on rounds where
/// evaluation was skipped (eval_every > 1); accuracy is NaN for objectives
/// without a classification metric.
struct RoundRecord {
  long round = 0;
  long iteration = 0;  // first local iteration of the round
  double gamma = 0.0;
  double lambda = 0.0;  // 0 for non-threshold compressors
  double global_loss = 0.0;
  double eval_accuracy = 0.0;
  double mean_compression_ratio = 0.0;
  std::vector<std::uint64_t> per_client_nnz;  // ascending client id over S_t
  std::uint64_t round_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
};

/// Treats NaN fields as equal so exported records compare round-trip clean.
bool records_equal(const RoundRecord& a, const RoundRecord& b);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;  // NaN when not applicable
};

/// Mean loss and top-1 accuracy on a held-out set. Argmax ties resolve to the
/// lowest class index.
EvalResult evaluate(const Model& model, const Eigen::VectorXd& params,
                    const Dataset& eval_set);

/// Weighted dispersion of full-batch client gradients around the global
/// gradient: sum_i p_i * ||grad_i - grad||^2 with grad = sum_i p_i grad_i.
/// A deterministic diagnostic of how non-IID the partition is.
double estimate_gamma_n(const Model& model, const Eigen::VectorXd& params,
                        const Dataset& ds, const Partition& part);

/// Traffic-weighted mean compression ratio of a finished run: transmitted
/// coordinates over (dim * client uploads). Used to budget a matched top-k run.
double equal_traffic_ratio(std::span<const RoundRecord> records, std::uint32_t dim);

enum class ExportFormat { kCsv, kJsonl };

/// One row/object per record, numeric fields printed with shortest
/// round-trip precision; re-import is lossless.
void export_records(std::span<const RoundRecord> records, ExportFormat format,
                    const std::string& path);
std::vector<RoundRecord> import_records(ExportFormat format, const std::string& path);

}  // namespace fedsim

#endif  // FEDSIM_TELEMETRY_HPP_
