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

#ifndef FEDSIM_CLI_HPP_
#define FEDSIM_CLI_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/federation.hpp"

namespace fedsim {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses and validates an experiment config document. Unknown keys, an
/// infeasible partition, participants > clients and similar mistakes raise
/// ConfigError with the offending key named. A total_iters that is not a
/// multiple of comm_every is truncated with a warning.
ExperimentConfig parse_config(const std::string& json_text,
                              std::vector<std::string>* warnings = nullptr);

/// Canonical JSON for a resolved config; parse_config of the dump yields an
/// equal config.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

std::string sha256_hex(std::span<const std::uint8_t> data);

/// Stable run identifier: SHA-256 of the canonical config document (the seed
/// is part of the document).
std::string run_id(const ExperimentConfig& cfg);

struct RunManifest {
  std::string config_path;
  ExperimentConfig config;
  std::string out_dir;
  std::string id;  // run_id(config)

  static RunManifest from_file(const std::string& config_path, const std::string& out_dir,
                               std::optional<std::uint64_t> seed_override = {},
                               std::vector<std::string>* warnings = nullptr);
};

struct RunOptions {
  bool overwrite = false;
  bool save_state = false;
  std::string resume_from;  // checkpoint path, empty = fresh run
};

/// Executes the run and writes records.csv, records.jsonl, final_params.bin
/// and manifest.json into the output directory (plus state.bin with
/// save_state). Returns 0 on completion, 2 on divergence (partial records are
/// still flushed). Refuses an existing output directory unless overwrite.
int cmd_run(const RunManifest& manifest, const RunOptions& options = {});

struct CompareSuite {
  ExperimentConfig reference;          // gamma_fedht or hard_threshold run
  std::vector<std::string> methods;    // of: hard_threshold, gamma_fedht, topk_matched, fedavg
  std::optional<double> hard_threshold_lambda;  // derived via the calibration identity if absent
};

CompareSuite parse_compare_suite(const std::string& json_text,
                                 std::vector<std::string>* warnings = nullptr);

struct CompareRow {
  std::string method;
  double final_loss = 0.0;
  double final_accuracy = 0.0;  // NaN when not applicable
  std::uint64_t cumulative_bytes = 0;
  double percent_of_dense = 0.0;
  bool diverged = false;
};

struct CompareSummary {
  double k_mean = 0.0;  // traffic-matched top-k budget from the reference run
  std::vector<CompareRow> rows;
};

/// Runs the reference, budgets a traffic-matched top-k from its records, runs
/// the remaining methods and collects a summary table.
CompareSummary run_compare(const CompareSuite& suite);

/// Formats the summary as an aligned text table.
std::string format_compare_table(const CompareSummary& summary);

struct CalibrationResult {
  double lambda = 0.0;    // fixed threshold matched to the top-k budget
  double lambda0 = 0.0;   // adaptive initial scale with the same error budget
  std::string warning;    // set when d*k < 1
};

CalibrationResult calibrate(std::int64_t dim, double topk_ratio,
                            const StepsizeSchedule& gammas, double alpha = 1.0);

}  // namespace fedsim

#endif  // FEDSIM_CLI_HPP_
