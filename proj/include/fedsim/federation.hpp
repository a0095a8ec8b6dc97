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

#ifndef FEDSIM_FEDERATION_HPP_
#define FEDSIM_FEDERATION_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/compressors.hpp"
#include "fedsim/data.hpp"
#include "fedsim/error_feedback.hpp"
#include "fedsim/models.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/schedules.hpp"
#include "fedsim/telemetry.hpp"

namespace fedsim {

enum class DataKind { kBlobs, kQuadratic, kIdx };

struct DataConfig {
  DataKind kind = DataKind::kBlobs;
  // blobs (features/classes come from the model spec)
  int train_samples = 0;
  int eval_samples = 0;
  double separation = 1.0;
  // idx file pairs
  std::string train_images, train_labels, eval_images, eval_labels;
  // label-skew partition; 0 means every client sees every label
  int labels_per_client = 0;
  // quadratic: per-client optimum shifts (0 = identical client objectives)
  double optimum_spread = 0.0;

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  int n_clients = 1;
  int participants = 1;  // S
  int comm_every = 5;    // E
  long total_iters = 0;  // T, a multiple of E
  int batch_size = 0;    // 0 = full local batch
  double grad_noise_std = 0.0;
  int eval_every = 1;
  ModelSpec model;
  DataConfig data;
  CompressorKind compressor;
  StepsizeSchedule stepsize;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Everything a run needs besides the engine state: the global objective,
/// per-client objectives (shifted quadratics when optimum_spread > 0),
/// training/eval data and the client partition.
struct Task {
  Model model;                       // global objective, used for evaluation
  std::vector<Model> client_models;  // quadratic only; empty otherwise
  Dataset train;
  Dataset eval;
  Partition partition;
};

Task build_task(const ExperimentConfig& cfg);

/// Draws `count` distinct sample rows per call, reshuffling at epoch
/// boundaries (sampling without replacement within an epoch).
class EpochSampler {
 public:
  EpochSampler(std::vector<int> rows, std::uint64_t seed);

  std::vector<int> draw(int count);

  const std::vector<int>& order() const { return order_; }
  std::size_t cursor() const { return cursor_; }
  const Rng::State& rng_state() const { return rng_.state(); }
  void restore(std::vector<int> order, std::size_t cursor, const Rng::State& s);

 private:
  void reshuffle();
  std::vector<int> order_;
  std::size_t cursor_;
  Rng rng_;
};

struct ClientState {
  std::vector<int> rows;
  double weight = 0.0;
  ErrorBuffer error;
  EpochSampler sampler;
  Rng noise_rng;
};

/// Uniform random S-subset of {0..n-1} without replacement, ascending.
std::vector<int> sample_clients(int n_clients, int participants, Rng& rng);

/// x + (n/|S|) * sum_{i in S} p_i * decompress(message_i), reduced in
/// ascending client id. messages is keyed by client id; weights has one entry
/// per client.
Eigen::VectorXd aggregate(const Eigen::VectorXd& x_global,
                          const std::vector<SparseUpdate>& messages,
                          std::span<const double> weights,
                          std::span<const int> selected, int n_clients);

struct RunResult {
  Eigen::VectorXd final_params;
  std::vector<RoundRecord> records;
  bool diverged = false;
  std::string error;
};

using RoundObserver = std::function<void(long round, const Eigen::VectorXd& params)>;

/// Synchronous FedAVG with compressed, error-fed-back uploads. Rounds are a
/// strict barrier; clients execute serially but hold disjoint state, and
/// aggregation always reduces in ascending client id, so any execution order
/// yields identical results. Fully deterministic given the config seed.
class FederationEngine {
 public:
  explicit FederationEngine(const ExperimentConfig& cfg);

  /// Runs the remaining rounds; stops early on divergence.
  RunResult run(const RoundObserver& observer = {});

  /// Executes one round. execution_order, when given, must be a permutation
  /// of the sampled set and only affects the order client work is done in.
  void step_round(std::span<const int> execution_order = {});

  long round() const { return round_; }
  long rounds_total() const { return rounds_total_; }
  const Eigen::VectorXd& params() const { return params_; }
  const std::vector<RoundRecord>& records() const { return records_; }
  const Task& task() const { return task_; }
  const ClientState& client(int i) const { return clients_[static_cast<std::size_t>(i)]; }
  bool diverged() const { return diverged_; }
  const std::string& error() const { return error_; }

  /// Binary snapshot (round counter, params, error buffers, generator and
  /// sampler states) tagged with an opaque config hash; restore refuses a
  /// mismatched tag.
  void save_state(const std::string& path, const std::string& config_hash) const;
  void restore_state(const std::string& path, const std::string& config_hash);

 private:
  Eigen::VectorXd local_gradient(ClientState& client, const Model& objective,
                                 const Eigen::VectorXd& at);
  void evaluate_round(RoundRecord& rec);

  ExperimentConfig cfg_;
  Task task_;
  Eigen::VectorXd params_;
  Rng server_rng_;
  std::vector<ClientState> clients_;
  std::vector<RoundRecord> records_;
  long round_ = 0;
  long rounds_total_ = 0;
  std::uint64_t cumulative_bytes_ = 0;
  double initial_loss_ = 0.0;
  bool diverged_ = false;
  std::string error_;
};

/// Convenience wrapper: build the engine and run to completion.
RunResult run_experiment(const ExperimentConfig& cfg, const RoundObserver& observer = {});

}  // namespace fedsim

#endif  // FEDSIM_FEDERATION_HPP_
