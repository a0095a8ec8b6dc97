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

#include "fedsim/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fedsim {
namespace {

constexpr double kDivergenceFactor = 1e6;
constexpr char kStateMagic[4] = {'F', 'S', 'C', 'K'};
constexpr std::uint32_t kStateVersion = 1;

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
  write_u64(out, count);
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& in) {
  const std::uint64_t count = read_u64(in);
  std::vector<double> v(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  return v;
}

void write_rng(std::ofstream& out, const Rng::State& s) {
  for (std::uint64_t w : s) write_u64(out, w);
}

Rng::State read_rng(std::ifstream& in) {
  Rng::State s;
  for (auto& w : s) w = read_u64(in);
  return s;
}

}  // namespace

Task build_task(const ExperimentConfig& cfg) {
  Task task{Model::logistic(2, 2), {}, {}, {}, {}};

  if (cfg.model.type == ModelType::kQuadratic) {
    if (cfg.data.kind != DataKind::kQuadratic) {
      throw std::invalid_argument("quadratic models pair with quadratic data");
    }
    const QuadraticProblem base =
        make_quadratic(cfg.model.dim, cfg.model.mu, cfg.model.smoothness, cfg.seed);

    // Per-client optima; equal training weights. The weighted objective is
    // again a quadratic around the mean optimum, offset by the dispersion.
    task.client_models.reserve(cfg.n_clients);
    Eigen::VectorXd mean_opt = Eigen::VectorXd::Zero(cfg.model.dim);
    std::vector<Eigen::VectorXd> optima;
    optima.reserve(cfg.n_clients);
    for (int i = 0; i < cfg.n_clients; ++i) {
      Eigen::VectorXd shifted = base.optimum;
      if (cfg.data.optimum_spread > 0.0) {
        Rng rng(derive_seed(cfg.seed, "quad-client", static_cast<std::uint64_t>(i)));
        for (int k = 0; k < cfg.model.dim; ++k) {
          shifted[k] += cfg.data.optimum_spread * rng.normal();
        }
      }
      optima.push_back(shifted);
      mean_opt += shifted;
    }
    mean_opt /= static_cast<double>(cfg.n_clients);

    double dispersion = 0.0;
    for (const auto& opt : optima) {
      const Eigen::VectorXd r = opt - mean_opt;
      dispersion += 0.5 * r.dot(base.curvature * r);
    }
    dispersion /= static_cast<double>(cfg.n_clients);

    for (int i = 0; i < cfg.n_clients; ++i) {
      task.client_models.push_back(
          Model::quadratic({base.curvature, optima[static_cast<std::size_t>(i)], 0.0}));
    }
    task.model = Model::quadratic({base.curvature, mean_opt, dispersion});

    task.partition.assignments.resize(cfg.n_clients);
    task.partition.weights.assign(cfg.n_clients, 1.0 / cfg.n_clients);
    return task;
  }

  // Data-driven objectives.
  switch (cfg.model.type) {
    case ModelType::kLogistic:
      task.model = Model::logistic(cfg.model.features, cfg.model.classes);
      break;
    case ModelType::kMlp:
      task.model = Model::mlp(cfg.model.features, cfg.model.hidden, cfg.model.classes);
      break;
    default:
      throw std::logic_error("unreachable model type");
  }

  if (cfg.data.kind == DataKind::kBlobs) {
    BlobsParams bp;
    bp.features = cfg.model.features;
    bp.classes = cfg.model.classes;
    bp.samples = cfg.data.train_samples + cfg.data.eval_samples;
    bp.separation = cfg.data.separation;
    bp.seed = derive_seed(cfg.seed, "dataset");
    const Dataset all = make_blobs(bp);
    split_holdout(all, cfg.data.train_samples, &task.train, &task.eval);
  } else if (cfg.data.kind == DataKind::kIdx) {
    task.train = load_idx_dataset(cfg.data.train_images, cfg.data.train_labels,
                                  cfg.model.classes);
    task.eval = load_idx_dataset(cfg.data.eval_images, cfg.data.eval_labels,
                                 cfg.model.classes);
    if (task.train.features() != cfg.model.features) {
      throw std::invalid_argument("IDX feature count does not match the model");
    }
  } else {
    throw std::invalid_argument("data-driven models need blobs or idx data");
  }

  const int labels_per_client =
      cfg.data.labels_per_client > 0 ? cfg.data.labels_per_client : task.train.classes;
  task.partition = partition_quantity_label(task.train, cfg.n_clients, labels_per_client,
                                            derive_seed(cfg.seed, "partition"));
  for (std::size_t i = 0; i < task.partition.assignments.size(); ++i) {
    if (task.partition.assignments[i].empty()) {
      throw std::invalid_argument("client " + std::to_string(i) +
                                  " received an empty partition");
    }
  }
  return task;
}

EpochSampler::EpochSampler(std::vector<int> rows, std::uint64_t seed)
    : order_(std::move(rows)), cursor_(order_.size()), rng_(seed) {}

void EpochSampler::reshuffle() {
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng_.below(i));
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

std::vector<int> EpochSampler::draw(int count) {
  if (order_.empty()) throw std::logic_error("sampler over empty partition");
  const std::size_t want =
      std::min<std::size_t>(order_.size(), static_cast<std::size_t>(std::max(count, 1)));
  if (cursor_ + want > order_.size()) reshuffle();
  std::vector<int> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                         order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + want));
  cursor_ += want;
  return batch;
}

void EpochSampler::restore(std::vector<int> order, std::size_t cursor,
                           const Rng::State& s) {
  order_ = std::move(order);
  cursor_ = cursor;
  rng_.set_state(s);
}

std::vector<int> sample_clients(int n_clients, int participants, Rng& rng) {
  if (participants < 1 || participants > n_clients) {
    throw std::invalid_argument("participants must lie in [1, n_clients]");
  }
  std::vector<int> ids(static_cast<std::size_t>(n_clients));
  std::iota(ids.begin(), ids.end(), 0);
  for (int j = 0; j < participants; ++j) {
    const auto pick =
        j + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_clients - j)));
    std::swap(ids[static_cast<std::size_t>(j)], ids[static_cast<std::size_t>(pick)]);
  }
  ids.resize(static_cast<std::size_t>(participants));
  std::sort(ids.begin(), ids.end());
  return ids;
}

Eigen::VectorXd aggregate(const Eigen::VectorXd& x_global,
                          const std::vector<SparseUpdate>& messages,
                          std::span<const double> weights,
                          std::span<const int> selected, int n_clients) {
  Eigen::VectorXd accum = Eigen::VectorXd::Zero(x_global.size());
  for (int id : selected) {
    const SparseUpdate& msg = messages[static_cast<std::size_t>(id)];
    if (msg.dim != static_cast<std::uint32_t>(x_global.size())) {
      throw std::invalid_argument("message dimension does not match the global model");
    }
    const std::vector<double> dense = decompress(msg);
    accum += weights[static_cast<std::size_t>(id)] *
             Eigen::Map<const Eigen::VectorXd>(dense.data(),
                                               static_cast<Eigen::Index>(dense.size()));
  }
  return x_global + (static_cast<double>(n_clients) /
                     static_cast<double>(selected.size())) *
                        accum;
}

FederationEngine::FederationEngine(const ExperimentConfig& cfg)
    : cfg_(cfg),
      task_(build_task(cfg)),
      server_rng_(derive_seed(cfg.seed, "sampling")) {
  if (cfg_.participants < 1 || cfg_.participants > cfg_.n_clients) {
    throw std::invalid_argument("participants must lie in [1, n_clients]");
  }
  if (cfg_.total_iters <= 0 || cfg_.total_iters % cfg_.comm_every != 0) {
    throw std::invalid_argument("total iterations must be a positive multiple of E");
  }
  cfg_.stepsize.validate();
  if (cfg_.stepsize.total_iters != cfg_.total_iters ||
      cfg_.stepsize.comm_every != cfg_.comm_every) {
    throw std::invalid_argument("stepsize schedule horizon disagrees with the experiment");
  }

  params_ = initial_params(cfg_.model, cfg_.seed);
  rounds_total_ = cfg_.total_iters / cfg_.comm_every;

  const std::size_t dim = static_cast<std::size_t>(params_.size());
  clients_.reserve(static_cast<std::size_t>(cfg_.n_clients));
  for (int i = 0; i < cfg_.n_clients; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    clients_.push_back(ClientState{
        task_.partition.assignments[idx], task_.partition.weights[idx],
        ErrorBuffer(dim),
        EpochSampler(task_.partition.assignments[idx],
                     derive_seed(cfg_.seed, "batch", static_cast<std::uint64_t>(i))),
        Rng(derive_seed(cfg_.seed, "noise", static_cast<std::uint64_t>(i)))});
  }

  if (cfg_.model.type == ModelType::kQuadratic) {
    initial_loss_ = task_.model.quad().loss(params_);
  } else {
    initial_loss_ = evaluate(task_.model, params_, task_.eval).loss;
  }
}

Eigen::VectorXd FederationEngine::local_gradient(ClientState& client,
                                                 const Model& objective,
                                                 const Eigen::VectorXd& at) {
  Eigen::VectorXd grad;
  if (cfg_.model.type == ModelType::kQuadratic) {
    grad = objective.gradient(at, Batch{});
  } else {
    const int batch_size =
        cfg_.batch_size > 0 ? cfg_.batch_size : static_cast<int>(client.rows.size());
    const std::vector<int> rows = client.sampler.draw(batch_size);
    grad = objective.gradient(at, task_.train.batch(rows));
  }
  if (cfg_.grad_noise_std > 0.0) {
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
      grad[k] += cfg_.grad_noise_std * client.noise_rng.normal();
    }
  }
  return grad;
}

void FederationEngine::evaluate_round(RoundRecord& rec) {
  if (cfg_.model.type == ModelType::kQuadratic) {
    rec.global_loss = task_.model.quad().loss(params_);
    rec.eval_accuracy = std::numeric_limits<double>::quiet_NaN();
  } else {
    const EvalResult ev = evaluate(task_.model, params_, task_.eval);
    rec.global_loss = ev.loss;
    rec.eval_accuracy = ev.accuracy;
  }
  if (!std::isfinite(rec.global_loss) ||
      rec.global_loss > kDivergenceFactor * std::max(1.0, std::fabs(initial_loss_))) {
    diverged_ = true;
    error_ = "global loss diverged at round " + std::to_string(rec.round) + " (loss " +
             std::to_string(rec.global_loss) + ")";
  }
}

void FederationEngine::step_round(std::span<const int> execution_order) {
  if (diverged_ || round_ >= rounds_total_) return;

  const long t0 = round_ * cfg_.comm_every;
  const std::vector<int> selected =
      sample_clients(cfg_.n_clients, cfg_.participants, server_rng_);

  double lambda_round = 0.0;
  if (cfg_.compressor.type == CompressorType::kGammaFedHT) {
    lambda_round =
        cfg_.compressor.schedule.threshold(cfg_.stepsize.at(t0 + cfg_.comm_every));
  } else if (cfg_.compressor.type == CompressorType::kHardThreshold) {
    lambda_round = cfg_.compressor.lambda;
  }

  std::vector<int> order(selected.begin(), selected.end());
  if (!execution_order.empty()) {
    order.assign(execution_order.begin(), execution_order.end());
    std::vector<int> check(order);
    std::sort(check.begin(), check.end());
    if (check != selected) {
      throw std::invalid_argument("execution order must permute the sampled set");
    }
  }

  // Worker side: E local steps from the broadcast model, then the
  // error-compensated upload.
  std::vector<SparseUpdate> messages(static_cast<std::size_t>(cfg_.n_clients));
  for (int id : order) {
    ClientState& client = clients_[static_cast<std::size_t>(id)];
    const Model& objective = task_.client_models.empty()
                                 ? task_.model
                                 : task_.client_models[static_cast<std::size_t>(id)];
    Eigen::VectorXd local = params_;
    for (int j = 0; j < cfg_.comm_every; ++j) {
      const Eigen::VectorXd grad = local_gradient(client, objective, local);
      local = local_sgd_step(local, grad, cfg_.stepsize.at(t0 + j));
    }
    if (!local.allFinite()) {
      diverged_ = true;
      error_ = "client " + std::to_string(id) + " produced a non-finite update at round " +
               std::to_string(round_);
      return;
    }
    const Eigen::VectorXd delta = local - params_;
    messages[static_cast<std::size_t>(id)] = compress_with_ef(
        client.error, std::span<const double>(delta.data(), static_cast<std::size_t>(delta.size())),
        cfg_.compressor, lambda_round);
  }

  // Server side.
  params_ = aggregate(params_, messages, task_.partition.weights, selected,
                      cfg_.n_clients);
  if (!params_.allFinite()) {
    diverged_ = true;
    error_ = "global parameters non-finite after round " + std::to_string(round_);
    return;
  }

  RoundRecord rec;
  rec.round = round_;
  rec.iteration = t0;
  rec.gamma = cfg_.stepsize.at(t0);
  rec.lambda = lambda_round;
  double ratio_sum = 0.0;
  std::uint64_t bytes = 0;
  const auto dim = static_cast<std::uint32_t>(params_.size());
  for (int id : selected) {
    const SparseUpdate& msg = messages[static_cast<std::size_t>(id)];
    rec.per_client_nnz.push_back(msg.nnz());
    ratio_sum += compression_ratio(msg);
    // Uncompressed uploads are charged at the dense baseline of 4 bytes per
    // coordinate rather than the sparse wire format.
    bytes += cfg_.compressor.type == CompressorType::kIdentity
                 ? 4ull * dim
                 : encoded_size_bytes(msg);
  }
  rec.mean_compression_ratio = ratio_sum / static_cast<double>(selected.size());
  rec.round_bytes = bytes;
  cumulative_bytes_ += bytes;
  rec.cumulative_bytes = cumulative_bytes_;

  const bool eval_now =
      cfg_.eval_every > 0 &&
      (round_ % cfg_.eval_every == 0 || round_ == rounds_total_ - 1);
  if (eval_now) {
    evaluate_round(rec);
  } else {
    rec.global_loss = std::numeric_limits<double>::quiet_NaN();
    rec.eval_accuracy = std::numeric_limits<double>::quiet_NaN();
  }

  records_.push_back(std::move(rec));
  ++round_;
}

RunResult FederationEngine::run(const RoundObserver& observer) {
  while (!diverged_ && round_ < rounds_total_) {
    step_round();
    if (observer && !records_.empty()) observer(round_ - 1, params_);
  }
  RunResult result;
  result.final_params = params_;
  result.records = records_;
  result.diverged = diverged_;
  result.error = error_;
  return result;
}

void FederationEngine::save_state(const std::string& path,
                                  const std::string& config_hash) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kStateMagic, sizeof(kStateMagic));
  const std::uint32_t version = kStateVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  write_u64(out, config_hash.size());
  out.write(config_hash.data(), static_cast<std::streamsize>(config_hash.size()));
  write_u64(out, static_cast<std::uint64_t>(round_));
  write_u64(out, cumulative_bytes_);
  out.write(reinterpret_cast<const char*>(&initial_loss_), sizeof(initial_loss_));
  write_doubles(out, params_.data(), static_cast<std::size_t>(params_.size()));
  write_rng(out, server_rng_.state());
  write_u64(out, clients_.size());
  for (const ClientState& c : clients_) {
    write_doubles(out, c.error.e.data(), c.error.e.size());
    write_u64(out, c.sampler.order().size());
    for (int row : c.sampler.order()) {
      write_u64(out, static_cast<std::uint64_t>(static_cast<std::uint32_t>(row)));
    }
    write_u64(out, c.sampler.cursor());
    write_rng(out, c.sampler.rng_state());
    write_rng(out, c.noise_rng.state());
  }
  if (!out) throw std::runtime_error("failed while writing " + path);
}

void FederationEngine::restore_state(const std::string& path,
                                     const std::string& config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kStateMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path + " is not a fedsim checkpoint");
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kStateVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  std::string stored_hash(read_u64(in), '\0');
  in.read(stored_hash.data(), static_cast<std::streamsize>(stored_hash.size()));
  if (stored_hash != config_hash) {
    throw std::runtime_error("checkpoint was written by a different configuration");
  }
  round_ = static_cast<long>(read_u64(in));
  cumulative_bytes_ = read_u64(in);
  in.read(reinterpret_cast<char*>(&initial_loss_), sizeof(initial_loss_));
  const std::vector<double> x = read_doubles(in);
  if (x.size() != static_cast<std::size_t>(params_.size())) {
    throw std::runtime_error("checkpoint parameter dimension mismatch");
  }
  params_ = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  server_rng_.set_state(read_rng(in));
  if (read_u64(in) != clients_.size()) {
    throw std::runtime_error("checkpoint client count mismatch");
  }
  for (ClientState& c : clients_) {
    c.error.e = read_doubles(in);
    std::vector<int> order(read_u64(in));
    for (auto& row : order) row = static_cast<int>(read_u64(in));
    const std::size_t cursor = read_u64(in);
    const Rng::State sampler_state = read_rng(in);
    c.sampler.restore(std::move(order), cursor, sampler_state);
    c.noise_rng.set_state(read_rng(in));
  }
  if (!in) throw std::runtime_error("truncated checkpoint " + path);
  records_.clear();
  diverged_ = false;
  error_.clear();
}

RunResult run_experiment(const ExperimentConfig& cfg, const RoundObserver& observer) {
  FederationEngine engine(cfg);
  return engine.run(observer);
}

}  // namespace fedsim
