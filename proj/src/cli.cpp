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

#include "fedsim/cli.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fedsim {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void require_keys(const json& obj, const std::string& context,
                  std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key '" + key + "' in " + context);
    }
  }
}

const json& require(const json& obj, const char* key, const std::string& context) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw ConfigError("missing key '" + std::string(key) + "' in " + context);
  }
  return *it;
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  const auto it = obj.find(key);
  return it == obj.end() ? fallback : it->get<T>();
}

ModelSpec parse_model(const json& j) {
  require_keys(j, "model", {"kind", "features", "classes", "hidden", "dim", "mu",
                            "smoothness"});
  ModelSpec spec;
  const std::string kind = require(j, "kind", "model").get<std::string>();
  if (kind == "logistic") {
    spec.type = ModelType::kLogistic;
    spec.features = require(j, "features", "model").get<int>();
    spec.classes = require(j, "classes", "model").get<int>();
  } else if (kind == "mlp") {
    spec.type = ModelType::kMlp;
    spec.features = require(j, "features", "model").get<int>();
    spec.classes = require(j, "classes", "model").get<int>();
    spec.hidden = get_or(j, "hidden", 64);
  } else if (kind == "quadratic") {
    spec.type = ModelType::kQuadratic;
    spec.dim = require(j, "dim", "model").get<int>();
    spec.mu = get_or(j, "mu", 1.0);
    spec.smoothness = get_or(j, "smoothness", spec.mu);
  } else {
    throw ConfigError("unknown model kind '" + kind + "'");
  }
  return spec;
}

DataConfig parse_data(const json& j, const ModelSpec& model) {
  require_keys(j, "data",
               {"kind", "train_samples", "eval_samples", "separation", "train_images",
                "train_labels", "eval_images", "eval_labels", "labels_per_client",
                "optimum_spread"});
  DataConfig data;
  const std::string kind = require(j, "kind", "data").get<std::string>();
  if (kind == "blobs") {
    data.kind = DataKind::kBlobs;
    data.train_samples = require(j, "train_samples", "data").get<int>();
    data.eval_samples = get_or(j, "eval_samples", 0);
    data.separation = get_or(j, "separation", 1.0);
    data.labels_per_client = get_or(j, "labels_per_client", 0);
  } else if (kind == "idx") {
    data.kind = DataKind::kIdx;
    data.train_images = require(j, "train_images", "data").get<std::string>();
    data.train_labels = require(j, "train_labels", "data").get<std::string>();
    data.eval_images = require(j, "eval_images", "data").get<std::string>();
    data.eval_labels = require(j, "eval_labels", "data").get<std::string>();
    data.labels_per_client = get_or(j, "labels_per_client", 0);
    for (const std::string* path : {&data.train_images, &data.train_labels,
                                    &data.eval_images, &data.eval_labels}) {
      if (path->empty()) throw ConfigError("dataset path missing in data");
      if (!fs::exists(*path)) throw ConfigError("dataset path does not exist: " + *path);
    }
  } else if (kind == "quadratic") {
    data.kind = DataKind::kQuadratic;
    data.optimum_spread = get_or(j, "optimum_spread", 0.0);
  } else {
    throw ConfigError("unknown data kind '" + kind + "'");
  }

  if ((model.type == ModelType::kQuadratic) != (data.kind == DataKind::kQuadratic)) {
    throw ConfigError("quadratic models pair with quadratic data and vice versa");
  }
  return data;
}

StepsizeSchedule parse_stepsize(const json& j, int comm_every, long total_iters) {
  require_keys(j, "stepsize", {"kind", "beta", "offset", "gamma_init", "decay", "gamma"});
  const std::string kind = require(j, "kind", "stepsize").get<std::string>();
  if (kind == "inverse_proportional") {
    return StepsizeSchedule::inverse_proportional(
        require(j, "beta", "stepsize").get<double>(),
        require(j, "offset", "stepsize").get<double>(), comm_every, total_iters);
  }
  if (kind == "exponential") {
    return StepsizeSchedule::exponential(
        require(j, "gamma_init", "stepsize").get<double>(),
        require(j, "decay", "stepsize").get<double>(), comm_every, total_iters);
  }
  if (kind == "constant") {
    return StepsizeSchedule::constant(require(j, "gamma", "stepsize").get<double>(),
                                      comm_every, total_iters);
  }
  throw ConfigError("unknown stepsize kind '" + kind + "'");
}

CompressorKind parse_compressor(const json& j, const StepsizeSchedule& gammas) {
  require_keys(j, "compressor", {"kind", "lambda", "k", "lambda0", "alpha", "quantize"});
  const std::string kind = require(j, "kind", "compressor").get<std::string>();
  CompressorKind comp;
  if (kind == "identity") {
    comp = CompressorKind::identity();
  } else if (kind == "hard_threshold") {
    comp = CompressorKind::hard_threshold(require(j, "lambda", "compressor").get<double>());
  } else if (kind == "topk") {
    comp = CompressorKind::topk(require(j, "k", "compressor").get<double>());
  } else if (kind == "gamma_fedht") {
    const double lambda0 = require(j, "lambda0", "compressor").get<double>();
    const double alpha = get_or(j, "alpha", 1.0);
    comp = CompressorKind::gamma_fedht(
        ThresholdSchedule::for_stepsize(lambda0, alpha, gammas));
  } else {
    throw ConfigError("unknown compressor kind '" + kind + "'");
  }
  comp.quantize_after = get_or(j, "quantize", false);
  return comp;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

void write_params(const fs::path& path, const Eigen::VectorXd& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::uint64_t count = static_cast<std::uint64_t>(x.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(x.data()),
            static_cast<std::streamsize>(sizeof(double) * x.size()));
}

std::uint64_t dense_baseline_bytes(const std::vector<RoundRecord>& records,
                                   std::uint32_t dim) {
  std::uint64_t uploads = 0;
  for (const RoundRecord& r : records) uploads += r.per_client_nnz.size();
  return uploads * 4ull * dim;
}

CompareRow summarize_run(const std::string& method, const RunResult& result,
                         std::uint32_t dim) {
  CompareRow row;
  row.method = method;
  row.diverged = result.diverged;
  row.final_loss = std::numeric_limits<double>::quiet_NaN();
  row.final_accuracy = std::numeric_limits<double>::quiet_NaN();
  for (auto it = result.records.rbegin(); it != result.records.rend(); ++it) {
    if (!std::isnan(it->global_loss)) {
      row.final_loss = it->global_loss;
      row.final_accuracy = it->eval_accuracy;
      break;
    }
  }
  row.cumulative_bytes = result.records.empty() ? 0 : result.records.back().cumulative_bytes;
  const std::uint64_t dense = dense_baseline_bytes(result.records, dim);
  row.percent_of_dense =
      dense == 0 ? 0.0
                 : 100.0 * static_cast<double>(row.cumulative_bytes) /
                       static_cast<double>(dense);
  return row;
}

// Inverse of calibrate_lambda0: the fixed threshold whose error budget the
// given lambda0 was sized to match.
double matched_fixed_lambda(double lambda0, const StepsizeSchedule& gammas, double alpha) {
  return lambda0 / (calibrate_lambda0(1.0, gammas, alpha));
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text,
                              std::vector<std::string>* warnings) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  require_keys(j, "config",
               {"name", "seed", "clients", "participants", "comm_every", "total_iters",
                "batch_size", "grad_noise_std", "eval_every", "model", "data",
                "stepsize", "compressor"});

  ExperimentConfig cfg;
  cfg.name = get_or<std::string>(j, "name", "");
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
  cfg.n_clients = require(j, "clients", "config").get<int>();
  cfg.participants = get_or(j, "participants", cfg.n_clients);
  cfg.comm_every = get_or(j, "comm_every", 5);
  cfg.total_iters = require(j, "total_iters", "config").get<long>();
  cfg.batch_size = get_or(j, "batch_size", 0);
  cfg.grad_noise_std = get_or(j, "grad_noise_std", 0.0);
  cfg.eval_every = get_or(j, "eval_every", 1);

  if (cfg.n_clients < 1) throw ConfigError("clients must be >= 1");
  if (cfg.participants < 1) throw ConfigError("participants must be >= 1");
  if (cfg.participants > cfg.n_clients) {
    throw ConfigError("participants (" + std::to_string(cfg.participants) +
                      ") exceeds clients (" + std::to_string(cfg.n_clients) + ")");
  }
  if (cfg.comm_every < 1) throw ConfigError("comm_every must be >= 1");
  if (cfg.total_iters < 1) throw ConfigError("total_iters must be >= 1");
  if (cfg.batch_size < 0) throw ConfigError("batch_size must be >= 0");
  if (cfg.grad_noise_std < 0.0) throw ConfigError("grad_noise_std must be >= 0");
  if (cfg.eval_every < 1) throw ConfigError("eval_every must be >= 1");

  if (cfg.total_iters % cfg.comm_every != 0) {
    const long truncated = (cfg.total_iters / cfg.comm_every) * cfg.comm_every;
    if (truncated == 0) {
      throw ConfigError("total_iters is smaller than one communication round");
    }
    if (warnings) {
      warnings->push_back("total_iters " + std::to_string(cfg.total_iters) +
                          " is not a multiple of comm_every; truncated to " +
                          std::to_string(truncated));
    }
    cfg.total_iters = truncated;
  }

  cfg.model = parse_model(require(j, "model", "config"));
  cfg.data = parse_data(require(j, "data", "config"), cfg.model);
  cfg.stepsize =
      parse_stepsize(require(j, "stepsize", "config"), cfg.comm_every, cfg.total_iters);
  cfg.compressor = parse_compressor(require(j, "compressor", "config"), cfg.stepsize);

  // Partition feasibility checks run here, before any expensive work.
  if (cfg.model.type != ModelType::kQuadratic) {
    const int classes = cfg.model.classes;
    const int per_client =
        cfg.data.labels_per_client > 0 ? cfg.data.labels_per_client : classes;
    if (per_client > classes) {
      throw ConfigError("labels_per_client exceeds the number of classes");
    }
    if (static_cast<long>(cfg.n_clients) * per_client < classes) {
      throw ConfigError("infeasible partition: clients * labels_per_client < classes");
    }
    if (cfg.data.kind == DataKind::kBlobs) {
      if (cfg.data.train_samples < cfg.n_clients) {
        throw ConfigError("fewer training samples than clients");
      }
      if (cfg.data.eval_samples < 1) {
        throw ConfigError("blobs data needs eval_samples >= 1");
      }
    }
  }
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["clients"] = cfg.n_clients;
  j["participants"] = cfg.participants;
  j["comm_every"] = cfg.comm_every;
  j["total_iters"] = cfg.total_iters;
  j["batch_size"] = cfg.batch_size;
  j["grad_noise_std"] = cfg.grad_noise_std;
  j["eval_every"] = cfg.eval_every;

  json model;
  switch (cfg.model.type) {
    case ModelType::kLogistic:
      model = {{"kind", "logistic"}, {"features", cfg.model.features},
               {"classes", cfg.model.classes}};
      break;
    case ModelType::kMlp:
      model = {{"kind", "mlp"}, {"features", cfg.model.features},
               {"classes", cfg.model.classes}, {"hidden", cfg.model.hidden}};
      break;
    case ModelType::kQuadratic:
      model = {{"kind", "quadratic"}, {"dim", cfg.model.dim}, {"mu", cfg.model.mu},
               {"smoothness", cfg.model.smoothness}};
      break;
  }
  j["model"] = model;

  json data;
  switch (cfg.data.kind) {
    case DataKind::kBlobs:
      data = {{"kind", "blobs"},
              {"train_samples", cfg.data.train_samples},
              {"eval_samples", cfg.data.eval_samples},
              {"separation", cfg.data.separation},
              {"labels_per_client", cfg.data.labels_per_client}};
      break;
    case DataKind::kIdx:
      data = {{"kind", "idx"},
              {"train_images", cfg.data.train_images},
              {"train_labels", cfg.data.train_labels},
              {"eval_images", cfg.data.eval_images},
              {"eval_labels", cfg.data.eval_labels},
              {"labels_per_client", cfg.data.labels_per_client}};
      break;
    case DataKind::kQuadratic:
      data = {{"kind", "quadratic"}, {"optimum_spread", cfg.data.optimum_spread}};
      break;
  }
  j["data"] = data;

  json stepsize;
  switch (cfg.stepsize.kind) {
    case StepsizeKind::kInverseProportional:
      stepsize = {{"kind", "inverse_proportional"}, {"beta", cfg.stepsize.beta},
                  {"offset", cfg.stepsize.offset}};
      break;
    case StepsizeKind::kExponential:
      stepsize = {{"kind", "exponential"}, {"gamma_init", cfg.stepsize.gamma_init},
                  {"decay", cfg.stepsize.decay}};
      break;
    case StepsizeKind::kConstant:
      stepsize = {{"kind", "constant"}, {"gamma", cfg.stepsize.gamma_init}};
      break;
  }
  j["stepsize"] = stepsize;

  json comp;
  switch (cfg.compressor.type) {
    case CompressorType::kIdentity:
      comp = {{"kind", "identity"}};
      break;
    case CompressorType::kHardThreshold:
      comp = {{"kind", "hard_threshold"}, {"lambda", cfg.compressor.lambda}};
      break;
    case CompressorType::kTopK:
      comp = {{"kind", "topk"}, {"k", cfg.compressor.k}};
      break;
    case CompressorType::kGammaFedHT:
      comp = {{"kind", "gamma_fedht"}, {"lambda0", cfg.compressor.schedule.lambda0},
              {"alpha", cfg.compressor.schedule.alpha}};
      break;
  }
  comp["quantize"] = cfg.compressor.quantize_after;
  j["compressor"] = comp;
  return j;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string run_id(const ExperimentConfig& cfg) {
  const std::string canonical = config_to_json(cfg).dump();
  return sha256_hex(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(canonical.data()), canonical.size()));
}

RunManifest RunManifest::from_file(const std::string& config_path,
                                   const std::string& out_dir,
                                   std::optional<std::uint64_t> seed_override,
                                   std::vector<std::string>* warnings) {
  std::ifstream in(config_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + config_path);
  std::stringstream buffer;
  buffer << in.rdbuf();

  RunManifest m;
  m.config_path = config_path;
  m.config = parse_config(buffer.str(), warnings);
  if (seed_override) m.config.seed = *seed_override;
  m.out_dir = out_dir;
  m.id = run_id(m.config);
  return m;
}

int cmd_run(const RunManifest& manifest, const RunOptions& options) {
  const fs::path out(manifest.out_dir);
  if (fs::exists(out / "manifest.json") && !options.overwrite) {
    throw std::runtime_error("output directory " + manifest.out_dir +
                             " already holds a run; pass --overwrite to replace it");
  }
  fs::create_directories(out);

  FederationEngine engine(manifest.config);
  if (!options.resume_from.empty()) {
    engine.restore_state(options.resume_from, manifest.id);
  }
  const RunResult result = engine.run();

  export_records(result.records, ExportFormat::kCsv, (out / "records.csv").string());
  export_records(result.records, ExportFormat::kJsonl, (out / "records.jsonl").string());
  write_params(out / "final_params.bin", result.final_params);
  if (options.save_state) {
    engine.save_state((out / "state.bin").string(), manifest.id);
  }

  json m;
  m["run_id"] = manifest.id;
  m["config_path"] = manifest.config_path;
  m["config"] = config_to_json(manifest.config);
  m["diverged"] = result.diverged;
  if (result.diverged) m["error"] = result.error;
  write_text(out / "manifest.json", m.dump(2) + "\n");

  return result.diverged ? 2 : 0;
}

CompareSuite parse_compare_suite(const std::string& json_text,
                                 std::vector<std::string>* warnings) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("suite is not valid JSON: ") + e.what());
  }
  require_keys(j, "suite", {"experiment", "methods", "hard_threshold_lambda"});
  CompareSuite suite;
  suite.reference = parse_config(require(j, "experiment", "suite").dump(), warnings);
  if (suite.reference.compressor.type != CompressorType::kGammaFedHT &&
      suite.reference.compressor.type != CompressorType::kHardThreshold) {
    throw ConfigError("suite reference must use gamma_fedht or hard_threshold");
  }
  suite.methods = get_or(j, "methods", std::vector<std::string>{
                                           "hard_threshold", "topk_matched", "fedavg"});
  for (const std::string& m : suite.methods) {
    if (m != "hard_threshold" && m != "gamma_fedht" && m != "topk_matched" &&
        m != "fedavg") {
      throw ConfigError("unknown comparison method '" + m + "'");
    }
  }
  if (j.contains("hard_threshold_lambda")) {
    suite.hard_threshold_lambda = j["hard_threshold_lambda"].get<double>();
  }
  return suite;
}

CompareSummary run_compare(const CompareSuite& suite) {
  CompareSummary summary;
  const ExperimentConfig& ref_cfg = suite.reference;
  const std::string ref_label =
      ref_cfg.compressor.type == CompressorType::kGammaFedHT ? "gamma_fedht"
                                                             : "hard_threshold";
  const auto dim = static_cast<std::uint32_t>(ref_cfg.model.param_dim());

  const RunResult ref = run_experiment(ref_cfg);
  summary.rows.push_back(summarize_run(ref_label, ref, dim));
  summary.k_mean = equal_traffic_ratio(ref.records, dim);

  for (const std::string& method : suite.methods) {
    if (method == ref_label) continue;
    ExperimentConfig cfg = ref_cfg;
    if (method == "fedavg") {
      cfg.compressor = CompressorKind::identity();
    } else if (method == "topk_matched") {
      if (summary.k_mean <= 0.0) {
        throw std::runtime_error("reference run transmitted nothing; no top-k budget");
      }
      cfg.compressor = CompressorKind::topk(summary.k_mean);
    } else if (method == "hard_threshold") {
      const double lambda =
          suite.hard_threshold_lambda
              ? *suite.hard_threshold_lambda
              : matched_fixed_lambda(ref_cfg.compressor.schedule.lambda0, ref_cfg.stepsize,
                                     ref_cfg.compressor.schedule.alpha);
      cfg.compressor = CompressorKind::hard_threshold(lambda);
    } else if (method == "gamma_fedht") {
      if (ref_cfg.compressor.type != CompressorType::kHardThreshold) {
        throw std::runtime_error("gamma_fedht row needs a hard_threshold reference");
      }
      const double lambda0 =
          calibrate_lambda0(ref_cfg.compressor.lambda, ref_cfg.stepsize, 1.0);
      cfg.compressor = CompressorKind::gamma_fedht(
          ThresholdSchedule::for_stepsize(lambda0, 1.0, ref_cfg.stepsize));
    }
    cfg.compressor.quantize_after = ref_cfg.compressor.quantize_after;
    const std::string label =
        method == "topk_matched"
            ? "topk_mean(k=" + std::to_string(summary.k_mean) + ")"
            : method;
    summary.rows.push_back(summarize_run(label, run_experiment(cfg), dim));
  }
  return summary;
}

std::string format_compare_table(const CompareSummary& summary) {
  std::ostringstream out;
  out << "method                          final_loss   accuracy   traffic_bytes   %dense\n";
  for (const CompareRow& row : summary.rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-30s  %10.6f  %9.4f  %14llu  %7.3f%s\n",
                  row.method.c_str(), row.final_loss, row.final_accuracy,
                  static_cast<unsigned long long>(row.cumulative_bytes),
                  row.percent_of_dense, row.diverged ? "  [diverged]" : "");
    out << line;
  }
  return out.str();
}

CalibrationResult calibrate(std::int64_t dim, double topk_ratio,
                            const StepsizeSchedule& gammas, double alpha) {
  CalibrationResult r;
  r.lambda = lambda_from_topk(dim, topk_ratio, &r.warning);
  r.lambda0 = calibrate_lambda0(r.lambda, gammas, alpha);
  return r;
}

}  // namespace fedsim
