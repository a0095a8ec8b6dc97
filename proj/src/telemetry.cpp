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

#include "fedsim/telemetry.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace fedsim {
namespace {

bool num_eq(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) {
    throw std::runtime_error("cannot parse numeric field '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) {
    throw std::runtime_error("cannot parse integer field '" + s + "'");
  }
  return v;
}

constexpr char kCsvHeader[] =
    "round,iteration,gamma,lambda,global_loss,eval_accuracy,"
    "mean_compression_ratio,per_client_nnz,round_bytes,cumulative_bytes";

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(line);
  while (std::getline(ss, item, delim)) out.push_back(item);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

}  // namespace

bool records_equal(const RoundRecord& a, const RoundRecord& b) {
  return a.round == b.round && a.iteration == b.iteration && num_eq(a.gamma, b.gamma) &&
         num_eq(a.lambda, b.lambda) && num_eq(a.global_loss, b.global_loss) &&
         num_eq(a.eval_accuracy, b.eval_accuracy) &&
         num_eq(a.mean_compression_ratio, b.mean_compression_ratio) &&
         a.per_client_nnz == b.per_client_nnz && a.round_bytes == b.round_bytes &&
         a.cumulative_bytes == b.cumulative_bytes;
}

EvalResult evaluate(const Model& model, const Eigen::VectorXd& params,
                    const Dataset& eval_set) {
  if (eval_set.size() == 0) throw std::invalid_argument("evaluation set is empty");
  std::vector<int> rows(static_cast<std::size_t>(eval_set.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  const Batch all = eval_set.batch(rows);

  EvalResult r;
  r.loss = model.loss(params, all);
  if (model.spec().type == ModelType::kQuadratic) {
    r.accuracy = std::numeric_limits<double>::quiet_NaN();
    return r;
  }

  const Eigen::MatrixXd logits = model.scores(params, eval_set.inputs);
  long hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(logits.cols()); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;  // ties keep the lower index
    }
    if (best == eval_set.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(eval_set.size());
  return r;
}

double estimate_gamma_n(const Model& model, const Eigen::VectorXd& params,
                        const Dataset& ds, const Partition& part) {
  const std::size_t n = part.assignments.size();
  std::vector<Eigen::VectorXd> grads;
  grads.reserve(n);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(params.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (part.assignments[i].empty()) {
      throw std::invalid_argument("client " + std::to_string(i) + " has no data");
    }
    const Batch full = ds.batch(part.assignments[i]);
    grads.push_back(model.gradient(params, full));
    mean += part.weights[i] * grads.back();
  }
  double dispersion = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dispersion += part.weights[i] * (grads[i] - mean).squaredNorm();
  }
  return dispersion;
}

double equal_traffic_ratio(std::span<const RoundRecord> records, std::uint32_t dim) {
  if (dim == 0) throw std::invalid_argument("dimension must be positive");
  std::uint64_t coords = 0;
  std::uint64_t uploads = 0;
  for (const RoundRecord& r : records) {
    for (std::uint64_t nnz : r.per_client_nnz) coords += nnz;
    uploads += r.per_client_nnz.size();
  }
  if (uploads == 0) return 0.0;
  return static_cast<double>(coords) /
         (static_cast<double>(dim) * static_cast<double>(uploads));
}

void export_records(std::span<const RoundRecord> records, ExportFormat format,
                    const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");

  if (format == ExportFormat::kCsv) {
    out << kCsvHeader << '\n';
    for (const RoundRecord& r : records) {
      out << r.round << ',' << r.iteration << ',' << fmt_double(r.gamma) << ','
          << fmt_double(r.lambda) << ',' << fmt_double(r.global_loss) << ','
          << fmt_double(r.eval_accuracy) << ',' << fmt_double(r.mean_compression_ratio)
          << ',';
      for (std::size_t i = 0; i < r.per_client_nnz.size(); ++i) {
        if (i) out << ';';
        out << r.per_client_nnz[i];
      }
      out << ',' << r.round_bytes << ',' << r.cumulative_bytes << '\n';
    }
  } else {
    for (const RoundRecord& r : records) {
      nlohmann::json j;
      j["round"] = r.round;
      j["iteration"] = r.iteration;
      j["gamma"] = r.gamma;
      j["lambda"] = r.lambda;
      j["global_loss"] =
          std::isnan(r.global_loss) ? nlohmann::json() : nlohmann::json(r.global_loss);
      j["eval_accuracy"] = std::isnan(r.eval_accuracy) ? nlohmann::json()
                                                       : nlohmann::json(r.eval_accuracy);
      j["mean_compression_ratio"] = r.mean_compression_ratio;
      j["per_client_nnz"] = r.per_client_nnz;
      j["round_bytes"] = r.round_bytes;
      j["cumulative_bytes"] = r.cumulative_bytes;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed while writing " + path);
}

std::vector<RoundRecord> import_records(ExportFormat format, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<RoundRecord> records;
  std::string line;

  if (format == ExportFormat::kCsv) {
    if (!std::getline(in, line) || line != kCsvHeader) {
      throw std::runtime_error("unexpected CSV header in " + path);
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split(line, ',');
      if (cells.size() != 10) {
        throw std::runtime_error("malformed CSV row in " + path + ": " + line);
      }
      RoundRecord r;
      r.round = static_cast<long>(parse_u64(cells[0]));
      r.iteration = static_cast<long>(parse_u64(cells[1]));
      r.gamma = parse_double(cells[2]);
      r.lambda = parse_double(cells[3]);
      r.global_loss = parse_double(cells[4]);
      r.eval_accuracy = parse_double(cells[5]);
      r.mean_compression_ratio = parse_double(cells[6]);
      if (!cells[7].empty()) {
        for (const std::string& item : split(cells[7], ';')) {
          r.per_client_nnz.push_back(parse_u64(item));
        }
      }
      r.round_bytes = parse_u64(cells[8]);
      r.cumulative_bytes = parse_u64(cells[9]);
      records.push_back(std::move(r));
    }
  } else {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line);
      RoundRecord r;
      r.round = j.at("round").get<long>();
      r.iteration = j.at("iteration").get<long>();
      r.gamma = j.at("gamma").get<double>();
      r.lambda = j.at("lambda").get<double>();
      r.global_loss = j.at("global_loss").is_null()
                          ? std::numeric_limits<double>::quiet_NaN()
                          : j.at("global_loss").get<double>();
      r.eval_accuracy = j.at("eval_accuracy").is_null()
                            ? std::numeric_limits<double>::quiet_NaN()
                            : j.at("eval_accuracy").get<double>();
      r.mean_compression_ratio = j.at("mean_compression_ratio").get<double>();
      r.per_client_nnz = j.at("per_client_nnz").get<std::vector<std::uint64_t>>();
      r.round_bytes = j.at("round_bytes").get<std::uint64_t>();
      r.cumulative_bytes = j.at("cumulative_bytes").get<std::uint64_t>();
      records.push_back(std::move(r));
    }
  }
  return records;
}

}  // namespace fedsim
