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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "fedsim/cli.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic FedAVG simulator with sparsified, error-fed-back uploads"};
  app.require_subcommand(1);

  // ------------------------------------------------------------------ run
  std::string run_config, run_out, resume_from;
  std::optional<std::uint64_t> seed_override;
  bool overwrite = false, save_state = false;
  CLI::App* run = app.add_subcommand("run", "Execute one experiment");
  run->add_option("--config", run_config, "Experiment config (JSON)")->required();
  run->add_option("--out", run_out, "Output directory")->required();
  run->add_option("--seed", seed_override, "Override the config seed");
  run->add_flag("--overwrite", overwrite, "Replace an existing run directory");
  run->add_flag("--save-state", save_state, "Write a resumable state.bin");
  run->add_option("--resume", resume_from, "Resume from a state.bin checkpoint");

  // -------------------------------------------------------------- compare
  std::string cmp_config, cmp_out;
  bool cmp_overwrite = false;
  CLI::App* compare = app.add_subcommand(
      "compare", "Run a method suite at matched communication traffic");
  compare->add_option("--config", cmp_config, "Suite config (JSON)")->required();
  compare->add_option("--out", cmp_out, "Output directory")->required();
  compare->add_option("--seed", seed_override, "Override the suite seed");
  compare->add_flag("--overwrite", cmp_overwrite, "Replace existing output");

  // ------------------------------------------------------------ calibrate
  std::int64_t cal_dim = 0;
  double cal_k = 0.0, cal_alpha = 1.0;
  double cal_beta = 100.0, cal_offset = 1000.0, cal_gamma0 = 0.1, cal_decay = 0.999;
  double cal_gamma = 0.1;
  long cal_iters = 0;
  int cal_comm = 5;
  std::string cal_kind = "inverse_proportional";
  CLI::App* cal = app.add_subcommand(
      "calibrate", "Derive the fixed threshold and adaptive initial scale for a top-k budget");
  cal->add_option("--dim", cal_dim, "Model parameter count")->required();
  cal->add_option("--topk", cal_k, "Top-k ratio in (0, 1]")->required();
  cal->add_option("--iters", cal_iters, "Training horizon T")->required();
  cal->add_option("--comm-every", cal_comm, "Local iterations per round (E)");
  cal->add_option("--alpha", cal_alpha, "Threshold shape exponent");
  cal->add_option("--schedule", cal_kind,
                  "inverse_proportional | exponential | constant");
  cal->add_option("--beta", cal_beta, "Inverse-proportional numerator");
  cal->add_option("--offset", cal_offset, "Inverse-proportional offset");
  cal->add_option("--gamma0", cal_gamma0, "Exponential base stepsize");
  cal->add_option("--decay", cal_decay, "Exponential per-round decay");
  cal->add_option("--gamma", cal_gamma, "Constant stepsize");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      std::vector<std::string> warnings;
      const fedsim::RunManifest manifest =
          fedsim::RunManifest::from_file(run_config, run_out, seed_override, &warnings);
      print_warnings(warnings);
      fedsim::RunOptions options;
      options.overwrite = overwrite;
      options.save_state = save_state;
      options.resume_from = resume_from;
      const int rc = fedsim::cmd_run(manifest, options);
      if (rc != 0) std::cerr << "run diverged; partial records written\n";
      std::cout << "run " << manifest.id << " -> " << run_out << "\n";
      return rc;
    }

    if (*compare) {
      std::vector<std::string> warnings;
      fedsim::CompareSuite suite = fedsim::parse_compare_suite(slurp(cmp_config), &warnings);
      if (seed_override) suite.reference.seed = *seed_override;
      print_warnings(warnings);

      namespace fs = std::filesystem;
      if (fs::exists(fs::path(cmp_out) / "summary.csv") && !cmp_overwrite) {
        throw std::runtime_error("output directory " + cmp_out +
                                 " already holds a summary; pass --overwrite");
      }
      fs::create_directories(cmp_out);

      const fedsim::CompareSummary summary = fedsim::run_compare(suite);
      std::cout << fedsim::format_compare_table(summary);

      std::ofstream csv(fs::path(cmp_out) / "summary.csv", std::ios::binary);
      csv << "method,final_loss,final_accuracy,cumulative_bytes,percent_of_dense\n";
      for (const auto& row : summary.rows) {
        csv << row.method << ',' << row.final_loss << ',' << row.final_accuracy << ','
            << row.cumulative_bytes << ',' << row.percent_of_dense << '\n';
      }
      std::cout << "summary -> " << (fs::path(cmp_out) / "summary.csv").string() << "\n";
      return 0;
    }

    if (*cal) {
      fedsim::StepsizeSchedule sched;
      if (cal_kind == "inverse_proportional") {
        sched = fedsim::StepsizeSchedule::inverse_proportional(cal_beta, cal_offset,
                                                               cal_comm, cal_iters);
      } else if (cal_kind == "exponential") {
        sched = fedsim::StepsizeSchedule::exponential(cal_gamma0, cal_decay, cal_comm,
                                                      cal_iters);
      } else if (cal_kind == "constant") {
        sched = fedsim::StepsizeSchedule::constant(cal_gamma, cal_comm, cal_iters);
      } else {
        throw std::runtime_error("unknown schedule kind " + cal_kind);
      }
      const fedsim::CalibrationResult r =
          fedsim::calibrate(cal_dim, cal_k, sched, cal_alpha);
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
      std::printf("lambda  = %.6e\nlambda0 = %.6e\n", r.lambda, r.lambda0);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
