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

#ifndef FEDSIM_MODELS_HPP_
#define FEDSIM_MODELS_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace fedsim {

enum class ModelType { kLogistic, kMlp, kQuadratic };

struct ModelSpec {
  ModelType type = ModelType::kLogistic;
  int features = 0;
  int classes = 0;
  int hidden = 0;       // MLP only
  int dim = 0;          // quadratic only
  double mu = 1.0;      // quadratic spectrum lower edge
  double smoothness = 1.0;  // quadratic spectrum upper edge L

  int param_dim() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Mini-batch view: one row per sample.
struct Batch {
  Eigen::MatrixXd inputs;   // B x features
  std::vector<int> labels;  // class indices, < classes
};

/// f(x) = 0.5 (x - x*)^T A (x - x*) + f*, with A symmetric positive definite.
/// The optimum and optimal value are known in closed form, which makes this
/// the test oracle for convergence-rate and degeneration checks.
struct QuadraticProblem {
  Eigen::MatrixXd curvature;  // A
  Eigen::VectorXd optimum;    // x*
  double optimal_value = 0.0;

  double loss(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;
};

/// A training objective with an exact analytic gradient. Logistic regression
/// and the one-hidden-layer MLP train on batches; the quadratic ignores batch
/// content and evaluates its closed form.
class Model {
 public:
  static Model logistic(int features, int classes);
  static Model mlp(int features, int hidden, int classes);
  static Model quadratic(QuadraticProblem problem);

  const ModelSpec& spec() const { return spec_; }
  int param_dim() const { return spec_.param_dim(); }
  const QuadraticProblem& quad() const { return quad_; }

  double loss(const Eigen::VectorXd& params, const Batch& batch) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& params, const Batch& batch) const;

  /// Class logits (B x classes) for logistic and MLP models.
  Eigen::MatrixXd scores(const Eigen::VectorXd& params,
                         const Eigen::MatrixXd& inputs) const;

 private:
  Model() = default;
  ModelSpec spec_;
  QuadraticProblem quad_;
};

/// params - gamma * grad.
Eigen::VectorXd local_sgd_step(const Eigen::VectorXd& params,
                               const Eigen::VectorXd& grad, double gamma);

/// Deterministic starting point: zeros for logistic and quadratic, seeded
/// scaled-Gaussian for the MLP (an all-zero MLP cannot break symmetry).
Eigen::VectorXd initial_params(const ModelSpec& spec, std::uint64_t seed);

}  // namespace fedsim

#endif  // FEDSIM_MODELS_HPP_
