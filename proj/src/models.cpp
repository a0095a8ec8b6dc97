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

#include "fedsim/models.hpp"

#include <cmath>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic,
                                                Eigen::Dynamic, Eigen::RowMajor>>;

void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.inputs.rows() != static_cast<Eigen::Index>(batch.labels.size())) {
    throw std::invalid_argument("batch inputs and labels disagree on sample count");
  }
  if (batch.inputs.cols() != spec.features) {
    throw std::invalid_argument("batch feature width does not match the model");
  }
  for (int label : batch.labels) {
    if (label < 0 || label >= spec.classes) {
      throw std::invalid_argument("batch label outside [0, classes)");
    }
  }
}

void check_params(const ModelSpec& spec, const VectorXd& params) {
  if (params.size() != spec.param_dim()) {
    throw std::invalid_argument("parameter vector has wrong dimension");
  }
}

// Row-wise softmax cross-entropy pieces shared by logistic and MLP heads.
// logits: B x C. Returns mean loss; fills probs with softmax rows.
double softmax_xent(const MatrixXd& logits, const std::vector<int>& labels,
                    MatrixXd* probs) {
  const Eigen::Index batch = logits.rows();
  double total = 0.0;
  probs->resizeLike(logits);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double peak = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).array() - peak;
    const Eigen::ArrayXd expo = shifted.exp();
    const double denom = expo.sum();
    probs->row(i) = (expo / denom).matrix();
    total += std::log(denom) - shifted(labels[i]);
  }
  return total / static_cast<double>(batch);
}

struct LogisticViews {
  RowMajorMap weights;  // C x F
  const double* bias;   // C
};

LogisticViews logistic_views(const ModelSpec& spec, const VectorXd& params) {
  return LogisticViews{
      RowMajorMap(params.data(), spec.classes, spec.features),
      params.data() + spec.classes * spec.features};
}

struct MlpDims {
  int w1, b1, w2, b2;  // block offsets
};

MlpDims mlp_dims(const ModelSpec& spec) {
  MlpDims d;
  d.w1 = 0;
  d.b1 = spec.hidden * spec.features;
  d.w2 = d.b1 + spec.hidden;
  d.b2 = d.w2 + spec.classes * spec.hidden;
  return d;
}

}  // namespace

int ModelSpec::param_dim() const {
  switch (type) {
    case ModelType::kLogistic:
      return features * classes + classes;
    case ModelType::kMlp:
      return hidden * features + hidden + classes * hidden + classes;
    case ModelType::kQuadratic:
      return dim;
  }
  throw std::logic_error("unreachable model type");
}

double QuadraticProblem::loss(const VectorXd& x) const {
  const VectorXd r = x - optimum;
  return 0.5 * r.dot(curvature * r) + optimal_value;
}

VectorXd QuadraticProblem::gradient(const VectorXd& x) const {
  return curvature * (x - optimum);
}

Model Model::logistic(int features, int classes) {
  if (features < 1 || classes < 2) {
    throw std::invalid_argument("logistic model needs features >= 1 and classes >= 2");
  }
  Model m;
  m.spec_.type = ModelType::kLogistic;
  m.spec_.features = features;
  m.spec_.classes = classes;
  return m;
}

Model Model::mlp(int features, int hidden, int classes) {
  if (features < 1 || hidden < 1 || classes < 2) {
    throw std::invalid_argument("mlp model needs features, hidden >= 1 and classes >= 2");
  }
  Model m;
  m.spec_.type = ModelType::kMlp;
  m.spec_.features = features;
  m.spec_.hidden = hidden;
  m.spec_.classes = classes;
  return m;
}

Model Model::quadratic(QuadraticProblem problem) {
  if (problem.curvature.rows() != problem.curvature.cols() ||
      problem.curvature.rows() != problem.optimum.size()) {
    throw std::invalid_argument("quadratic problem dimensions disagree");
  }
  Model m;
  m.spec_.type = ModelType::kQuadratic;
  m.spec_.dim = static_cast<int>(problem.optimum.size());
  m.quad_ = std::move(problem);
  return m;
}

Eigen::MatrixXd Model::scores(const VectorXd& params, const MatrixXd& inputs) const {
  check_params(spec_, params);
  if (inputs.cols() != spec_.features) {
    throw std::invalid_argument("input feature width does not match the model");
  }
  switch (spec_.type) {
    case ModelType::kQuadratic:
      throw std::invalid_argument("quadratic objectives have no class scores");
    case ModelType::kLogistic: {
      const auto views = logistic_views(spec_, params);
      const Eigen::Map<const VectorXd> bias(views.bias, spec_.classes);
      MatrixXd logits = inputs * views.weights.transpose();
      logits.rowwise() += bias.transpose();
      return logits;
    }
    case ModelType::kMlp: {
      const MlpDims d = mlp_dims(spec_);
      const RowMajorMap w1(params.data() + d.w1, spec_.hidden, spec_.features);
      const Eigen::Map<const VectorXd> b1(params.data() + d.b1, spec_.hidden);
      const RowMajorMap w2(params.data() + d.w2, spec_.classes, spec_.hidden);
      const Eigen::Map<const VectorXd> b2(params.data() + d.b2, spec_.classes);
      MatrixXd pre = inputs * w1.transpose();
      pre.rowwise() += b1.transpose();
      MatrixXd logits = pre.cwiseMax(0.0) * w2.transpose();
      logits.rowwise() += b2.transpose();
      return logits;
    }
  }
  throw std::logic_error("unreachable model type");
}

double Model::loss(const VectorXd& params, const Batch& batch) const {
  check_params(spec_, params);
  if (spec_.type == ModelType::kQuadratic) return quad_.loss(params);
  check_batch(spec_, batch);
  const MatrixXd logits = scores(params, batch.inputs);
  MatrixXd probs;
  return softmax_xent(logits, batch.labels, &probs);
}

VectorXd Model::gradient(const VectorXd& params, const Batch& batch) const {
  check_params(spec_, params);
  switch (spec_.type) {
    case ModelType::kQuadratic:
      return quad_.gradient(params);
    case ModelType::kLogistic: {
      check_batch(spec_, batch);
      const auto views = logistic_views(spec_, params);
      const Eigen::Map<const VectorXd> bias(views.bias, spec_.classes);
      MatrixXd logits = batch.inputs * views.weights.transpose();
      logits.rowwise() += bias.transpose();
      MatrixXd probs;
      softmax_xent(logits, batch.labels, &probs);
      const double scale = 1.0 / static_cast<double>(batch.inputs.rows());
      for (Eigen::Index i = 0; i < probs.rows(); ++i) probs(i, batch.labels[i]) -= 1.0;
      probs *= scale;

      VectorXd grad(spec_.param_dim());
      RowMajorMutMap gw(grad.data(), spec_.classes, spec_.features);
      gw = probs.transpose() * batch.inputs;
      Eigen::Map<VectorXd>(grad.data() + spec_.classes * spec_.features, spec_.classes) =
          probs.colwise().sum().transpose();
      return grad;
    }
    case ModelType::kMlp: {
      check_batch(spec_, batch);
      const MlpDims d = mlp_dims(spec_);
      const RowMajorMap w1(params.data() + d.w1, spec_.hidden, spec_.features);
      const Eigen::Map<const VectorXd> b1(params.data() + d.b1, spec_.hidden);
      const RowMajorMap w2(params.data() + d.w2, spec_.classes, spec_.hidden);
      const Eigen::Map<const VectorXd> b2(params.data() + d.b2, spec_.classes);

      MatrixXd pre = batch.inputs * w1.transpose();
      pre.rowwise() += b1.transpose();
      const MatrixXd act = pre.cwiseMax(0.0);
      MatrixXd logits = act * w2.transpose();
      logits.rowwise() += b2.transpose();
      MatrixXd probs;
      softmax_xent(logits, batch.labels, &probs);
      const double scale = 1.0 / static_cast<double>(batch.inputs.rows());
      for (Eigen::Index i = 0; i < probs.rows(); ++i) probs(i, batch.labels[i]) -= 1.0;
      probs *= scale;  // dL/dlogits, B x C

      const MatrixXd dact = probs * w2;  // B x H
      const MatrixXd dpre =
          (pre.array() > 0.0).select(dact, MatrixXd::Zero(dact.rows(), dact.cols()));

      VectorXd grad(spec_.param_dim());
      RowMajorMutMap gw1(grad.data() + d.w1, spec_.hidden, spec_.features);
      RowMajorMutMap gw2(grad.data() + d.w2, spec_.classes, spec_.hidden);
      gw1 = dpre.transpose() * batch.inputs;
      Eigen::Map<VectorXd>(grad.data() + d.b1, spec_.hidden) =
          dpre.colwise().sum().transpose();
      gw2 = probs.transpose() * act;
      Eigen::Map<VectorXd>(grad.data() + d.b2, spec_.classes) =
          probs.colwise().sum().transpose();
      return grad;
    }
  }
  throw std::logic_error("unreachable model type");
}

VectorXd local_sgd_step(const VectorXd& params, const VectorXd& grad, double gamma) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument("parameter and gradient dimensions disagree");
  }
  return params - gamma * grad;
}

VectorXd initial_params(const ModelSpec& spec, std::uint64_t seed) {
  VectorXd x0 = VectorXd::Zero(spec.param_dim());
  if (spec.type == ModelType::kMlp) {
    Rng rng(derive_seed(seed, "mlp-init"));
    const MlpDims d = mlp_dims(spec);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(spec.features));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
    for (int i = d.w1; i < d.b1; ++i) x0[i] = rng.normal(0.0, s1);
    for (int i = d.w2; i < d.b2; ++i) x0[i] = rng.normal(0.0, s2);
  }
  return x0;
}

}  // namespace fedsim
