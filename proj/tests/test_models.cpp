#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "fedsim/data.hpp"
#include "fedsim/models.hpp"
#include "fedsim/rng.hpp"

using fedsim::Batch;
using fedsim::Model;

namespace {

// Independent finite-difference oracle: central differences on the loss.
Eigen::VectorXd fd_gradient(const Model& model, const Eigen::VectorXd& params,
                            const Batch& batch, double step = 1e-6) {
  Eigen::VectorXd grad(params.size());
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + step;
    const double up = model.loss(probe, batch);
    probe[i] = params[i] - step;
    const double down = model.loss(probe, batch);
    probe[i] = params[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

void check_gradient_matches_fd(const Model& model, const Eigen::VectorXd& params,
                               const Batch& batch) {
  const Eigen::VectorXd analytic = model.gradient(params, batch);
  const Eigen::VectorXd fd = fd_gradient(model, params, batch);
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(fd[i])});
    CHECK(std::fabs(analytic[i] - fd[i]) / denom < 1e-5);
  }
}

Batch random_batch(fedsim::Rng& rng, int samples, int features, int classes) {
  Batch b;
  b.inputs.resize(samples, features);
  for (int i = 0; i < samples; ++i) {
    for (int f = 0; f < features; ++f) b.inputs(i, f) = rng.uniform();
    b.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return b;
}

}  // namespace

TEST_CASE("parameter dimensions") {
  CHECK(Model::logistic(784, 10).param_dim() == 7850);
  CHECK(Model::mlp(20, 16, 5).param_dim() == 20 * 16 + 16 + 5 * 16 + 5);
  CHECK(fedsim::make_quadratic(7, 1.0, 2.0, 3).optimum.size() == 7);
}

TEST_CASE("zero-parameter logistic loss is log(classes) on any batch") {
  fedsim::Rng rng(2);
  for (int classes : {2, 5, 10}) {
    const Model model = Model::logistic(6, classes);
    const Batch batch = random_batch(rng, 30, 6, classes);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.param_dim());
    CHECK(model.loss(zero, batch) ==
          doctest::Approx(std::log(static_cast<double>(classes))).epsilon(1e-12));
  }
}

TEST_CASE("zero-parameter logistic bias gradient is uniform-minus-frequency") {
  const int classes = 4;
  const Model model = Model::logistic(3, classes);
  Batch batch;
  batch.inputs.setZero(8, 3);
  batch.inputs.setRandom();
  batch.labels = {0, 0, 0, 1, 1, 2, 2, 3};  // frequencies 3/8, 2/8, 2/8, 1/8
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.param_dim());
  const Eigen::VectorXd grad = model.gradient(zero, batch);
  const double uniform = 1.0 / classes;
  const double freq[] = {3.0 / 8, 2.0 / 8, 2.0 / 8, 1.0 / 8};
  for (int c = 0; c < classes; ++c) {
    CHECK(grad[3 * classes + c] == doctest::Approx(uniform - freq[c]).epsilon(1e-12));
  }
}

TEST_CASE("quadratic closed forms") {
  fedsim::QuadraticProblem p;
  p.curvature = Eigen::MatrixXd::Identity(2, 2);
  p.optimum = Eigen::VectorXd::Zero(2);
  p.optimal_value = 0.0;
  Eigen::VectorXd x(2);
  x << 3.0, 4.0;
  CHECK(p.loss(x) == doctest::Approx(12.5).epsilon(1e-15));
  CHECK(p.gradient(x) == x);
  CHECK(p.loss(p.optimum) == 0.0);

  // Forced spectrum: mu == L collapses to the identity.
  const fedsim::QuadraticProblem forced = fedsim::make_quadratic(2, 1.0, 1.0, 99);
  CHECK((forced.curvature - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("make_quadratic spectrum spans [mu, L]") {
  const fedsim::QuadraticProblem p = fedsim::make_quadratic(12, 0.5, 4.0, 1234);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.curvature);
  CHECK(eig.eigenvalues().minCoeff() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(eig.eigenvalues().maxCoeff() == doctest::Approx(4.0).epsilon(1e-9));
  // Determinism
  const fedsim::QuadraticProblem q = fedsim::make_quadratic(12, 0.5, 4.0, 1234);
  CHECK(p.curvature == q.curvature);
  CHECK(p.optimum == q.optimum);
}

TEST_CASE("gradients match the finite-difference oracle") {
  fedsim::Rng rng(3001);
  for (int trial = 0; trial < 25; ++trial) {
    const int features = 3 + static_cast<int>(rng.below(5));
    const int classes = 2 + static_cast<int>(rng.below(4));
    const Model model = Model::logistic(features, classes);
    Eigen::VectorXd params(model.param_dim());
    for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = 0.5 * rng.normal();
    check_gradient_matches_fd(model, params, random_batch(rng, 7, features, classes));
  }
  for (int trial = 0; trial < 25; ++trial) {
    const int features = 3 + static_cast<int>(rng.below(4));
    const int hidden = 4 + static_cast<int>(rng.below(5));
    const int classes = 2 + static_cast<int>(rng.below(3));
    const Model model = Model::mlp(features, hidden, classes);
    Eigen::VectorXd params(model.param_dim());
    for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = 0.5 * rng.normal();
    check_gradient_matches_fd(model, params, random_batch(rng, 6, features, classes));
  }
  for (int trial = 0; trial < 25; ++trial) {
    const int dim = 2 + static_cast<int>(rng.below(8));
    const Model model =
        Model::quadratic(fedsim::make_quadratic(dim, 0.5, 3.0, 100 + trial));
    Eigen::VectorXd params(dim);
    for (int i = 0; i < dim; ++i) params[i] = rng.normal();
    check_gradient_matches_fd(model, params, Batch{});
  }
}

TEST_CASE("sgd step") {
  Eigen::VectorXd x(1), g(1);
  x << 1.0;
  g << 2.0;
  CHECK(fedsim::local_sgd_step(x, g, 0.5)[0] == 0.0);
  CHECK(fedsim::local_sgd_step(x, g, 0.0) == x);

  Eigen::VectorXd x2(2), g2(2);
  x2 << 1.0, 1.0;
  g2 << 1.0, -1.0;
  const Eigen::VectorXd out = fedsim::local_sgd_step(x2, g2, 0.1);
  CHECK(out[0] == doctest::Approx(0.9));
  CHECK(out[1] == doctest::Approx(1.1));

  Eigen::VectorXd bad(3);
  CHECK_THROWS_AS(fedsim::local_sgd_step(x2, bad, 0.1), std::invalid_argument);
}

TEST_CASE("full-batch descent on the quadratic is monotone for gamma <= 1/L") {
  const double L = 3.0;
  const Model model = Model::quadratic(fedsim::make_quadratic(10, 0.5, L, 5));
  Eigen::VectorXd x = Eigen::VectorXd::Constant(10, 2.0);
  double prev = model.loss(x, Batch{});
  for (int step = 0; step < 50; ++step) {
    x = fedsim::local_sgd_step(x, model.gradient(x, Batch{}), 1.0 / L);
    const double now = model.loss(x, Batch{});
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("mlp initial parameters are seeded and deterministic") {
  const Model model = Model::mlp(6, 8, 3);
  const Eigen::VectorXd a = fedsim::initial_params(model.spec(), 42);
  const Eigen::VectorXd b = fedsim::initial_params(model.spec(), 42);
  const Eigen::VectorXd c = fedsim::initial_params(model.spec(), 43);
  CHECK(a == b);
  CHECK(a != c);
  // Biases start at zero.
  CHECK(a[6 * 8] == 0.0);
  // Logistic starts from zeros.
  CHECK(fedsim::initial_params(Model::logistic(4, 3).spec(), 7).isZero());
}
