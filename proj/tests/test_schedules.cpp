#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "fedsim/schedules.hpp"

using fedsim::StepsizeSchedule;
using fedsim::ThresholdSchedule;

namespace {

double rel_err(double got, double want) { return std::fabs(got - want) / std::fabs(want); }

}  // namespace

TEST_CASE("stepsize schedules evaluate per kind") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);
  CHECK(inv.at(0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(inv.at(1000) == doctest::Approx(0.05).epsilon(1e-12));

  const auto exp = StepsizeSchedule::exponential(0.1, 0.999, 5, 20000);
  CHECK(exp.at(0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(exp.at(5) == doctest::Approx(0.0999).epsilon(1e-12));
  CHECK(exp.at(4) == doctest::Approx(0.1).epsilon(1e-12));  // round-granular decay

  const auto cst = StepsizeSchedule::constant(0.05, 1, 100);
  CHECK(cst.at(0) == 0.05);
  CHECK(cst.at(100) == 0.05);
}

TEST_CASE("stepsize out-of-horizon access is rejected") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 1000);
  CHECK_THROWS_AS(inv.at(1001), std::out_of_range);
  CHECK_THROWS_AS(inv.at(-1), std::out_of_range);
  CHECK_NOTHROW(inv.at(1000));  // the horizon endpoint is part of the domain
}

TEST_CASE("schedule validation") {
  // Decaying faster than gamma_t <= 2*gamma_{t+E} allows: offset < E.
  CHECK_THROWS_AS(StepsizeSchedule::inverse_proportional(1.0, 2.0, 5, 100),
                  std::invalid_argument);
  CHECK_THROWS_AS(StepsizeSchedule::exponential(0.1, 1.5, 5, 100), std::invalid_argument);
  CHECK_THROWS_AS(StepsizeSchedule::exponential(0.1, 0.0, 5, 100), std::invalid_argument);
  CHECK_THROWS_AS(StepsizeSchedule::constant(-0.1, 1, 100), std::invalid_argument);
  CHECK_THROWS_AS(StepsizeSchedule::constant(0.1, 1, 0), std::invalid_argument);

  // Monotone non-increasing and positive over the horizon.
  const auto inv = StepsizeSchedule::inverse_proportional(3.0, 47.0, 5, 4000);
  double prev = inv.at(0);
  for (long t = 1; t <= 4000; ++t) {
    const double g = inv.at(t);
    CHECK(g > 0.0);
    CHECK(g <= prev);
    prev = g;
  }
}

TEST_CASE("shape factor closed form and bounds") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);
  const auto sched = ThresholdSchedule::for_stepsize(1.0, 1.0, inv);
  // gamma0 = 0.1, gammaT = 0.1/21.
  CHECK(sched.gamma0 == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(sched.gammaT == doctest::Approx(0.1 / 21.0).epsilon(1e-12));

  // Direct 64-bit evaluation of the closed form.
  CHECK(sched.shape_factor(0.1) == doctest::Approx(0.2082988952).epsilon(1e-9));

  // Peak exactly 1/2 at the geometric mean of the endpoints.
  const double geo = std::sqrt(sched.gamma0 * sched.gammaT);
  CHECK(sched.shape_factor(geo) == doctest::Approx(0.5).epsilon(1e-12));

  // Degenerate constant schedule: F == 1/2 at its only stepsize.
  const auto cst = StepsizeSchedule::constant(0.05, 1, 10);
  const auto flat = ThresholdSchedule::for_stepsize(1.0, 1.0, cst);
  CHECK(flat.shape_factor(0.05) == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(sched.shape_factor(0.0), std::domain_error);
  CHECK_THROWS_AS(sched.shape_factor(-1.0), std::domain_error);
}

TEST_CASE("shape factor bound holds across gamma and alpha") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);
  for (double alpha : {1.0, 1.5, 2.0, 4.0}) {
    const auto sched = ThresholdSchedule::for_stepsize(1.0, alpha, inv);
    for (double g = 1e-6; g < 10.0; g *= 1.37) {
      const double f = sched.shape_factor(g);
      CHECK(f > 0.0);
      CHECK(f <= 0.5 + 1e-15);
    }
  }
}

TEST_CASE("shape factor vanishes as gamma goes to zero") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);
  const auto sched = ThresholdSchedule::for_stepsize(1.0, 1.0, inv);
  REQUIRE(sched.gamma0 / sched.gammaT >= 10.0);
  CHECK(sched.shape_factor(sched.gammaT / 100.0) < sched.shape_factor(sched.gammaT) / 10.0);
}

TEST_CASE("shape factor is non-increasing in alpha below the geometric mean") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);
  double prev = 1.0;
  for (double alpha : {1.0, 1.25, 1.5, 2.0, 3.0, 5.0}) {
    const auto sched = ThresholdSchedule::for_stepsize(1.0, alpha, inv);
    const double f = sched.shape_factor(sched.gammaT);
    CHECK(f <= prev + 1e-15);
    prev = f;
  }
}

TEST_CASE("threshold composes lambda0 with the shape factor") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);

  const auto zero = ThresholdSchedule::for_stepsize(0.0, 1.0, inv);
  CHECK(zero.threshold(0.1) == 0.0);
  CHECK(zero.threshold(inv.at(20000)) == 0.0);

  const auto sched = ThresholdSchedule::for_stepsize(0.087, 1.0, inv);
  const double geo = std::sqrt(sched.gamma0 * sched.gammaT);
  CHECK(sched.threshold(geo) == doctest::Approx(0.087 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(sched.threshold(0.1) == doctest::Approx(0.0397066).epsilon(1e-4));

  // lambda_t never exceeds lambda0 / sqrt(2).
  for (long t = 0; t <= 20000; t += 97) {
    CHECK(sched.threshold(inv.at(t)) <= 0.087 / std::sqrt(2.0) + 1e-15);
  }
}

TEST_CASE("threshold sequence is unimodal with the peak at the geometric mean") {
  const auto check_unimodal = [](const StepsizeSchedule& gammas) {
    const auto sched = ThresholdSchedule::for_stepsize(0.1, 1.0, gammas);
    const double geo = std::sqrt(sched.gamma0 * sched.gammaT);
    std::vector<double> lambdas;
    for (long t = 0; t <= gammas.total_iters; t += gammas.comm_every) {
      lambdas.push_back(sched.threshold(gammas.at(t)));
    }
    // Rising while gamma > geo, falling after; allow flat segments.
    std::size_t peak = 0;
    for (std::size_t i = 1; i < lambdas.size(); ++i) {
      if (lambdas[i] > lambdas[peak]) peak = i;
    }
    for (std::size_t i = 0; i + 1 <= peak; ++i) {
      CHECK(lambdas[i] <= lambdas[i + 1] + 1e-15);
    }
    for (std::size_t i = peak; i + 1 < lambdas.size(); ++i) {
      CHECK(lambdas[i] >= lambdas[i + 1] - 1e-15);
    }
    // The peak sits where gamma crosses the geometric mean.
    const long peak_t = static_cast<long>(peak) * gammas.comm_every;
    if (peak_t > 0) CHECK(gammas.at(peak_t - gammas.comm_every) >= geo - 1e-15);
    if (peak_t < gammas.total_iters) CHECK(gammas.at(peak_t + gammas.comm_every) <= geo + 1e-15);
  };

  check_unimodal(StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000));
  check_unimodal(StepsizeSchedule::exponential(0.1, 0.999, 5, 20000));
  check_unimodal(StepsizeSchedule::inverse_proportional(3.0, 47.0, 5, 4000));
}

TEST_CASE("fixed threshold from a top-k budget") {
  CHECK(rel_err(fedsim::lambda_from_topk(865482, 0.001), 1.70e-2) < 0.01);
  CHECK(rel_err(fedsim::lambda_from_topk(10250, 0.01), 4.94e-2) < 0.01);
  CHECK(rel_err(fedsim::lambda_from_topk(235690, 0.001), 3.26e-2) < 0.01);
  CHECK(rel_err(fedsim::lambda_from_topk(124000000, 0.001), 1.42e-3) < 0.01);

  std::string warning;
  fedsim::lambda_from_topk(100, 0.001, &warning);  // d*k = 0.1
  CHECK(!warning.empty());
  warning.clear();
  fedsim::lambda_from_topk(10000, 0.01, &warning);
  CHECK(warning.empty());

  CHECK_THROWS_AS(fedsim::lambda_from_topk(0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(fedsim::lambda_from_topk(10, 1.5), std::invalid_argument);
}

TEST_CASE("lambda0 calibration reproduces the reference operating points") {
  const auto inv20k = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);
  const auto inv40k = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 40000);
  const auto exp20k = StepsizeSchedule::exponential(0.1, 0.999, 5, 20000);

  CHECK(rel_err(fedsim::calibrate_lambda0(4.94e-2, inv20k), 8.70e-2) < 0.015);
  CHECK(rel_err(fedsim::calibrate_lambda0(3.26e-2, inv40k), 6.42e-2) < 0.015);
  CHECK(rel_err(fedsim::calibrate_lambda0(4.94e-2, exp20k), 9.41e-2) < 0.015);
}

TEST_CASE("calibration self-consistency: the error budget matches the fixed threshold") {
  const auto inv = StepsizeSchedule::inverse_proportional(100.0, 1000.0, 5, 20000);
  const double lambda_fixed = 4.94e-2;
  const double lambda0 = fedsim::calibrate_lambda0(lambda_fixed, inv);
  const auto sched = ThresholdSchedule::for_stepsize(lambda0, 1.0, inv);

  double sum = 0.0;
  for (long t = 0; t < inv.total_iters; ++t) {
    const double lam = sched.threshold(inv.at(t));
    sum += 1.0 / (lam * lam);
  }
  const double target = static_cast<double>(inv.total_iters) / (lambda_fixed * lambda_fixed);
  CHECK(rel_err(sum, target) < 1e-9);
}
