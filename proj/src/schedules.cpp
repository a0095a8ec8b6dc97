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

#include "fedsim/schedules.hpp"

#include <cmath>
#include <stdexcept>

namespace fedsim {

StepsizeSchedule StepsizeSchedule::inverse_proportional(double beta, double offset,
                                                        int comm_every,
                                                        long total_iters) {
  StepsizeSchedule s;
  s.kind = StepsizeKind::kInverseProportional;
  s.beta = beta;
  s.offset = offset;
  s.comm_every = comm_every;
  s.total_iters = total_iters;
  s.validate();
  return s;
}

StepsizeSchedule StepsizeSchedule::exponential(double gamma_init, double decay,
                                               int comm_every, long total_iters) {
  StepsizeSchedule s;
  s.kind = StepsizeKind::kExponential;
  s.gamma_init = gamma_init;
  s.decay = decay;
  s.comm_every = comm_every;
  s.total_iters = total_iters;
  s.validate();
  return s;
}

StepsizeSchedule StepsizeSchedule::constant(double gamma, int comm_every,
                                            long total_iters) {
  StepsizeSchedule s;
  s.kind = StepsizeKind::kConstant;
  s.gamma_init = gamma;
  s.comm_every = comm_every;
  s.total_iters = total_iters;
  s.validate();
  return s;
}

double StepsizeSchedule::at(long t) const {
  if (t < 0 || t > total_iters) {
    throw std::out_of_range("stepsize requested at t=" + std::to_string(t) +
                            " outside horizon [0, " +
                            std::to_string(total_iters) + "]");
  }
  switch (kind) {
    case StepsizeKind::kInverseProportional:
      return beta / (static_cast<double>(t) + offset);
    case StepsizeKind::kExponential:
      return gamma_init * std::pow(decay, static_cast<double>(t / comm_every));
    case StepsizeKind::kConstant:
      return gamma_init;
  }
  throw std::logic_error("unreachable stepsize kind");
}

void StepsizeSchedule::validate() const {
  if (total_iters <= 0) throw std::invalid_argument("schedule horizon T must be positive");
  if (comm_every < 1) throw std::invalid_argument("communication frequency E must be >= 1");
  switch (kind) {
    case StepsizeKind::kInverseProportional:
      if (beta <= 0.0) throw std::invalid_argument("inverse-proportional beta must be positive");
      if (offset <= 0.0) throw std::invalid_argument("inverse-proportional offset must be positive");
      // gamma_t / gamma_{t+E} = (t+E+offset)/(t+offset) is maximal at t=0,
      // so the 2x bound reduces to offset >= E.
      if (offset < static_cast<double>(comm_every)) {
        throw std::invalid_argument(
            "inverse-proportional schedule decays too fast: requires "
            "gamma_t <= 2*gamma_{t+E}, i.e. offset >= E");
      }
      break;
    case StepsizeKind::kExponential:
      if (gamma_init <= 0.0) throw std::invalid_argument("exponential gamma_init must be positive");
      if (decay <= 0.0 || decay > 1.0) {
        throw std::invalid_argument("exponential decay must lie in (0, 1]");
      }
      break;
    case StepsizeKind::kConstant:
      if (gamma_init <= 0.0) throw std::invalid_argument("constant stepsize must be positive");
      break;
  }
}

ThresholdSchedule ThresholdSchedule::for_stepsize(double lambda0, double alpha,
                                                  const StepsizeSchedule& gammas) {
  if (lambda0 < 0.0) throw std::invalid_argument("lambda0 must be non-negative");
  if (alpha < 1.0) throw std::invalid_argument("threshold shape exponent alpha must be >= 1");
  ThresholdSchedule t;
  t.lambda0 = lambda0;
  t.alpha = alpha;
  t.gamma0 = gammas.at(0);
  t.gammaT = gammas.at(gammas.total_iters);
  if (t.gammaT > t.gamma0) {
    throw std::invalid_argument("threshold schedule requires gammaT <= gamma0");
  }
  return t;
}

double ThresholdSchedule::shape_factor(double gamma) const {
  if (gamma <= 0.0) throw std::domain_error("shape factor requires gamma > 0");
  const double geo = std::pow(gamma0 * gammaT, alpha / 2.0);  // s
  const double ga = std::pow(gamma, alpha);
  return ga * geo / (ga * ga + geo * geo);
}

double ThresholdSchedule::threshold(double gamma_next) const {
  if (lambda0 == 0.0) {
    // Still surface domain errors for non-positive gamma.
    (void)shape_factor(gamma_next);
    return 0.0;
  }
  return lambda0 * std::sqrt(shape_factor(gamma_next));
}

double lambda_from_topk(std::int64_t dim, double k, std::string* warning) {
  if (dim < 1) throw std::invalid_argument("model dimension must be >= 1");
  if (k <= 0.0 || k > 1.0) throw std::invalid_argument("top-k ratio must lie in (0, 1]");
  const double coords = static_cast<double>(dim) * k;
  if (coords < 1.0 && warning != nullptr) {
    *warning = "d*k = " + std::to_string(coords) +
               " < 1: threshold corresponds to transmitting less than one coordinate";
  }
  return 1.0 / (2.0 * std::sqrt(coords));
}

double calibrate_lambda0(double lambda_fixed, const StepsizeSchedule& gammas,
                         double alpha) {
  if (lambda_fixed <= 0.0) throw std::invalid_argument("fixed threshold must be positive");
  const ThresholdSchedule shape = ThresholdSchedule::for_stepsize(1.0, alpha, gammas);
  double sum = 0.0;
  for (long t = 0; t < gammas.total_iters; ++t) {
    sum += 1.0 / shape.shape_factor(gammas.at(t));
  }
  return lambda_fixed * std::sqrt(sum / static_cast<double>(gammas.total_iters));
}

}  // namespace fedsim
