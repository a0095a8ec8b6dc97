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

#ifndef FEDSIM_SCHEDULES_HPP_
#define FEDSIM_SCHEDULES_HPP_

#include <cstdint>
#include <string>

namespace fedsim {

enum class StepsizeKind { kInverseProportional, kExponential, kConstant };

/// Stepsize schedule over a fixed horizon [0, T]. The horizon is part of the
/// schedule because the adaptive threshold needs the terminal stepsize up
/// front; open-ended schedules are rejected.
struct StepsizeSchedule {
  StepsizeKind kind = StepsizeKind::kConstant;
  double beta = 0.0;        // inverse-proportional numerator
  double offset = 0.0;      // inverse-proportional denominator offset b
  double gamma_init = 0.0;  // base value for exponential / constant
  double decay = 1.0;       // per-round multiplier for exponential
  int comm_every = 1;       // E, local iterations between aggregations
  long total_iters = 0;     // T

  static StepsizeSchedule inverse_proportional(double beta, double offset,
                                               int comm_every, long total_iters);
  static StepsizeSchedule exponential(double gamma_init, double decay,
                                      int comm_every, long total_iters);
  static StepsizeSchedule constant(double gamma, int comm_every,
                                   long total_iters);

  /// gamma_t. Defined for 0 <= t <= T; throws std::out_of_range otherwise.
  double at(long t) const;

  /// Parameter sanity plus the decay-rate bound gamma_t <= 2*gamma_{t+E}
  /// required of inverse-proportional schedules. Throws std::invalid_argument.
  void validate() const;

  bool operator==(const StepsizeSchedule&) const = default;
};

/// The stepsize-tracking threshold: lambda_t = lambda0 * sqrt(F(gamma_t)) with
/// F(g) = g^a * s / (g^2a + s^2), s = (gamma0*gammaT)^(a/2). F peaks at 1/2
/// when g^a == s, and tends to 0 with g, so lambda rises and then falls over a
/// decaying stepsize trajectory.
struct ThresholdSchedule {
  double lambda0 = 0.0;
  double alpha = 1.0;  // shape exponent, >= 1
  double gamma0 = 0.0;
  double gammaT = 0.0;

  static ThresholdSchedule for_stepsize(double lambda0, double alpha,
                                        const StepsizeSchedule& gammas);

  /// F(gamma) in (0, 1/2]. Throws std::domain_error for gamma <= 0.
  double shape_factor(double gamma) const;

  /// lambda for the given upcoming stepsize; zero iff lambda0 is zero.
  double threshold(double gamma_next) const;

  bool operator==(const ThresholdSchedule&) const = default;
};

/// Fixed hard threshold matched to a top-k budget: 1 / (2*sqrt(d*k)).
/// When d*k < 1 the threshold corresponds to less than one transmitted
/// coordinate; a note is written to *warning when provided.
double lambda_from_topk(std::int64_t dim, double k, std::string* warning = nullptr);

/// Initial threshold scale such that the per-iteration sum of 1/lambda_t^2
/// over the horizon equals T / lambda_fixed^2, i.e. the adaptive schedule
/// spends the same error budget as the fixed threshold it replaces.
double calibrate_lambda0(double lambda_fixed, const StepsizeSchedule& gammas,
                         double alpha = 1.0);

}  // namespace fedsim

#endif  // FEDSIM_SCHEDULES_HPP_
