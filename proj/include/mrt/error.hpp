// Copyright 2026 The mrt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace mrt {

/// Raised when an input lies outside the documented domain of an operation
/// (reward outside {0..3}, negative grams, probability outside [0,1], ...).
class InputDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear-algebra step could not be completed even after jitter escalation.
class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(const std::string& what, double diagnostic)
      : std::runtime_error(what), diagnostic_(diagnostic) {}

  /// Condition-style diagnostic (ratio of extreme pivots, or the offending
  /// eigenvalue) captured at the point of failure.
  double diagnostic() const noexcept { return diagnostic_; }

 private:
  double diagnostic_;
};

/// Hyperparameters produce a prior covariance that fails the PD check.
class HyperparameterRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mrt
