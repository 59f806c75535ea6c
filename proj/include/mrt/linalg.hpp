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

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "mrt/error.hpp"

namespace mrt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline void symmetrize(Mat& m) { m = 0.5 * (m + m.transpose()).eval(); }

/// Cholesky factorization with escalating diagonal jitter. Tries the matrix
/// as given, then adds 1e-10, 1e-8 and 1e-6 (scaled by the mean diagonal
/// magnitude, floor 1) before giving up with a NumericalFailure that carries
/// the pivot-ratio diagnostic of the last attempt.
class SpdFactor {
 public:
  explicit SpdFactor(const Mat& m, const char* what = "SPD factorization") {
    static constexpr std::array<double, 4> kJitter = {0.0, 1e-10, 1e-8, 1e-6};
    const double scale = std::max(1.0, m.diagonal().cwiseAbs().mean());
    double diag = std::numeric_limits<double>::infinity();
    for (double j : kJitter) {
      Mat shifted = m;
      if (j > 0) shifted.diagonal().array() += j * scale;
      llt_.compute(shifted);
      if (llt_.info() == Eigen::Success) {
        const auto d = llt_.matrixLLT().diagonal();
        if (d.minCoeff() > 0 && std::isfinite(d.maxCoeff())) {
          jitter_ = j * scale;
          return;
        }
        diag = d.maxCoeff() / d.minCoeff();
      }
    }
    throw NumericalFailure(std::string(what) +
                               ": matrix not positive definite after jitter escalation",
                           diag * diag);
  }

  template <typename Rhs>
  auto solve(const Rhs& b) const {
    return llt_.solve(b);
  }

  Mat inverse() const {
    Mat inv = llt_.solve(Mat::Identity(llt_.rows(), llt_.cols()));
    symmetrize(inv);
    return inv;
  }

  double log_det() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  Mat lower() const { return llt_.matrixL(); }
  double jitter() const { return jitter_; }

  /// Squared ratio of extreme Cholesky pivots; a cheap condition estimate.
  double condition_estimate() const {
    const auto d = llt_.matrixLLT().diagonal();
    const double r = d.maxCoeff() / d.minCoeff();
    return r * r;
  }

 private:
  Eigen::LLT<Mat> llt_;
  double jitter_ = 0.0;
};

/// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Mat& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_positive_definite(const Mat& m) { return min_eigenvalue(m) > 0.0; }

}  // namespace mrt
