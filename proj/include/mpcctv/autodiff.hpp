#pragma once

// Helpers for code templated on double / Eigen::AutoDiffScalar.

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

namespace mpcctv {

inline double scalar_value(double v) { return v; }

template <typename Deriv>
double scalar_value(const Eigen::AutoDiffScalar<Deriv>& v) {
  return v.value();
}

template <int N>
using Dual = Eigen::AutoDiffScalar<Eigen::Matrix<double, N, 1>>;

/// Seeds an autodiff vector so that entry i carries unit derivative i.
template <int N>
Eigen::Matrix<Dual<N>, N, 1> seed_duals(const Eigen::Matrix<double, N, 1>& x) {
  Eigen::Matrix<Dual<N>, N, 1> out;
  for (int i = 0; i < N; ++i) {
    out[i].value() = x[i];
    out[i].derivatives() = Eigen::Matrix<double, N, 1>::Unit(i);
  }
  return out;
}

}  // namespace mpcctv
