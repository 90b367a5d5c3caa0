#pragma once

// Shared test oracles. These stay independent of the implementation paths
// they check: gradients come from central finite differences on the forward
// value only, statistics from plain sample moments.

#include <cmath>
#include <functional>
#include <vector>

#include "odp/mat.hpp"
#include "odp/tape.hpp"

namespace odp::testing {

// Central finite-difference gradient of a scalar-valued function w.r.t. one
// parameter, h = 1e-5 per the gradient-oracle contract.
inline Mat fd_grad(Parameter& p, const std::function<double()>& f, double h = 1e-5) {
  Mat g(p.value.rows(), p.value.cols());
  for (Index i = 0; i < p.value.size(); ++i) {
    const double orig = p.value(i);
    p.value(i) = orig + h;
    const double fp = f();
    p.value(i) = orig - h;
    const double fm = f();
    p.value(i) = orig;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Relative error between an analytic gradient and its finite-difference
// reference, max over entries, with an absolute floor for near-zero entries.
inline double grad_rel_err(const Mat& analytic, const Mat& reference) {
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic(i)), std::abs(reference(i)), 1e-3});
    worst = std::max(worst, std::abs(analytic(i) - reference(i)) / denom);
  }
  return worst;
}

inline double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double sample_var(const std::vector<double>& xs) {
  const double m = sample_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

}  // namespace odp::testing
