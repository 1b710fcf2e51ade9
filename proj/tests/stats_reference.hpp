#pragma once

// 50-digit reference implementations of the scalar statistics.

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "recps/stats.hpp"

namespace testing {

using Big = boost::multiprecision::cpp_bin_float_50;

inline Big ref_gap(double p) { return abs(2 * Big(p) - 1); }

inline Big ref_logit(const Big& q) {
  const Big eps("1e-6");
  Big c = q;
  if (c < eps) c = eps;
  if (c > 1 - eps) c = 1 - eps;
  return log(c / (1 - c));
}

inline Big ref_phi(double p) { return ref_logit(ref_gap(p)); }

inline Big ref_lambda(const Big& phi, double mu, double sigma) {
  const Big z = (phi - Big(mu)) / Big(sigma);
  return erfc(-z / sqrt(Big(2))) / 2;
}

}  // namespace testing
