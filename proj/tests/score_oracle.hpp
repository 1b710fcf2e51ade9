#pragma once

// Exhaustive threshold search: every model's Λ is tried as a threshold, and
// only thresholds taken from OUT models count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "recps/rng.hpp"

namespace testing {

inline double brute_force_score(std::span<const double> lambdas, std::span<const std::uint8_t> in) {
  const std::size_t m = lambdas.size();
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t j = 0; j < m; ++j) (in[j] ? n_in : n_out)++;
  double best = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    bool out_derived = false;
    for (std::size_t j = 0; j < m; ++j)
      if (!in[j] && lambdas[j] == lambdas[t]) out_derived = true;
    if (!out_derived) continue;
    std::size_t tp = 0, fp = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!(lambdas[j] > lambdas[t])) continue;
      if (in[j]) ++tp; else ++fp;
    }
    if (fp == 0) continue;
    const double r = std::log((static_cast<double>(tp) / static_cast<double>(n_in)) /
                              (static_cast<double>(fp) / static_cast<double>(n_out)));
    if (r > best) best = r;
  }
  return best;
}

struct Instance {
  std::vector<double> lambdas;
  std::vector<std::uint8_t> in;
};

/// Random instance with 2 <= m <= 12, both classes present. Half the
/// instances draw Λ from a 4-value grid so ties are common.
inline Instance random_instance(recps::Rng& rng) {
  Instance x;
  const std::size_t m = 2 + rng.index(11);
  const bool coarse = rng.index(2) == 0;
  do {
    x.lambdas.clear();
    x.in.clear();
    for (std::size_t j = 0; j < m; ++j) {
      x.lambdas.push_back(coarse ? 0.25 * static_cast<double>(rng.index(4)) : rng.uniform());
      x.in.push_back(static_cast<std::uint8_t>(rng.index(2)));
    }
  } while (std::count(x.in.begin(), x.in.end(), 1) == 0 || std::count(x.in.begin(), x.in.end(), 0) == 0);
  return x;
}

}  // namespace testing
