#include "recps/stats.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "recps/errors.hpp"

namespace recps::stats {

double confidence_gap(double p) noexcept { return std::abs(2.0 * p - 1.0); }

double logit(double q) noexcept {
  const double c = std::clamp(q, kLogitClamp, 1.0 - kLogitClamp);
  return std::log(c / (1.0 - c));
}

OutDistribution fit_out_distribution(std::span<const double> phis) {
  if (phis.size() < kMinOutSamples)
    throw InsufficientSamplesError("OUT distribution needs at least " +
                                   std::to_string(kMinOutSamples) + " samples, got " +
                                   std::to_string(phis.size()));
  const double n = static_cast<double>(phis.size());
  double sum = 0;
  for (double x : phis) sum += x;
  const double mu = sum / n;
  double ss = 0;
  for (double x : phis) ss += (x - mu) * (x - mu);
  const double sigma = std::sqrt(ss / (n - 1.0));
  return {mu, std::max(sigma, kSigmaFloor), phis.size()};
}

double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double lambda_statistic(double phi, const OutDistribution& dist) noexcept {
  return normal_cdf((phi - dist.mu) / dist.sigma);
}

}  // namespace recps::stats
