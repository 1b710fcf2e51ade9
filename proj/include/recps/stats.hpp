#pragma once

#include <cstddef>
#include <span>

namespace recps::stats {

inline constexpr double kLogitClamp = 1e-6;
inline constexpr double kSigmaFloor = 1e-6;
inline constexpr std::size_t kMinOutSamples = 30;

/// Gaussian fitted to OUT-sample phi values.
struct OutDistribution {
  double mu = 0.0;
  double sigma = 1.0;
  std::size_t n = 0;
};

/// |2p - 1|: distance of a binary prediction from the undecided midpoint.
double confidence_gap(double p) noexcept;

/// log(q / (1 - q)) with q clamped to [1e-6, 1 - 1e-6].
double logit(double q) noexcept;

/// logit(confidence_gap(p)).
inline double phi(double p) noexcept { return logit(confidence_gap(p)); }

/// Sample mean and unbiased standard deviation (floored at 1e-6).
/// Throws InsufficientSamplesError for fewer than 30 values.
OutDistribution fit_out_distribution(std::span<const double> phis);

/// Standard normal CDF.
double normal_cdf(double z) noexcept;

/// 1 - Pr(Z > phi) for Z ~ N(mu, sigma^2); higher means more IN-like.
double lambda_statistic(double phi, const OutDistribution& dist) noexcept;

}  // namespace recps::stats
