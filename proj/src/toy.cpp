#include "recps/toy.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "recps/errors.hpp"
#include "recps/rng.hpp"

namespace recps {

namespace {

std::size_t draw_weighted(Rng& rng, const std::vector<double>& cumulative) {
  const double x = rng.uniform() * cumulative.back();
  std::size_t lo = 0, hi = cumulative.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (cumulative[mid] > x) hi = mid;
    else lo = mid + 1;
  }
  return lo;
}

std::string make_id(char prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%04zu", prefix, n);
  return buf;
}

}  // namespace

InteractionDataset make_toy_dataset(const ToySpec& spec) {
  if (spec.users == 0 || spec.items == 0 || spec.clusters == 0 ||
      spec.min_per_user > spec.max_per_user || spec.max_per_user > spec.items)
    throw PreconditionError("invalid toy dataset spec");
  Rng rng(derive_seed(spec.seed, {salt("toy")}));

  // Item popularity is Zipf over a seeded permutation so popular items are
  // spread across cluster blocks.
  std::vector<std::size_t> rank(spec.items);
  for (std::size_t i = 0; i < spec.items; ++i) rank[i] = i;
  for (std::size_t i = spec.items - 1; i > 0; --i) std::swap(rank[i], rank[rng.index(i + 1)]);
  std::vector<double> weight(spec.items);
  for (std::size_t i = 0; i < spec.items; ++i)
    weight[i] = 1.0 / std::pow(static_cast<double>(rank[i] + 1), spec.zipf_exponent);

  const std::size_t block = (spec.items + spec.clusters - 1) / spec.clusters;
  std::vector<std::vector<double>> cluster_cdf(spec.clusters);
  std::vector<double> global_cdf(spec.items);
  double acc = 0;
  for (std::size_t i = 0; i < spec.items; ++i) global_cdf[i] = acc += weight[i];
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    auto& cdf = cluster_cdf[c];
    cdf.resize(spec.items);
    double a = 0;
    for (std::size_t i = 0; i < spec.items; ++i) {
      const bool in_block = i / block == c;
      cdf[i] = a += in_block ? weight[i] : 0.0;
    }
  }

  std::vector<Interaction> rows;
  std::int64_t clock = 1'000'000;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t cluster = rng.index(spec.clusters);
    const std::size_t n =
        spec.min_per_user + rng.index(spec.max_per_user - spec.min_per_user + 1);
    std::vector<bool> taken(spec.items, false);
    std::size_t have = 0;
    while (have < n) {
      const bool use_cluster =
          rng.uniform() < spec.cluster_affinity && cluster_cdf[cluster].back() > 0;
      const std::size_t item =
          draw_weighted(rng, use_cluster ? cluster_cdf[cluster] : global_cdf);
      if (taken[item]) continue;
      taken[item] = true;
      ++have;
      clock += 1 + static_cast<std::int64_t>(rng.index(3600));
      rows.push_back({make_id('u', u), make_id('i', item),
                      static_cast<double>(1 + rng.index(5)), clock});
    }
  }
  return InteractionDataset::from_interactions(std::move(rows));
}

}  // namespace recps
