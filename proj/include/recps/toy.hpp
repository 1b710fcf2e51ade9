#pragma once

#include <cstddef>
#include <cstdint>

#include "recps/dataset.hpp"

namespace recps {

struct ToySpec {
  std::size_t users = 200;
  std::size_t items = 100;
  std::size_t min_per_user = 8;
  std::size_t max_per_user = 18;
  std::size_t clusters = 5;
  double cluster_affinity = 0.7;  // share of draws from the user's cluster block
  double zipf_exponent = 1.0;
  std::uint64_t seed = 7;
};

/// Synthetic implicit-feedback log with planted structure: Zipf item
/// popularity plus user clusters that prefer a contiguous block of items.
/// Rows are emitted user by user with strictly increasing timestamps.
InteractionDataset make_toy_dataset(const ToySpec& spec = {});

}  // namespace recps
