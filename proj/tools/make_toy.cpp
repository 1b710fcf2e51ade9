// Writes the bundled synthetic dataset as user<TAB>item<TAB>rating<TAB>timestamp.
//   make_toy [--users N] [--items N] [--seed S] > data/toy.tsv

#include <iostream>

#include <CLI11.hpp>

#include "recps/kv.hpp"
#include "recps/toy.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic implicit-feedback log"};
  recps::ToySpec spec;
  app.add_option("--users", spec.users);
  app.add_option("--items", spec.items);
  app.add_option("--min-per-user", spec.min_per_user);
  app.add_option("--max-per-user", spec.max_per_user);
  app.add_option("--clusters", spec.clusters);
  app.add_option("--seed", spec.seed);
  CLI11_PARSE(app, argc, argv);

  const auto ds = recps::make_toy_dataset(spec);
  std::cout << "user\titem\trating\ttimestamp\n";
  for (const auto& r : ds.interactions())
    std::cout << r.user_id << '\t' << r.item_id << '\t' << recps::format_double(r.rating.value_or(1))
              << '\t' << r.timestamp.value_or(0) << '\n';
  return 0;
}
