#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <set>

#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/shadow.hpp"
#include "recps/toy.hpp"
#include "support.hpp"

using namespace recps;

namespace {

std::shared_ptr<const InteractionDataset> toy(std::size_t users = 40) {
  return std::make_shared<const InteractionDataset>(
      split_leave_two_out(make_toy_dataset({.users = users, .items = 100})));
}

EnsembleSpec small_spec(std::size_t m = 4) {
  EnsembleSpec s;
  s.m = m;
  s.seed = 21;
  s.train.dim = 8;
  s.train.max_epochs = 4;
  s.train.patience = 0;
  s.train.learning_rate = 0.3;
  s.train.batch_size = 32;
  return s;
}

}  // namespace

TEST_CASE("membership: binomial concentration and determinism") {
  const auto ds = toy();
  const auto pop = ds->keys_with_split(Split::train);
  const auto m = sample_shadow_datasets(pop, 1000, 3);
  // 4 sigma of Binomial(1000, 1/2) is about 63.
  for (std::size_t r = 0; r < pop.size(); ++r) {
    CHECK(m.in_count(r) >= 437);
    CHECK(m.in_count(r) <= 563);
  }
  CHECK(sample_shadow_datasets(pop, 1000, 3) == m);
  CHECK_FALSE(sample_shadow_datasets(pop, 1000, 4) == m);
  const auto two = sample_shadow_datasets(pop, 2, 3);
  for (std::size_t r = 0; r < pop.size(); ++r) CHECK(two.in_count(r) <= 2);
  CHECK_THROWS_AS(sample_shadow_datasets(pop, 1, 3), PreconditionError);
}

TEST_CASE("membership bits survive removal of other interactions") {
  const auto ds = toy();
  const auto pop = ds->keys_with_split(Split::train);
  const auto full = sample_shadow_datasets(pop, 16, 9);
  std::vector<InteractionKey> half;
  std::vector<std::size_t> where;
  for (std::size_t r = 0; r < pop.size(); r += 2) {
    half.push_back(pop[r]);
    where.push_back(r);
  }
  const auto sub = sample_shadow_datasets(half, 16, 9);
  for (std::size_t k = 0; k < half.size(); ++k)
    for (std::size_t j = 0; j < 16; ++j) CHECK(sub.contains(j, k) == full.contains(j, where[k]));
}

TEST_CASE("membership serialization round trip") {
  const auto ds = toy(10);
  const auto m = sample_shadow_datasets(ds->keys_with_split(Split::train), 13, 1);
  CHECK(MembershipMatrix::deserialize(m.serialize()) == m);
  CHECK_THROWS_AS(MembershipMatrix::deserialize(m.serialize().substr(1)), FormatError);
}

TEST_CASE("shadow negatives avoid only the subset's items") {
  const auto ds = toy(20);
  const auto pop = ds->keys_with_split(Split::train);
  const auto spec = small_spec();
  const auto mem = sample_shadow_datasets(pop, spec.m, spec.seed);
  const auto ex = shadow_examples(*ds, pop, mem, 1, spec);
  std::set<std::uint64_t> in;
  for (std::size_t r = 0; r < pop.size(); ++r)
    if (mem.contains(1, r)) in.insert(pack(pop[r]));
  std::size_t positives = 0;
  for (const auto& e : ex) {
    if (e.label) {
      ++positives;
      CHECK(in.count(pack({e.user, e.item})) == 1);
    } else {
      CHECK(in.count(pack({e.user, e.item})) == 0);
    }
  }
  CHECK(positives == in.size());
  CHECK(ex.size() == positives * (1 + spec.negative_ratio));
}

TEST_CASE("ensemble structure, isolation and persistence") {
  const auto ds = toy();
  const auto spec = small_spec();
  const auto ens = build_ensemble(ds, spec, 2);
  CHECK(ens.models.size() == 4);
  CHECK(ens.out_dist.n >= 30);
  CHECK(std::isfinite(ens.out_dist.mu));
  CHECK(ens.out_dist.sigma >= stats::kSigmaFloor);

  // Retraining one model alone reproduces its parameters.
  CHECK(train_shadow_model(*ds, ens.population, ens.membership, 2, spec) == ens.models[2]);
  // Worker count does not change the result.
  const auto serial = build_ensemble(ds, spec, 1);
  for (std::size_t j = 0; j < spec.m; ++j) CHECK(serial.models[j] == ens.models[j]);
  CHECK(serial.out_dist.mu == ens.out_dist.mu);

  const auto phis = ensemble_phi(ens, ens.population[0]);
  CHECK(phis.size() == 4);
  CHECK(ensemble_phi(ens, ens.population[0]) == phis);
  CHECK(ens.index_of(ens.population[5]) == 5u);
  CHECK_FALSE(ens.index_of({9999, 0}).has_value());

  testing::TempDir a("enA"), b("enB");
  save_ensemble(ens, a.path());
  save_ensemble(serial, b.path());
  CHECK(read_file(a / "manifest.txt") == read_file(b / "manifest.txt"));
  CHECK(read_file(a / "models/shadow_0003.ckpt") == read_file(b / "models/shadow_0003.ckpt"));
  const auto back = load_ensemble(a.path());
  CHECK(back.models == ens.models);
  CHECK(back.membership == ens.membership);
  CHECK(back.population == ens.population);
  CHECK(back.out_dist.mu == ens.out_dist.mu);
  CHECK(back.out_dist.sigma == ens.out_dist.sigma);
  CHECK(back.spec.train == ens.spec.train);

  SUBCASE("tampered checkpoint") {
    std::string bytes = read_file(a / "models/shadow_0001.ckpt");
    bytes[bytes.size() - 1] ^= 1;
    write_file(a / "models/shadow_0001.ckpt", bytes);
    CHECK_THROWS_AS(load_ensemble(a.path()), FormatError);
  }
  SUBCASE("tampered manifest") {
    write_file(a / "manifest.txt", read_file(a / "manifest.txt") + "x=1\n");
    CHECK_THROWS_AS(load_ensemble(a.path()), FormatError);
  }
}

TEST_CASE("zero-parameter shadows put phi at the clamp floor") {
  const auto ds = toy(10);
  auto spec = small_spec(2);
  ShadowEnsemble ens;
  ens.dataset = ds;
  ens.population = ds->keys_with_split(Split::train);
  ens.spec = spec;
  ens.models.assign(2, RecModel(ModelFamily::mf_logit, ds->num_users(), ds->num_items(), spec.train));
  for (double p : ensemble_phi(ens, ens.population[0]))
    CHECK(p == doctest::Approx(std::log(1e-6 / (1 - 1e-6))).epsilon(1e-12));
}

TEST_CASE("overfit shadows separate IN from OUT") {
  const auto ds = toy();
  auto spec = small_spec(8);
  spec.train.max_epochs = 40;
  spec.train.learning_rate = 0.5;
  const auto ens = build_ensemble(ds, spec);
  double in_sum = 0;
  std::size_t in_n = 0;
  for (std::size_t r = 0; r < ens.population.size(); ++r) {
    const auto phis = ensemble_phi(ens, ens.population[r]);
    for (std::size_t j = 0; j < spec.m; ++j)
      if (ens.membership.contains(j, r)) {
        in_sum += phis[j];
        ++in_n;
      }
  }
  CHECK(in_sum / static_cast<double>(in_n) > ens.out_dist.mu);
}

TEST_CASE("ensemble errors") {
  const auto ds = toy(10);
  auto spec = small_spec();
  spec.m = 1;
  CHECK_THROWS_AS(build_ensemble(ds, spec), Error);
  CHECK_THROWS_AS(build_ensemble(ds, {}, small_spec()), PreconditionError);
  // Too few OUT values to fit.
  const auto pop = ds->keys_with_split(Split::train);
  CHECK_THROWS_AS(build_ensemble(ds, std::vector<InteractionKey>(pop.begin(), pop.begin() + 10), small_spec(2)),
                  InsufficientSamplesError);
}
