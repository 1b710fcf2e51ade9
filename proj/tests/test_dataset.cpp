#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <climits>
#include <map>
#include <set>

#include "recps/dataset.hpp"
#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/toy.hpp"
#include "support.hpp"

using namespace recps;
using testing::row;

TEST_CASE("empty input raises EmptyDatasetError") {
  CHECK_THROWS_AS(ingest_text("", InputFormat::tsv), EmptyDatasetError);
  CHECK_THROWS_AS(ingest_text("user\titem\trating\ttimestamp\n", InputFormat::tsv),
                  EmptyDatasetError);
}

TEST_CASE("duplicate pair collapses and keeps the latest timestamp") {
  const auto ds = ingest_text("a,x,1,10\nb,y,2,11\na,x,5,30\n", InputFormat::csv);
  REQUIRE(ds.size() == 2);
  CHECK(ds.interaction(0).user_id == "a");
  CHECK(*ds.interaction(0).rating == 5.0);
  CHECK(*ds.interaction(0).timestamp == 30);
}

TEST_CASE("malformed rows report their line number") {
  try {
    ingest_text("u1\ti1\t4\t100\nu2\n", InputFormat::tsv);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(ingest_text("u1\ti1\t9\t100\n", InputFormat::tsv), ParseError);
  CHECK_THROWS_AS(ingest_text("u1\ti1\tabc\t100\n", InputFormat::tsv), ParseError);
}

TEST_CASE("movielens dat variant") {
  const auto ds = ingest_text("1::1193::5::978300760\n1::661::3::978302109\n2::1193::4::978298413\n",
                              InputFormat::movielens_dat);
  CHECK(ds.num_users() == 2);
  CHECK(ds.num_items() == 2);
  CHECK(ds.users().key(1) == "2");
  CHECK(ds.items().key(0) == "1193");
}

TEST_CASE("missing file is a configuration error") {
  CHECK_THROWS_AS(ingest("/nonexistent/ratings.tsv", InputFormat::tsv), ConfigError);
}

TEST_CASE("vocabularies follow first appearance") {
  const auto ds = InteractionDataset::from_interactions(
      {row("u2", "b", 1), row("u1", "a", 2), row("u2", "a", 3)});
  CHECK(ds.users().keys() == std::vector<std::string>{"u2", "u1"});
  CHECK(ds.items().keys() == std::vector<std::string>{"b", "a"});
  CHECK(ds.key(2) == InteractionKey{0, 1});
}

TEST_CASE("filter keeps users with strictly more than min_count") {
  std::vector<Interaction> rows;
  const std::map<std::string, int> counts{{"a", 2}, {"b", 3}, {"c", 4}, {"d", 5}, {"e", 7}};
  std::int64_t t = 0;
  for (const auto& [u, n] : counts)
    for (int k = 0; k < n; ++k) rows.push_back(row(u, "i" + std::to_string(k + (u == "e" ? 10 : 0)), t++));
  const auto ds = InteractionDataset::from_interactions(rows);

  const auto f = filter_min_interactions(ds, 3);
  std::set<std::string> kept(f.users().keys().begin(), f.users().keys().end());
  std::set<std::string> expect;
  for (const auto& [u, n] : counts)
    if (n >= 4) expect.insert(u);
  CHECK(kept == expect);
  // Items only used by dropped users disappear; e's block is i10..i16.
  CHECK(f.num_items() == 5 + 7);
  CHECK(filter_min_interactions(f, 3).interactions().size() == f.size());
  CHECK(to_canonical(filter_min_interactions(f, 3)) == to_canonical(f));
  CHECK(filter_min_interactions(ds, 0).size() == ds.size());

  std::vector<Interaction> nineteen;
  for (int k = 0; k < 19; ++k) nineteen.push_back(row("u", "i" + std::to_string(k), k));
  CHECK(filter_min_interactions(InteractionDataset::from_interactions(nineteen), 20).empty());
}

TEST_CASE("leave-two-out holds out the two most recent") {
  const auto ds = InteractionDataset::from_interactions(
      {row("u", "c", 3), row("u", "a", 1), row("u", "b", 2), row("v", "a", 5), row("v", "b", 5),
       row("v", "c", 5)});
  const auto s = split_leave_two_out(ds);
  auto split_of = [&](const std::string& u, const std::string& i) {
    return s.split(*s.find({*s.users().find(u), *s.items().find(i)}));
  };
  CHECK(split_of("u", "a") == Split::train);
  CHECK(split_of("u", "b") == Split::validation);
  CHECK(split_of("u", "c") == Split::test);
  // Equal timestamps fall back to input order.
  CHECK(split_of("v", "a") == Split::train);
  CHECK(split_of("v", "b") == Split::validation);
  CHECK(split_of("v", "c") == Split::test);
}

TEST_CASE("leave-two-out rejects users with fewer than three interactions") {
  const auto ds = InteractionDataset::from_interactions(
      {row("ok", "a", 1), row("ok", "b", 2), row("ok", "c", 3), row("short", "a", 1), row("short", "b", 2)});
  try {
    split_leave_two_out(ds);
    FAIL("expected PreconditionError");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("short") != std::string::npos);
  }
}

TEST_CASE("split partitions every user of the toy set") {
  const auto s = split_leave_two_out(make_toy_dataset({.users = 10, .items = 40}));
  for (UserId u = 0; u < s.num_users(); ++u) {
    std::map<Split, int> n;
    std::int64_t last_train = INT64_MIN, val_t = 0, test_t = 0;
    for (std::size_t r : s.rows_by_user()[u]) {
      ++n[s.split(r)];
      const auto t = *s.interaction(r).timestamp;
      if (s.split(r) == Split::train) last_train = std::max(last_train, t);
      if (s.split(r) == Split::validation) val_t = t;
      if (s.split(r) == Split::test) test_t = t;
    }
    CHECK(n[Split::validation] == 1);
    CHECK(n[Split::test] == 1);
    CHECK(n[Split::train] + 2 == static_cast<int>(s.rows_by_user()[u].size()));
    CHECK(last_train <= val_t);
    CHECK(val_t <= test_t);
  }
}

TEST_CASE("negative sampling: counts, purity, determinism") {
  const auto s = split_leave_two_out(make_toy_dataset({.users = 30, .items = 100}));
  const auto ex = sample_negatives(s, 4, 11);
  std::map<UserId, std::set<ItemId>> observed;
  for (std::size_t r = 0; r < s.size(); ++r) observed[s.key(r).user].insert(s.key(r).item);
  std::map<UserId, int> pos, neg;
  for (const auto& e : ex) {
    if (e.label) {
      ++pos[e.user];
    } else {
      ++neg[e.user];
      CHECK(observed[e.user].count(e.item) == 0);
    }
  }
  for (UserId u = 0; u < s.num_users(); ++u) {
    CHECK(pos[u] == static_cast<int>(s.rows_by_user()[u].size()) - 2);
    CHECK(neg[u] == 4 * pos[u]);
  }
  CHECK(sample_negatives(s, 4, 11) == ex);
  CHECK(sample_negatives(s, 4, 12) != ex);
}

TEST_CASE("negative sampling: forced choice and exhaustion") {
  // Every item but 3 is observed (0 as the train positive, the rest held out).
  const std::vector<std::vector<ItemId>> pos{{0}};
  const std::vector<std::vector<ItemId>> seen{{1, 2, 4}};
  const auto ex = sample_negatives(5, pos, seen, 1, 3);
  REQUIRE(ex.size() == 2);
  CHECK(ex[1].item == 3);
  CHECK(ex[1].label == 0);
  CHECK_THROWS_AS(sample_negatives(5, pos, seen, 2, 3), SamplingError);

  // 8 train positives at ratio 4 give 32 negatives.
  std::vector<std::vector<ItemId>> eight{{0, 1, 2, 3, 4, 5, 6, 7}};
  const auto e8 = sample_negatives(100, eight, {}, 4, 1);
  CHECK(std::count_if(e8.begin(), e8.end(), [](const auto& e) { return e.label == 0; }) == 32);
}

TEST_CASE("canonical round trip keeps vocabularies and splits") {
  const auto s = split_leave_two_out(make_toy_dataset({.users = 20, .items = 30}));
  testing::TempDir dir("ds");
  write_canonical(s, dir / "d.tsv");
  const auto back = ingest(dir / "d.tsv", InputFormat::canonical);
  CHECK(back.users() == s.users());
  CHECK(back.items() == s.items());
  REQUIRE(back.size() == s.size());
  for (std::size_t r = 0; r < s.size(); ++r) {
    CHECK(back.split(r) == s.split(r));
    CHECK(back.interaction(r) == s.interaction(r));
  }
  CHECK(to_canonical(back) == to_canonical(s));
}

TEST_CASE("without_rows keeps dense ids") {
  const auto s = split_leave_two_out(make_toy_dataset({.users = 10, .items = 30}));
  const std::vector<std::size_t> drop{0, 1, 2};
  const auto r = s.without_rows(drop);
  CHECK(r.size() == s.size() - 3);
  CHECK(r.users() == s.users());
  CHECK(r.items() == s.items());
  CHECK_FALSE(r.find(s.key(0)).has_value());
}

TEST_CASE("toy generator is seeded") {
  const auto a = make_toy_dataset();
  CHECK(a.num_users() == 200);
  CHECK(a.num_items() <= 100);
  CHECK(to_canonical(a) == to_canonical(make_toy_dataset()));
  CHECK(to_canonical(a) != to_canonical(make_toy_dataset({.seed = 8})));
}
