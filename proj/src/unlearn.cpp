#include "recps/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recps/attack.hpp"
#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/kv.hpp"
#include "recps/rng.hpp"
#include "recps/train.hpp"

namespace recps {

std::string_view to_string(RemovalMode m) {
  switch (m) {
    case RemovalMode::user_level: return "user-level";
    case RemovalMode::interaction_level: return "interaction-level";
    case RemovalMode::random_interaction: return "random-interaction";
  }
  return "unknown";
}

RemovalMode parse_removal_mode(std::string_view name) {
  if (name == "user-level" || name == "user") return RemovalMode::user_level;
  if (name == "interaction-level" || name == "interaction") return RemovalMode::interaction_level;
  if (name == "random-interaction" || name == "random") return RemovalMode::random_interaction;
  throw ConfigError("unknown removal mode '" + std::string(name) + "'");
}

void RemovalPlan::validate() const {
  if (!(target_user_fraction > 0.0 && target_user_fraction <= 1.0))
    throw ConfigError("target_user_fraction must be in (0, 1]");
  if (!(interaction_fraction > 0.0 && interaction_fraction <= 1.0))
    throw ConfigError("interaction_fraction must be in (0, 1]");
}

namespace {

std::size_t ceil_fraction(double fraction, std::size_t n) {
  const double x = fraction * static_cast<double>(n);
  auto c = static_cast<std::size_t>(std::ceil(x - 1e-9));
  return std::clamp<std::size_t>(c, 1, n);
}

}  // namespace

RemovalSet plan_removal(const ScoreTable& table, const RemovalPlan& plan) {
  plan.validate();
  if (table.users.empty() || table.interactions.empty())
    throw PreconditionError("cannot plan a removal from an empty score table");
  std::vector<UserScore> ranked = table.users;
  std::sort(ranked.begin(), ranked.end(), [](const UserScore& a, const UserScore& b) {
    return a.score > b.score || (a.score == b.score && a.user < b.user);
  });
  RemovalSet set;
  const std::size_t n_target = ceil_fraction(plan.target_user_fraction, ranked.size());
  for (std::size_t k = 0; k < n_target; ++k) set.targeted_users.push_back(ranked[k].user);
  set.theta = ranked[n_target - 1].score;

  std::vector<std::vector<InteractionScore>> by_user;
  std::vector<UserId> order(set.targeted_users);
  std::sort(order.begin(), order.end());
  for (UserId u : order) {
    auto scored = table.user_interactions(u);
    if (plan.mode == RemovalMode::user_level) {
      // Unscorable interactions go too: the whole user leaves.
      for (const auto& s : scored) set.removed.push_back({s.user, s.item});
      for (const auto& r : table.residual)
        if (r.user == u) set.removed.push_back({r.user, r.item});
      continue;
    }
    if (scored.empty()) continue;
    const std::size_t count = ceil_fraction(plan.interaction_fraction, scored.size());
    if (plan.mode == RemovalMode::interaction_level) {
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.score > b.score || (a.score == b.score && a.item < b.item);
      });
    } else {
      Rng rng(derive_seed(plan.seed, {salt("random-removal"), u}));
      for (std::size_t k = 0; k < count; ++k)
        std::swap(scored[k], scored[k + rng.index(scored.size() - k)]);
    }
    for (std::size_t k = 0; k < count; ++k) set.removed.push_back({scored[k].user, scored[k].item});
  }
  return set;
}

std::size_t ScoreHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ScoreHistogram score_histogram(std::span<const double> values, double bin_width) {
  if (!(bin_width > 0)) throw PreconditionError("bin width must be positive");
  double max_abs = 0;
  for (double v : values) max_abs = std::max(max_abs, std::abs(v));
  const auto half = std::max<long long>(1, static_cast<long long>(std::ceil(max_abs / bin_width)));
  ScoreHistogram h;
  h.bin_width = bin_width;
  h.counts.assign(static_cast<std::size_t>(2 * half), 0);
  for (long long b = 0; b < 2 * half; ++b)
    h.bin_starts.push_back(static_cast<double>(b - half) * bin_width);
  for (double v : values) {
    auto b = static_cast<long long>(std::floor(v / bin_width)) + half;
    b = std::clamp<long long>(b, 0, 2 * half - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

RecModel train_full_model(const InteractionDataset& ds, const EnsembleSpec& spec) {
  const auto examples =
      sample_negatives(ds, spec.negative_ratio, derive_seed(spec.seed, {salt("full-model-negatives")}));
  TrainConfig cfg = spec.train;
  cfg.seed = derive_seed(spec.seed, {salt("full-model")});
  return train(spec.family, ds, examples, cfg);
}

ExperimentBaseline make_baseline(const ShadowEnsemble& ensemble, std::size_t hr_k, int workers) {
  ExperimentBaseline b;
  b.dataset = ensemble.dataset;
  b.spec = ensemble.spec;
  b.hr_k = hr_k;
  b.table = build_score_table(ensemble, {}, workers);
  b.hr_before = hit_rate_at_k(train_full_model(*b.dataset, b.spec), *b.dataset, hr_k);
  return b;
}

RemovalReport run_removal_experiment(const ExperimentBaseline& baseline, const RemovalPlan& plan,
                                     int workers) {
  const InteractionDataset& ds = *baseline.dataset;
  RemovalReport rep;
  rep.plan = plan;
  rep.removal = plan_removal(baseline.table, plan);
  rep.hr_before = baseline.hr_before;
  rep.targeted_users = rep.removal.targeted_users.size();

  std::vector<std::size_t> rows;
  for (const auto& k : rep.removal.removed) {
    const auto r = ds.find(k);
    if (!r || ds.split(*r) != Split::train)
      throw PreconditionError("removal set contains an interaction outside the train split");
    rows.push_back(*r);
  }
  auto reduced = std::make_shared<InteractionDataset>(ds.without_rows(rows));

  rep.hr_after = hit_rate_at_k(train_full_model(*reduced, baseline.spec), ds, baseline.hr_k);
  rep.hr_drop_pct =
      baseline.hr_before > 0 ? 100.0 * (baseline.hr_before - rep.hr_after) / baseline.hr_before : 0.0;

  const auto remaining = reduced->keys_with_split(Split::train);
  const auto ensemble = build_ensemble(reduced, remaining, baseline.spec, workers);
  rep.after = build_score_table(ensemble, {}, workers);

  for (UserId u : rep.removal.targeted_users) {
    if (ensemble.user_interactions(u).empty()) {
      ++rep.emptied_users;
      ++rep.reduced_users;
      continue;
    }
    const auto s = rep.after.user_score(u);
    if (s && *s < rep.removal.theta) ++rep.reduced_users;
  }
  rep.reduced_user_fraction =
      static_cast<double>(rep.reduced_users) / static_cast<double>(rep.targeted_users);

  for (const auto& before : baseline.table.users) {
    const auto now = rep.after.user_score(before.user);
    if (!now) continue;
    rep.score_diffs.push_back(*now - before.score);
  }
  rep.rescored_users = rep.score_diffs.size();
  rep.histogram = score_histogram(rep.score_diffs);
  return rep;
}

void write_removal_report(const RemovalReport& rep, const InteractionDataset& ds,
                          const std::filesystem::path& dir) {
  KeyValues plan;
  plan.set("mode", std::string(to_string(rep.plan.mode)));
  plan.set("target_user_fraction", format_double(rep.plan.target_user_fraction));
  plan.set("interaction_fraction", format_double(rep.plan.interaction_fraction));
  plan.set("seed", std::to_string(rep.plan.seed));
  plan.set("theta", format_double(rep.removal.theta));
  std::string users;
  for (UserId u : rep.removal.targeted_users) users += (users.empty() ? "" : ",") + ds.users().key(u);
  plan.set("targeted_users", users);
  write_file(dir / "plan.txt", plan.to_string());

  KeyValues metrics;
  metrics.set("hr_before", format_double(rep.hr_before));
  metrics.set("hr_after", format_double(rep.hr_after));
  metrics.set("hr_drop_pct", format_double(rep.hr_drop_pct));
  metrics.set("reduced_user_fraction", format_double(rep.reduced_user_fraction));
  metrics.set("targeted_users", std::to_string(rep.targeted_users));
  metrics.set("reduced_users", std::to_string(rep.reduced_users));
  metrics.set("emptied_users", std::to_string(rep.emptied_users));
  metrics.set("removed_interactions", std::to_string(rep.removal.removed.size()));
  metrics.set("rescored_users", std::to_string(rep.rescored_users));
  write_file(dir / "metrics.txt", metrics.to_string());

  std::string hist = "bin_start,frequency\n";
  for (std::size_t b = 0; b < rep.histogram.counts.size(); ++b)
    hist += format_double(rep.histogram.bin_starts[b]) + "," + std::to_string(rep.histogram.counts[b]) + "\n";
  write_file(dir / "histogram.csv", hist);

  std::string removed = "user,item\n";
  for (const auto& k : rep.removal.removed)
    removed += ds.users().key(k.user) + "," + ds.items().key(k.item) + "\n";
  write_file(dir / "removed.csv", removed);
}

}  // namespace recps
