#include "recps/attack.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "recps/errors.hpp"
#include "recps/kv.hpp"
#include "recps/rng.hpp"
#include "recps/stats.hpp"

namespace recps {

double attack_statistic(const ShadowEnsemble& ensemble, const RecModel& target, InteractionKey k) {
  if (!ensemble.dataset || target.num_users() != ensemble.dataset->num_users() ||
      target.num_items() != ensemble.dataset->num_items())
    throw PreconditionError("target model vocabulary does not match the ensemble dataset");
  return stats::lambda_statistic(stats::phi(target.predict(k.user, k.item)), ensemble.out_dist);
}

double RocCurve::tpr_at(double max_fpr) const {
  double best = 0.0;
  for (const auto& p : points)
    if (p.fpr <= max_fpr) best = std::max(best, p.tpr);
  return best;
}

RocCurve roc(std::span<const MembershipStatistic> stats, std::string score_name) {
  std::size_t pos = 0;
  for (const auto& s : stats) pos += s.member;
  const std::size_t neg = stats.size() - pos;
  if (pos == 0 || neg == 0) throw PreconditionError("ROC needs both members and non-members");
  std::vector<MembershipStatistic> sorted(stats.begin(), stats.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.statistic > b.statistic; });
  RocCurve curve;
  curve.score_name = std::move(score_name);
  curve.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < sorted.size();) {
    const double v = sorted[k].statistic;
    for (; k < sorted.size() && sorted[k].statistic == v; ++k) (sorted[k].member ? tp : fp) += 1;
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  double auc = 0.0;
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& a = curve.points[k - 1];
    const auto& b = curve.points[k];
    auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  curve.auc = auc;
  return curve;
}

double hit_rate_at_k(const RecModel& model, const InteractionDataset& ds, std::size_t k) {
  const auto test_rows = ds.rows_with_split(Split::test);
  if (!ds.has_splits() || test_rows.empty()) throw PreconditionError("hit rate needs a test split");
  if (model.num_items() != ds.num_items() || model.num_users() != ds.num_users())
    throw PreconditionError("model vocabulary does not match dataset");
  std::vector<std::uint8_t> blocked(ds.num_items());
  std::size_t hits = 0;
  for (std::size_t r : test_rows) {
    const auto t = ds.key(r);
    std::fill(blocked.begin(), blocked.end(), 0);
    for (std::size_t o : ds.rows_by_user()[t.user]) {
      const Split s = ds.split(o);
      if (s == Split::train || s == Split::validation) blocked[ds.key(o).item] = 1;
    }
    blocked[t.item] = 0;
    const double pt = model.predict(t.user, t.item);
    std::size_t rank = 0;
    for (ItemId c = 0; c < ds.num_items(); ++c) {
      if (blocked[c] || c == t.item) continue;
      const double pc = model.predict(t.user, c);
      if (pc > pt || (pc == pt && c < t.item)) ++rank;
    }
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(test_rows.size());
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : curve.points) out += format_double(p.fpr) + "," + format_double(p.tpr) + "\n";
  return out;
}

std::string_view to_string(NonMemberPool p) {
  return p == NonMemberPool::unseen_users ? "unseen-users" : "all";
}

NonMemberPool parse_nonmember_pool(std::string_view name) {
  if (name == "unseen-users") return NonMemberPool::unseen_users;
  if (name == "all") return NonMemberPool::all;
  throw ConfigError("unknown non-member pool '" + std::string(name) + "' (unseen-users, all)");
}

AttackPopulation sample_attack_population(const InteractionDataset& ds,
                                          std::span<const InteractionKey> target_members,
                                          std::size_t count, std::uint64_t seed,
                                          NonMemberPool pool) {
  std::unordered_set<std::uint64_t> in;
  std::vector<std::uint8_t> seen(ds.num_users(), 0);
  for (const auto& k : target_members) {
    in.insert(pack(k));
    seen.at(k.user) = 1;
  }
  std::vector<InteractionKey> members(target_members.begin(), target_members.end());
  std::vector<InteractionKey> candidates;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto k = ds.key(r);
    if (in.count(pack(k))) continue;
    if (pool == NonMemberPool::unseen_users && seen[k.user]) continue;
    candidates.push_back(k);
  }
  const std::size_t n = std::min({count, members.size(), candidates.size()});
  auto take = [&](std::vector<InteractionKey>& v, std::uint64_t tag) {
    Rng rng(derive_seed(seed, {tag}));
    for (std::size_t k = 0; k < n; ++k) std::swap(v[k], v[k + rng.index(v.size() - k)]);
    v.resize(n);
  };
  take(members, salt("members"));
  take(candidates, salt("nonmembers"));
  return {std::move(members), std::move(candidates)};
}

AttackResult run_attack(const ShadowEnsemble& ensemble, const RecModel& target,
                        const AttackPopulation& population) {
  AttackResult res;
  for (const auto& k : population.members)
    res.statistics.push_back({attack_statistic(ensemble, target, k), true});
  for (const auto& k : population.nonmembers)
    res.statistics.push_back({attack_statistic(ensemble, target, k), false});
  res.curve = roc(res.statistics, "reclira-lambda");
  std::size_t tp = 0, fp = 0;
  for (const auto& s : res.statistics) (s.member ? tp : fp) += s.statistic > 0.5;
  res.global_tpr = static_cast<double>(tp) / static_cast<double>(population.members.size());
  res.global_fpr = static_cast<double>(fp) / static_cast<double>(population.nonmembers.size());
  return res;
}

}  // namespace recps
