#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recps/dataset.hpp"
#include "recps/model.hpp"
#include "recps/shadow.hpp"

namespace recps {

/// Offline LiRA statistic of the target's output for one interaction,
/// against the ensemble's shared OUT Gaussian.
double attack_statistic(const ShadowEnsemble& ensemble, const RecModel& target, InteractionKey k);

struct MembershipStatistic {
  double statistic = 0.0;
  bool member = false;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) ... (1,1), non-decreasing in both
  double auc = 0.0;
  std::string score_name;

  /// Highest TPR among operating points with FPR <= max_fpr.
  double tpr_at(double max_fpr) const;
};

inline constexpr double kReadoutFprs[] = {1e-4, 1e-3, 1e-2, 1e-1};

/// Exact ROC: one point per distinct statistic value (descending), AUC by
/// the trapezoid rule. Throws PreconditionError unless both classes occur.
RocCurve roc(std::span<const MembershipStatistic> stats, std::string score_name = "lambda");

/// Fraction of users whose test item ranks within the top k among items
/// outside the user's train and validation interactions.
double hit_rate_at_k(const RecModel& model, const InteractionDataset& ds, std::size_t k);

/// `fpr,tpr` rows with a header.
std::string roc_csv(const RocCurve& curve);

struct AttackPopulation {
  std::vector<InteractionKey> members;
  std::vector<InteractionKey> nonmembers;
};

/// Where non-members come from.
enum class NonMemberPool {
  unseen_users,  // interactions of users with no interaction in the target's training set
  all,           // every interaction outside the training set, held-out items included
};

std::string_view to_string(NonMemberPool p);
NonMemberPool parse_nonmember_pool(std::string_view name);

/// Balanced seeded sample: min(count, |members|, |candidates|) from each
/// class, drawn from the target's training set and from `pool`.
AttackPopulation sample_attack_population(const InteractionDataset& ds,
                                          std::span<const InteractionKey> target_members,
                                          std::size_t count, std::uint64_t seed,
                                          NonMemberPool pool = NonMemberPool::unseen_users);

struct AttackResult {
  RocCurve curve;
  std::vector<MembershipStatistic> statistics;
  double global_tpr = 0.0;  // fixed Λ > 0.5 baseline
  double global_fpr = 0.0;
};

AttackResult run_attack(const ShadowEnsemble& ensemble, const RecModel& target,
                        const AttackPopulation& population);

}  // namespace recps
