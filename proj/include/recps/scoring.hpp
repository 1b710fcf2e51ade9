#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recps/dataset.hpp"
#include "recps/shadow.hpp"

namespace recps {

/// Maximum ln(TPR/FPR) over thresholds taken from the OUT models' Λ values.
/// A model is predicted IN when its Λ is strictly above the threshold;
/// thresholds with FPR = 0 are skipped, and the result starts at 0.
/// `in_flags[j]` is 1 when the interaction is in model j's training set.
/// Throws DegenerateMembershipError when all flags agree.
double max_log_ratio(std::span<const double> lambdas, std::span<const std::uint8_t> in_flags);

/// ln(TPR/FPR) at one fixed threshold (0 when FPR = 0). Diagnostic only.
double log_ratio_at(std::span<const double> lambdas, std::span<const std::uint8_t> in_flags,
                    double threshold);

/// Λ_j for every shadow model and the ground-truth membership flags.
struct ShadowEvidence {
  std::vector<double> lambdas;
  std::vector<std::uint8_t> in_flags;
};

ShadowEvidence shadow_evidence(const ShadowEnsemble& ensemble, InteractionKey k);

/// Privacy score of one audited interaction. Throws std::out_of_range if
/// (user, item) is not in the ensemble's population.
double score_interaction(const ShadowEnsemble& ensemble, InteractionKey k);

/// Arithmetic mean of a user's interaction scores.
double score_user(std::span<const double> interaction_scores);

/// Recomputes and averages the scores of `interactions`.
double score_user(const ShadowEnsemble& ensemble, UserId user,
                  std::span<const InteractionKey> interactions);

struct UserQuery {
  std::vector<InteractionKey> interactions;
  std::vector<double> scores;
  double user_score = 0.0;
};

/// Scores every audited interaction of `user` and their mean.
UserQuery score_query(const ShadowEnsemble& ensemble, UserId user);

struct InteractionScore {
  UserId user = 0;
  ItemId item = 0;
  double score = 0.0;
};

struct UserScore {
  UserId user = 0;
  double score = 0.0;
  std::size_t n_interactions = 0;
};

struct ResidualInteraction {
  UserId user = 0;
  ItemId item = 0;
  std::string reason;
};

/// Per-interaction and per-user scores. Interactions that cannot be scored
/// (all-IN or all-OUT membership) are listed in `residual` and excluded
/// from their user's mean.
struct ScoreTable {
  std::vector<InteractionScore> interactions;  // by user, then population order
  std::vector<UserScore> users;                // ascending user id
  std::vector<ResidualInteraction> residual;
  std::string ensemble_ref;  // manifest hash
  std::chrono::system_clock::time_point created_at;

  std::optional<double> user_score(UserId user) const;
  std::vector<InteractionScore> user_interactions(UserId user) const;
};

/// Scores `users` (every user with audited interactions when empty),
/// parallel over users, assembled in ascending user order.
ScoreTable build_score_table(const ShadowEnsemble& ensemble, std::span<const UserId> users = {},
                             int workers = 1, std::string ensemble_ref = {});

/// interactions.csv (user,item,score), users.csv (user,score,n_interactions),
/// residual.csv (user,item,reason); each starts with a provenance comment.
void write_score_table(const ScoreTable& table, const InteractionDataset& ds,
                       const std::filesystem::path& dir);

ScoreTable read_score_table(const InteractionDataset& ds, const std::filesystem::path& dir);

}  // namespace recps
