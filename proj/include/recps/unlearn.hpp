#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "recps/dataset.hpp"
#include "recps/scoring.hpp"
#include "recps/shadow.hpp"

namespace recps {

enum class RemovalMode { user_level, interaction_level, random_interaction };

std::string_view to_string(RemovalMode m);
RemovalMode parse_removal_mode(std::string_view name);

struct RemovalPlan {
  RemovalMode mode = RemovalMode::interaction_level;
  double target_user_fraction = 0.05;
  double interaction_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RemovalSet {
  std::vector<UserId> targeted_users;  // descending baseline score
  double theta = 0.0;                  // lowest baseline score among them
  std::vector<InteractionKey> removed;
};

/// Targets the top ceil(fraction * |users|) users by score (ties: lower
/// user id first), then selects what to remove per mode:
///  - user-level: every interaction of a targeted user, residual ones included;
///  - interaction-level: each targeted user's ceil(f * n) highest-scored
///    interactions, n counting scored interactions only (ties: lower item
///    id first);
///  - random-interaction: the same count per user, uniformly at random.
RemovalSet plan_removal(const ScoreTable& table, const RemovalPlan& plan);

/// Fixed-width bins over a symmetric range [-R, R), R the smallest multiple
/// of the width covering every value (at least one bin per side).
struct ScoreHistogram {
  double bin_width = 0.005;
  std::vector<double> bin_starts;
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

ScoreHistogram score_histogram(std::span<const double> values, double bin_width = 0.005);

/// State shared by every removal arm: the full dataset, ensemble settings,
/// baseline score table and utility of the model trained on all data.
struct ExperimentBaseline {
  std::shared_ptr<const InteractionDataset> dataset;
  EnsembleSpec spec;
  ScoreTable table;
  double hr_before = 0.0;
  std::size_t hr_k = 100;
};

/// Model trained on every train interaction of `ds` with the ensemble's
/// family and settings (seeded from spec.seed, disjoint from shadow seeds).
RecModel train_full_model(const InteractionDataset& ds, const EnsembleSpec& spec);

ExperimentBaseline make_baseline(const ShadowEnsemble& ensemble, std::size_t hr_k, int workers = 1);

struct RemovalReport {
  RemovalPlan plan;
  RemovalSet removal;
  double hr_before = 0.0;
  double hr_after = 0.0;
  double hr_drop_pct = 0.0;
  double reduced_user_fraction = 0.0;
  std::size_t targeted_users = 0;
  std::size_t emptied_users = 0;   // targeted users left with no training data
  std::size_t reduced_users = 0;   // includes emptied users
  std::size_t rescored_users = 0;  // users with remaining interactions (histogram mass)
  std::vector<double> score_diffs;
  ScoreHistogram histogram;
  ScoreTable after;
};

/// Removes the planned interactions, retrains the model and a fresh shadow
/// ensemble from scratch on what remains, and compares against the
/// baseline. Utility is measured on the original test split for every user
/// (removed users become cold-start). Users emptied by the removal count as
/// reduced below theta and are reported in `emptied_users`.
RemovalReport run_removal_experiment(const ExperimentBaseline& baseline, const RemovalPlan& plan,
                                     int workers = 1);

/// plan.txt, metrics.txt, histogram.csv (bin_start,frequency), removed.csv.
void write_removal_report(const RemovalReport& report, const InteractionDataset& ds,
                          const std::filesystem::path& dir);

}  // namespace recps
