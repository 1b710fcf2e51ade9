#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "recps/kv.hpp"
#include "recps/shadow.hpp"

namespace recps {

enum class AuditMode {
  self,    // shadows sample the full training set D
  attack,  // shadows and target use disjoint user populations
};

/// Every knob of a pipeline run. Serializes to a flat key=value file; every
/// key can be overridden on the command line as --<key>.
struct RunConfig {
  std::string dataset;
  std::string format = "tsv";
  std::size_t min_count = 20;
  std::string family = "lightgcn";
  TrainConfig train;
  int negative_ratio = 4;
  std::size_t m = 64;
  std::uint64_t seed = 0;
  std::size_t out_cap = 10000;
  std::string mode = "self";
  double shadow_user_fraction = 0.2;
  bool target = true;
  std::size_t eval_count = 2000;
  std::string nonmembers = "unseen-users";  // attack non-member pool: unseen-users | all
  std::size_t hr_k = 100;
  std::string removal_modes = "user-level,interaction-level,random-interaction";
  double target_user_fraction = 0.05;
  double interaction_fraction = 0.5;
  int workers = 1;
  std::string out;

  static const std::vector<std::string>& keys();
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  static RunConfig from_kv(const KeyValues& kv);
  static RunConfig load(const std::filesystem::path& path);
  KeyValues to_kv() const;

  EnsembleSpec ensemble_spec() const;
  AuditMode audit_mode() const;
  void validate() const;
};

/// Ingest, filter, split, build the shadow ensemble (and, when enabled, a
/// target model with known membership under <out>/target). Returns the
/// ensemble directory.
std::filesystem::path cmd_prepare(const RunConfig& cfg);

/// Writes the score table for `users` ("all" or comma-separated user keys)
/// into `out`. Refuses to run when the manifest hash does not verify.
void cmd_score(const std::filesystem::path& ensemble_dir, std::string_view users,
               const std::filesystem::path& out, int workers);

/// Runs RecLiRA against the target and writes roc.csv and metrics.txt.
/// Returns the AUC.
double cmd_attack(const std::filesystem::path& ensemble_dir, const std::filesystem::path& target_dir,
                  const RunConfig& cfg, const std::filesystem::path& out);

/// Baseline plus one report directory per configured removal arm.
void cmd_unlearn(const RunConfig& cfg, const std::filesystem::path& ensemble_dir,
                 const std::filesystem::path& out);

/// Human-readable summary of any mix of prepare/score/attack/unlearn
/// output directories.
std::string cmd_report(const std::vector<std::filesystem::path>& dirs);

}  // namespace recps
