#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "recps/dataset.hpp"
#include "recps/kv.hpp"
#include "recps/model.hpp"
#include "recps/stats.hpp"

namespace recps {

/// m x n bit matrix; bit (j, r) set when population interaction r is in
/// shadow set S_j. Rows are stored as packed bytes, LSB first.
class MembershipMatrix {
 public:
  MembershipMatrix() = default;
  MembershipMatrix(std::size_t models, std::size_t interactions);

  std::size_t models() const noexcept { return models_; }
  std::size_t interactions() const noexcept { return interactions_; }
  bool contains(std::size_t model, std::size_t r) const {
    return (bytes_[model * stride_ + r / 8] >> (r % 8)) & 1u;
  }
  void set(std::size_t model, std::size_t r, bool in);
  std::size_t in_count(std::size_t r) const;

  /// "RECPSMEM" magic, version, m, n, then the row-major bitset.
  std::string serialize() const;
  static MembershipMatrix deserialize(std::string_view bytes);

  friend bool operator==(const MembershipMatrix&, const MembershipMatrix&) = default;

 private:
  std::size_t models_ = 0;
  std::size_t interactions_ = 0;
  std::size_t stride_ = 0;
  std::vector<std::uint8_t> bytes_;
};

/// Bernoulli(1/2) membership per (model, interaction). Each bit is a seeded
/// hash of (seed, model, user, item), so an interaction keeps its bits
/// when other interactions are added or removed.
MembershipMatrix sample_shadow_datasets(std::span<const InteractionKey> population,
                                        std::size_t m, std::uint64_t seed);

struct EnsembleSpec {
  ModelFamily family = ModelFamily::mf_logit;
  TrainConfig train;
  std::size_t m = 64;
  std::uint64_t seed = 0;
  std::size_t out_cap = 10000;
  int negative_ratio = 4;

  void validate() const;
};

struct ShadowEnsemble {
  std::shared_ptr<const InteractionDataset> dataset;
  std::vector<InteractionKey> population;  // D: interactions being audited
  EnsembleSpec spec;
  MembershipMatrix membership;
  std::vector<RecModel> models;
  stats::OutDistribution out_dist;

  /// Position of (user, item) within `population`.
  std::optional<std::size_t> index_of(InteractionKey k) const;
  /// Population positions of a user's interactions, in population order.
  std::span<const std::size_t> user_interactions(UserId user) const;
  void rebuild_index();

 private:
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<std::vector<std::size_t>> by_user_;
};

/// Per-model seed: hash(master seed, model index).
std::uint64_t shadow_seed(std::uint64_t master, std::size_t model);

/// Positives of S_j plus negatives drawn against S_j's observed items.
std::vector<LabeledExample> shadow_examples(const InteractionDataset& ds,
                                            std::span<const InteractionKey> population,
                                            const MembershipMatrix& membership, std::size_t model,
                                            const EnsembleSpec& spec);

/// Trains shadow model j alone. Depends only on S_j, spec.train and
/// shadow_seed(spec.seed, j).
RecModel train_shadow_model(const InteractionDataset& ds,
                            std::span<const InteractionKey> population,
                            const MembershipMatrix& membership, std::size_t model,
                            const EnsembleSpec& spec);

/// Offline preparation: sample m shadow sets, train m models on a bounded
/// worker pool, collect phi for every OUT (model, interaction) pair
/// (subsampled to spec.out_cap), and fit the shared OUT Gaussian.
ShadowEnsemble build_ensemble(std::shared_ptr<const InteractionDataset> ds,
                              std::vector<InteractionKey> population, const EnsembleSpec& spec,
                              int workers = 1);

/// Same, auditing the dataset's train split.
ShadowEnsemble build_ensemble(std::shared_ptr<const InteractionDataset> ds,
                              const EnsembleSpec& spec, int workers = 1);

/// phi(predict(M_j, u, i)) for every shadow model j.
std::vector<double> ensemble_phi(const ShadowEnsemble& ensemble, InteractionKey k);

/// Ensemble directory: manifest.txt (+ manifest.sha256), dataset.tsv,
/// population.tsv, membership.bin, models/shadow_NNNN.ckpt. `extra` entries
/// are appended to the manifest (run config, input hashes).
void save_ensemble(const ShadowEnsemble& ensemble, const std::filesystem::path& dir,
                   const KeyValues& extra = {});

/// Loads and verifies every file hash listed in the manifest.
/// Throws FormatError on any mismatch.
ShadowEnsemble load_ensemble(const std::filesystem::path& dir);

/// Manifest of an ensemble directory after verifying its hash.
KeyValues read_verified_manifest(const std::filesystem::path& dir);

}  // namespace recps
