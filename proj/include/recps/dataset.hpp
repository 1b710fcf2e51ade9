#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace recps {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

/// One implicit-feedback event. Ratings are kept for provenance only;
/// models see the binarized (user, item) pair.
struct Interaction {
  std::string user_id;
  std::string item_id;
  std::optional<double> rating;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Dense (user, item) pair.
struct InteractionKey {
  UserId user = 0;
  ItemId item = 0;

  friend bool operator==(const InteractionKey&, const InteractionKey&) = default;
  friend auto operator<=>(const InteractionKey&, const InteractionKey&) = default;
};

inline std::uint64_t pack(InteractionKey k) noexcept {
  return (static_cast<std::uint64_t>(k.user) << 32) | k.item;
}

struct LabeledExample {
  UserId user = 0;
  ItemId item = 0;
  std::uint8_t label = 0;  // 1 observed, 0 sampled negative

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

enum class Split : std::uint8_t { none, train, validation, test };

std::string_view to_string(Split s);

enum class InputFormat { tsv, csv, movielens_dat, canonical };

InputFormat parse_input_format(std::string_view name);

/// Dense ids in order of first appearance.
class Vocabulary {
 public:
  std::uint32_t intern(const std::string& key);
  std::optional<std::uint32_t> find(std::string_view key) const;
  const std::string& key(std::uint32_t id) const { return keys_.at(id); }
  const std::vector<std::string>& keys() const noexcept { return keys_; }
  std::size_t size() const noexcept { return keys_.size(); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.keys_ == b.keys_;
  }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Immutable-after-construction interaction log with vocabularies and an
/// optional per-interaction split assignment.
class InteractionDataset {
 public:
  InteractionDataset() = default;

  /// Assigns dense ids by first appearance. `splits` is empty or one entry per row.
  static InteractionDataset from_interactions(std::vector<Interaction> rows,
                                              std::vector<Split> splits = {});

  std::span<const Interaction> interactions() const noexcept { return rows_; }
  const Interaction& interaction(std::size_t r) const { return rows_.at(r); }
  InteractionKey key(std::size_t r) const { return keys_.at(r); }
  Split split(std::size_t r) const { return splits_.empty() ? Split::none : splits_[r]; }
  bool has_splits() const noexcept { return !splits_.empty(); }

  const Vocabulary& users() const noexcept { return users_; }
  const Vocabulary& items() const noexcept { return items_; }
  std::size_t num_users() const noexcept { return users_.size(); }
  std::size_t num_items() const noexcept { return items_.size(); }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }

  /// Row indices of each user's interactions in dataset order.
  const std::vector<std::vector<std::size_t>>& rows_by_user() const noexcept {
    return by_user_;
  }

  /// Dense pairs of every row with split `s`, in dataset order.
  std::vector<InteractionKey> keys_with_split(Split s) const;

  /// Rows with split `s` (all rows when the dataset has no splits and s is train).
  std::vector<std::size_t> rows_with_split(Split s) const;

  /// Copy with the given rows dropped. Vocabularies are kept as-is so that
  /// dense ids (and therefore seeds and model shapes) stay stable.
  InteractionDataset without_rows(std::span<const std::size_t> rows) const;

  std::optional<std::size_t> find(InteractionKey k) const;

 private:
  void rebuild_indexes();

  std::vector<Interaction> rows_;
  std::vector<InteractionKey> keys_;
  std::vector<Split> splits_;
  Vocabulary users_;
  Vocabulary items_;
  std::vector<std::vector<std::size_t>> by_user_;
  std::unordered_map<std::uint64_t, std::size_t> pair_index_;
};

/// Reads a delimiter-separated log: user,item[,rating[,timestamp]].
/// Duplicate (user, item) rows collapse into the first appearance and keep
/// the fields of the latest timestamp.
InteractionDataset ingest(const std::filesystem::path& path, InputFormat format);
InteractionDataset ingest_text(std::string_view text, InputFormat format);

/// Keeps users with strictly more than `min_count` interactions.
/// Vocabularies are recompacted.
InteractionDataset filter_min_interactions(const InteractionDataset& ds,
                                           std::size_t min_count);

/// Chronological leave-two-out: most recent -> test, second most recent ->
/// validation, rest -> train. Timestamp ties keep input order. Without any
/// timestamps, input order is the chronology.
InteractionDataset split_leave_two_out(const InteractionDataset& ds);

/// Negatives for a dataset's train split: for each user, `ratio` items per
/// train positive, drawn without replacement from items the user never
/// interacted with (in any split).
std::vector<LabeledExample> sample_negatives(const InteractionDataset& ds, int ratio,
                                             std::uint64_t seed);

/// Generic form. Per user u (ascending): the positives, then
/// ratio * |positives[u]| negatives drawn from items outside
/// positives[u] ∪ excluded[u]. Each user's draw uses its own seeded stream.
std::vector<LabeledExample> sample_negatives(
    std::size_t num_items, const std::vector<std::vector<ItemId>>& positives,
    const std::vector<std::vector<ItemId>>& excluded, int ratio, std::uint64_t seed);

/// Canonical dataset file: version header line, then TSV rows
/// user, item, rating, timestamp, split.
std::string to_canonical(const InteractionDataset& ds);
void write_canonical(const InteractionDataset& ds, const std::filesystem::path& path);

}  // namespace recps
