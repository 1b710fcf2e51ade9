#include "recps/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <numeric>

#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/kv.hpp"
#include "recps/rng.hpp"

namespace recps {

namespace {

constexpr std::string_view kCanonicalHeader = "# recps-dataset v1";

std::vector<std::string_view> split_fields(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + delim.size();
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_rating(std::string_view f, std::size_t line) {
  if (f.empty()) return std::nullopt;
  double v = 0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc{} || p != f.data() + f.size())
    throw ParseError(line, "bad rating '" + std::string(f) + "'");
  if (!(v >= 1.0 && v <= 5.0))
    throw ParseError(line, "rating outside [1,5]: " + std::string(f));
  return v;
}

std::optional<std::int64_t> parse_timestamp(std::string_view f, std::size_t line) {
  if (f.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc{} || p != f.data() + f.size())
    throw ParseError(line, "bad timestamp '" + std::string(f) + "'");
  return v;
}

Split parse_split(std::string_view f, std::size_t line) {
  if (f == "train") return Split::train;
  if (f == "validation") return Split::validation;
  if (f == "test") return Split::test;
  if (f == "-") return Split::none;
  throw ParseError(line, "bad split '" + std::string(f) + "'");
}

bool looks_like_header(const std::vector<std::string_view>& fields) {
  std::string first(fields.front());
  std::transform(first.begin(), first.end(), first.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return first == "user" || first == "user_id" || first == "userid";
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    case Split::none: break;
  }
  return "-";
}

InputFormat parse_input_format(std::string_view name) {
  if (name == "tsv") return InputFormat::tsv;
  if (name == "csv") return InputFormat::csv;
  if (name == "movielens-dat" || name == "dat") return InputFormat::movielens_dat;
  if (name == "canonical") return InputFormat::canonical;
  throw ConfigError("unknown dataset format '" + std::string(name) + "'");
}

std::uint32_t Vocabulary::intern(const std::string& key) {
  auto [it, inserted] = index_.try_emplace(key, static_cast<std::uint32_t>(keys_.size()));
  if (inserted) keys_.push_back(key);
  return it->second;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view key) const {
  auto it = index_.find(std::string(key));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

InteractionDataset InteractionDataset::from_interactions(std::vector<Interaction> rows,
                                                         std::vector<Split> splits) {
  if (!splits.empty() && splits.size() != rows.size())
    throw PreconditionError("split vector size does not match row count");
  InteractionDataset ds;
  ds.rows_ = std::move(rows);
  ds.splits_ = std::move(splits);
  ds.keys_.reserve(ds.rows_.size());
  for (const auto& r : ds.rows_) {
    if (r.user_id.empty() || r.item_id.empty())
      throw PreconditionError("interaction with empty user or item id");
    ds.keys_.push_back({ds.users_.intern(r.user_id), ds.items_.intern(r.item_id)});
  }
  ds.rebuild_indexes();
  return ds;
}

void InteractionDataset::rebuild_indexes() {
  by_user_.assign(users_.size(), {});
  pair_index_.clear();
  pair_index_.reserve(keys_.size());
  for (std::size_t r = 0; r < keys_.size(); ++r) {
    by_user_[keys_[r].user].push_back(r);
    pair_index_.emplace(pack(keys_[r]), r);
  }
}

std::vector<std::size_t> InteractionDataset::rows_with_split(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows_.size(); ++r)
    if (split(r) == s || (!has_splits() && s == Split::train)) out.push_back(r);
  return out;
}

std::vector<InteractionKey> InteractionDataset::keys_with_split(Split s) const {
  std::vector<InteractionKey> out;
  for (std::size_t r : rows_with_split(s)) out.push_back(keys_[r]);
  return out;
}

InteractionDataset InteractionDataset::without_rows(std::span<const std::size_t> rows) const {
  std::vector<bool> drop(rows_.size(), false);
  for (std::size_t r : rows) drop.at(r) = true;
  InteractionDataset ds;
  ds.users_ = users_;
  ds.items_ = items_;
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    if (drop[r]) continue;
    ds.rows_.push_back(rows_[r]);
    ds.keys_.push_back(keys_[r]);
    if (has_splits()) ds.splits_.push_back(splits_[r]);
  }
  ds.rebuild_indexes();
  return ds;
}

std::optional<std::size_t> InteractionDataset::find(InteractionKey k) const {
  auto it = pair_index_.find(pack(k));
  if (it == pair_index_.end()) return std::nullopt;
  return it->second;
}

InteractionDataset ingest_text(std::string_view text, InputFormat format) {
  std::vector<Interaction> rows;
  std::vector<Split> splits;
  std::unordered_map<std::string, std::size_t> seen;
  const std::string_view delim = format == InputFormat::csv            ? ","
                                 : format == InputFormat::movielens_dat ? "::"
                                                                        : "\t";
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool first_content = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (format == InputFormat::canonical && first_content) {
      if (line != kCanonicalHeader)
        throw ParseError(line_no, "missing canonical header '" +
                                      std::string(kCanonicalHeader) + "'");
      first_content = false;
      continue;
    }
    if (line.front() == '#') continue;
    auto fields = split_fields(line, delim);
    for (auto& f : fields) f = trim(f);
    if (first_content && format != InputFormat::movielens_dat && looks_like_header(fields)) {
      first_content = false;
      continue;
    }
    first_content = false;
    const std::size_t max_fields = format == InputFormat::canonical ? 5 : 4;
    const std::size_t min_fields = format == InputFormat::canonical ? 5 : 2;
    if (fields.size() < min_fields || fields.size() > max_fields)
      throw ParseError(line_no, "expected " + std::to_string(min_fields) + ".." +
                                    std::to_string(max_fields) + " fields, got " +
                                    std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty())
      throw ParseError(line_no, "empty user or item id");
    Interaction row{std::string(fields[0]), std::string(fields[1]),
                    fields.size() > 2 ? parse_rating(fields[2], line_no) : std::nullopt,
                    fields.size() > 3 ? parse_timestamp(fields[3], line_no) : std::nullopt};
    if (format == InputFormat::canonical) {
      rows.push_back(std::move(row));
      splits.push_back(parse_split(fields[4], line_no));
      continue;
    }
    std::string pair_key = row.user_id;
    pair_key.push_back('\x1f');
    pair_key += row.item_id;
    auto [it, inserted] = seen.try_emplace(std::move(pair_key), rows.size());
    if (inserted) {
      rows.push_back(std::move(row));
    } else {
      Interaction& kept = rows[it->second];
      const std::int64_t old_ts = kept.timestamp.value_or(INT64_MIN);
      if (row.timestamp.value_or(INT64_MIN) >= old_ts) {
        kept.rating = row.rating;
        kept.timestamp = row.timestamp;
      }
    }
  }
  if (rows.empty()) throw EmptyDatasetError("dataset contains no interactions");
  if (format == InputFormat::canonical) {
    bool any = false, all = true;
    for (Split s : splits) {
      any |= s != Split::none;
      all &= s != Split::none;
    }
    if (!any) splits.clear();
    else if (!all) throw FormatError("canonical file mixes split and unsplit rows");
  }
  return InteractionDataset::from_interactions(std::move(rows), std::move(splits));
}

InteractionDataset ingest(const std::filesystem::path& path, InputFormat format) {
  if (!std::filesystem::exists(path))
    throw ConfigError("dataset file not found: " + path.string());
  return ingest_text(read_file(path), format);
}

InteractionDataset filter_min_interactions(const InteractionDataset& ds, std::size_t min_count) {
  if (min_count == 0) return ds;
  std::vector<Interaction> rows;
  std::vector<Split> splits;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (ds.rows_by_user()[ds.key(r).user].size() <= min_count) continue;
    rows.push_back(ds.interaction(r));
    if (ds.has_splits()) splits.push_back(ds.split(r));
  }
  if (rows.empty()) return {};
  return InteractionDataset::from_interactions(std::move(rows), std::move(splits));
}

InteractionDataset split_leave_two_out(const InteractionDataset& ds) {
  std::size_t with_ts = 0;
  for (const auto& r : ds.interactions()) with_ts += r.timestamp.has_value();
  if (with_ts != 0 && with_ts != ds.size())
    throw PreconditionError("timestamps present on only some interactions");
  std::vector<Split> splits(ds.size(), Split::train);
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    std::vector<std::size_t> rows = ds.rows_by_user()[u];
    if (rows.size() < 3)
      throw PreconditionError("user '" + ds.users().key(static_cast<UserId>(u)) + "' has " +
                              std::to_string(rows.size()) +
                              " interactions; leave-two-out needs at least 3");
    if (with_ts != 0) {
      std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
        return *ds.interaction(a).timestamp < *ds.interaction(b).timestamp;
      });
    }
    splits[rows.back()] = Split::test;
    splits[rows[rows.size() - 2]] = Split::validation;
  }
  std::vector<Interaction> rows(ds.interactions().begin(), ds.interactions().end());
  return InteractionDataset::from_interactions(std::move(rows), std::move(splits));
}

std::vector<LabeledExample> sample_negatives(
    std::size_t num_items, const std::vector<std::vector<ItemId>>& positives,
    const std::vector<std::vector<ItemId>>& excluded, int ratio, std::uint64_t seed) {
  if (ratio < 1) throw PreconditionError("negative sampling ratio must be >= 1");
  std::vector<LabeledExample> out;
  std::vector<std::uint8_t> blocked(num_items);
  std::vector<ItemId> pool;
  for (std::size_t u = 0; u < positives.size(); ++u) {
    const auto& pos = positives[u];
    if (pos.empty()) continue;
    std::fill(blocked.begin(), blocked.end(), 0);
    for (ItemId i : pos) blocked.at(i) = 1;
    if (u < excluded.size())
      for (ItemId i : excluded[u]) blocked.at(i) = 1;
    pool.clear();
    for (ItemId i = 0; i < num_items; ++i)
      if (!blocked[i]) pool.push_back(i);
    const std::size_t need = static_cast<std::size_t>(ratio) * pos.size();
    if (pool.size() < need)
      throw SamplingError("user " + std::to_string(u) + " needs " + std::to_string(need) +
                          " negatives but only " + std::to_string(pool.size()) +
                          " unobserved items exist");
    for (ItemId i : pos) out.push_back({static_cast<UserId>(u), i, 1});
    Rng rng(derive_seed(seed, {u}));
    for (std::size_t k = 0; k < need; ++k) {
      const std::size_t pick = k + rng.index(pool.size() - k);
      std::swap(pool[k], pool[pick]);
      out.push_back({static_cast<UserId>(u), pool[k], 0});
    }
  }
  return out;
}

std::vector<LabeledExample> sample_negatives(const InteractionDataset& ds, int ratio,
                                             std::uint64_t seed) {
  std::vector<std::vector<ItemId>> positives(ds.num_users());
  std::vector<std::vector<ItemId>> observed(ds.num_users());
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto k = ds.key(r);
    observed[k.user].push_back(k.item);
    if (!ds.has_splits() || ds.split(r) == Split::train) positives[k.user].push_back(k.item);
  }
  return sample_negatives(ds.num_items(), positives, observed, ratio, seed);
}

std::string to_canonical(const InteractionDataset& ds) {
  std::string out(kCanonicalHeader);
  out.push_back('\n');
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto& row = ds.interaction(r);
    for (const std::string* s : {&row.user_id, &row.item_id})
      if (s->find_first_of("\t\n\r") != std::string::npos)
        throw PreconditionError("id contains a tab or newline: " + *s);
    out += row.user_id;
    out.push_back('\t');
    out += row.item_id;
    out.push_back('\t');
    if (row.rating) out += format_double(*row.rating);
    out.push_back('\t');
    if (row.timestamp) out += std::to_string(*row.timestamp);
    out.push_back('\t');
    out += to_string(ds.split(r));
    out.push_back('\n');
  }
  return out;
}

void write_canonical(const InteractionDataset& ds, const std::filesystem::path& path) {
  write_file(path, to_canonical(ds));
}

}  // namespace recps
