#include "recps/shadow.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <numeric>

#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/parallel.hpp"
#include "recps/rng.hpp"
#include "recps/train.hpp"

namespace recps {

namespace fs = std::filesystem;

MembershipMatrix::MembershipMatrix(std::size_t models, std::size_t interactions)
    : models_(models),
      interactions_(interactions),
      stride_((interactions + 7) / 8),
      bytes_(models * stride_, 0) {}

void MembershipMatrix::set(std::size_t model, std::size_t r, bool in) {
  auto& byte = bytes_.at(model * stride_ + r / 8);
  const auto bit = static_cast<std::uint8_t>(1u << (r % 8));
  byte = in ? (byte | bit) : (byte & ~bit);
}

std::size_t MembershipMatrix::in_count(std::size_t r) const {
  std::size_t c = 0;
  for (std::size_t j = 0; j < models_; ++j) c += contains(j, r);
  return c;
}

namespace {

constexpr char kMemMagic[8] = {'R', 'E', 'C', 'P', 'S', 'M', 'E', 'M'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

}  // namespace

std::string MembershipMatrix::serialize() const {
  std::string out(kMemMagic, sizeof(kMemMagic));
  put_u64(out, 1);
  put_u64(out, models_);
  put_u64(out, interactions_);
  out.append(reinterpret_cast<const char*>(bytes_.data()), bytes_.size());
  return out;
}

MembershipMatrix MembershipMatrix::deserialize(std::string_view bytes) {
  if (bytes.size() < 32 || bytes.substr(0, 8) != std::string_view(kMemMagic, 8))
    throw FormatError("membership: bad header");
  if (get_u64(bytes, 8) != 1) throw FormatError("membership: unsupported version");
  MembershipMatrix m(get_u64(bytes, 16), get_u64(bytes, 24));
  if (bytes.size() != 32 + m.bytes_.size()) throw FormatError("membership: size mismatch");
  std::copy(bytes.begin() + 32, bytes.end(), reinterpret_cast<char*>(m.bytes_.data()));
  return m;
}

MembershipMatrix sample_shadow_datasets(std::span<const InteractionKey> population,
                                        std::size_t m, std::uint64_t seed) {
  if (m < 2) throw PreconditionError("need at least 2 shadow models");
  MembershipMatrix mat(m, population.size());
  for (std::size_t j = 0; j < m; ++j) {
    const std::uint64_t sj = derive_seed(seed, {salt("membership"), j});
    for (std::size_t r = 0; r < population.size(); ++r)
      mat.set(j, r, (derive_seed(sj, {pack(population[r])}) >> 63) != 0);
  }
  return mat;
}

void EnsembleSpec::validate() const {
  train.validate();
  if (m < 2) throw PreconditionError("need at least 2 shadow models");
  if (out_cap < stats::kMinOutSamples)
    throw ConfigError("out_cap must be at least " + std::to_string(stats::kMinOutSamples));
  if (negative_ratio < 1) throw ConfigError("negative_ratio must be >= 1");
}

std::optional<std::size_t> ShadowEnsemble::index_of(InteractionKey k) const {
  auto it = index_.find(pack(k));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const std::size_t> ShadowEnsemble::user_interactions(UserId user) const {
  if (user >= by_user_.size()) return {};
  return by_user_[user];
}

void ShadowEnsemble::rebuild_index() {
  index_.clear();
  by_user_.assign(dataset ? dataset->num_users() : 0, {});
  for (std::size_t r = 0; r < population.size(); ++r) {
    index_.emplace(pack(population[r]), r);
    if (population[r].user >= by_user_.size()) by_user_.resize(population[r].user + 1);
    by_user_[population[r].user].push_back(r);
  }
}

std::uint64_t shadow_seed(std::uint64_t master, std::size_t model) {
  return derive_seed(master, {salt("shadow"), model});
}

std::vector<LabeledExample> shadow_examples(const InteractionDataset& ds,
                                            std::span<const InteractionKey> population,
                                            const MembershipMatrix& membership, std::size_t model,
                                            const EnsembleSpec& spec) {
  std::vector<std::vector<ItemId>> positives(ds.num_users());
  for (std::size_t r = 0; r < population.size(); ++r)
    if (membership.contains(model, r)) positives[population[r].user].push_back(population[r].item);
  return sample_negatives(ds.num_items(), positives, {}, spec.negative_ratio,
                          derive_seed(shadow_seed(spec.seed, model), {salt("negatives")}));
}

RecModel train_shadow_model(const InteractionDataset& ds,
                            std::span<const InteractionKey> population,
                            const MembershipMatrix& membership, std::size_t model,
                            const EnsembleSpec& spec) {
  const auto examples = shadow_examples(ds, population, membership, model, spec);
  TrainConfig cfg = spec.train;
  cfg.seed = shadow_seed(spec.seed, model);
  return train(spec.family, ds, examples, cfg);
}

ShadowEnsemble build_ensemble(std::shared_ptr<const InteractionDataset> ds,
                              std::vector<InteractionKey> population, const EnsembleSpec& spec,
                              int workers) {
  spec.validate();
  if (!ds || ds->empty() || population.empty())
    throw PreconditionError("cannot build an ensemble on an empty dataset");
  ShadowEnsemble ens;
  ens.dataset = std::move(ds);
  ens.population = std::move(population);
  ens.spec = spec;
  ens.membership = sample_shadow_datasets(ens.population, spec.m, spec.seed);
  ens.models.resize(spec.m);
  std::vector<std::vector<double>> out_phi(spec.m);
  parallel_for(spec.m, workers, [&](std::size_t j) {
    ens.models[j] = train_shadow_model(*ens.dataset, ens.population, ens.membership, j, spec);
    auto& phis = out_phi[j];
    for (std::size_t r = 0; r < ens.population.size(); ++r) {
      if (ens.membership.contains(j, r)) continue;
      phis.push_back(stats::phi(ens.models[j].predict(ens.population[r].user, ens.population[r].item)));
    }
  });
  std::vector<double> all;
  for (const auto& v : out_phi) all.insert(all.end(), v.begin(), v.end());
  if (all.size() > spec.out_cap) {
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(spec.seed, {salt("out-cap")}));
    for (std::size_t k = 0; k < spec.out_cap; ++k)
      std::swap(idx[k], idx[k + rng.index(idx.size() - k)]);
    idx.resize(spec.out_cap);
    std::sort(idx.begin(), idx.end());
    std::vector<double> kept;
    kept.reserve(idx.size());
    for (std::size_t k : idx) kept.push_back(all[k]);
    all = std::move(kept);
  }
  ens.out_dist = stats::fit_out_distribution(all);
  ens.rebuild_index();
  return ens;
}

ShadowEnsemble build_ensemble(std::shared_ptr<const InteractionDataset> ds,
                              const EnsembleSpec& spec, int workers) {
  if (!ds) throw PreconditionError("null dataset");
  auto population = ds->keys_with_split(Split::train);
  return build_ensemble(std::move(ds), std::move(population), spec, workers);
}

std::vector<double> ensemble_phi(const ShadowEnsemble& ensemble, InteractionKey k) {
  std::vector<double> out;
  out.reserve(ensemble.models.size());
  for (const auto& model : ensemble.models) out.push_back(stats::phi(model.predict(k.user, k.item)));
  return out;
}

// ---------------------------------------------------------------------------
// Directory persistence

namespace {

std::string model_file(std::size_t j) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "models/shadow_%04zu.ckpt", j);
  return buf;
}

template <typename T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw FormatError(std::string("manifest: bad value for ") + what + ": '" + s + "'");
  return v;
}

}  // namespace

void save_ensemble(const ShadowEnsemble& ens, const fs::path& dir, const KeyValues& extra) {
  fs::create_directories(dir / "models");
  KeyValues manifest;
  const auto put = [&](std::string file, std::string_view bytes) {
    write_file(dir / file, bytes);
    manifest.set("file." + file, sha256_hex(bytes));
  };
  manifest.set("format", "recps-ensemble-v1");
  manifest.set("family", std::string(to_string(ens.spec.family)));
  manifest.set("m", std::to_string(ens.spec.m));
  manifest.set("seed", std::to_string(ens.spec.seed));
  manifest.set("out_cap", std::to_string(ens.spec.out_cap));
  manifest.set("negative_ratio", std::to_string(ens.spec.negative_ratio));
  const TrainConfig& t = ens.spec.train;
  manifest.set("train.learning_rate", format_double(t.learning_rate));
  manifest.set("train.batch_size", std::to_string(t.batch_size));
  manifest.set("train.max_epochs", std::to_string(t.max_epochs));
  manifest.set("train.patience", std::to_string(t.patience));
  manifest.set("train.dim", std::to_string(t.dim));
  manifest.set("train.layers", std::to_string(t.layers));
  manifest.set("train.seed", std::to_string(t.seed));
  manifest.set("train.eval_k", std::to_string(t.eval_k));
  manifest.set("train.init_scale", format_double(t.init_scale));
  manifest.set("negatives.resampling", "once-per-run");
  if (ens.spec.family == ModelFamily::ncf) {
    std::string widths;
    for (std::size_t w : ncf_layer_widths(t.dim))
      widths += (widths.empty() ? "" : ",") + std::to_string(w);
    manifest.set("ncf.widths", widths);
  }
  manifest.set("out.mu", format_double(ens.out_dist.mu));
  manifest.set("out.sigma", format_double(ens.out_dist.sigma));
  manifest.set("out.n", std::to_string(ens.out_dist.n));
  manifest.set("population.size", std::to_string(ens.population.size()));

  put("dataset.tsv", to_canonical(*ens.dataset));
  std::string pop;
  for (const auto& k : ens.population) {
    pop += ens.dataset->users().key(k.user);
    pop.push_back('\t');
    pop += ens.dataset->items().key(k.item);
    pop.push_back('\n');
  }
  put("population.tsv", pop);
  put("membership.bin", ens.membership.serialize());
  for (std::size_t j = 0; j < ens.models.size(); ++j) put(model_file(j), serialize_model(ens.models[j]));
  for (const auto& [k, v] : extra.entries()) manifest.set(k, v);

  const std::string text = manifest.to_string();
  write_file(dir / "manifest.txt", text);
  write_file(dir / "manifest.sha256", sha256_hex(text) + "\n");
}

KeyValues read_verified_manifest(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt")) throw FormatError("no manifest in " + dir.string());
  const std::string text = read_file(dir / "manifest.txt");
  std::string expected = fs::exists(dir / "manifest.sha256") ? read_file(dir / "manifest.sha256") : "";
  while (!expected.empty() && (expected.back() == '\n' || expected.back() == '\r')) expected.pop_back();
  if (expected != sha256_hex(text))
    throw FormatError("manifest hash mismatch in " + dir.string() + "; refusing to use it");
  return KeyValues::parse(text);
}

ShadowEnsemble load_ensemble(const fs::path& dir) {
  const KeyValues manifest = read_verified_manifest(dir);
  if (manifest.require("format") != "recps-ensemble-v1") throw FormatError("unknown ensemble format");
  auto verified = [&](const std::string& file) {
    const std::string bytes = read_file(dir / file);
    if (sha256_hex(bytes) != manifest.require("file." + file))
      throw FormatError("hash mismatch for " + file);
    return bytes;
  };

  ShadowEnsemble ens;
  EnsembleSpec& spec = ens.spec;
  spec.family = parse_model_family(manifest.require("family"));
  spec.m = parse_number<std::size_t>(manifest.require("m"), "m");
  spec.seed = parse_number<std::uint64_t>(manifest.require("seed"), "seed");
  spec.out_cap = parse_number<std::size_t>(manifest.require("out_cap"), "out_cap");
  spec.negative_ratio = parse_number<int>(manifest.require("negative_ratio"), "negative_ratio");
  TrainConfig& t = spec.train;
  t.learning_rate = parse_number<double>(manifest.require("train.learning_rate"), "learning_rate");
  t.batch_size = parse_number<std::size_t>(manifest.require("train.batch_size"), "batch_size");
  t.max_epochs = parse_number<int>(manifest.require("train.max_epochs"), "max_epochs");
  t.patience = parse_number<int>(manifest.require("train.patience"), "patience");
  t.dim = parse_number<std::size_t>(manifest.require("train.dim"), "dim");
  t.layers = parse_number<int>(manifest.require("train.layers"), "layers");
  t.seed = parse_number<std::uint64_t>(manifest.require("train.seed"), "train.seed");
  t.eval_k = parse_number<std::size_t>(manifest.require("train.eval_k"), "eval_k");
  t.init_scale = parse_number<double>(manifest.require("train.init_scale"), "init_scale");
  ens.out_dist.mu = parse_number<double>(manifest.require("out.mu"), "out.mu");
  ens.out_dist.sigma = parse_number<double>(manifest.require("out.sigma"), "out.sigma");
  ens.out_dist.n = parse_number<std::size_t>(manifest.require("out.n"), "out.n");

  auto ds = std::make_shared<InteractionDataset>(ingest_text(verified("dataset.tsv"), InputFormat::canonical));
  ens.dataset = ds;
  const std::string pop = verified("population.tsv");
  std::size_t start = 0;
  while (start < pop.size()) {
    std::size_t end = pop.find('\n', start);
    if (end == std::string::npos) end = pop.size();
    const std::string_view line(pop.data() + start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw FormatError("population: malformed row");
    const auto u = ds->users().find(line.substr(0, tab));
    const auto i = ds->items().find(line.substr(tab + 1));
    if (!u || !i) throw FormatError("population: unknown user or item");
    ens.population.push_back({*u, *i});
  }
  if (ens.population.size() != parse_number<std::size_t>(manifest.require("population.size"), "population.size"))
    throw FormatError("population size mismatch");
  ens.membership = MembershipMatrix::deserialize(verified("membership.bin"));
  if (ens.membership.models() != spec.m || ens.membership.interactions() != ens.population.size())
    throw FormatError("membership shape mismatch");
  for (std::size_t j = 0; j < spec.m; ++j) {
    ens.models.push_back(deserialize_model(verified(model_file(j))));
    if (ens.models.back().num_users() != ds->num_users() ||
        ens.models.back().num_items() != ds->num_items())
      throw FormatError("checkpoint vocabulary does not match dataset");
  }
  ens.rebuild_index();
  return ens;
}

}  // namespace recps
