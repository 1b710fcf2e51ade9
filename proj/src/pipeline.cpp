#include "recps/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>
#include <unordered_set>

#include "recps/attack.hpp"
#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/rng.hpp"
#include "recps/scoring.hpp"
#include "recps/train.hpp"
#include "recps/unlearn.hpp"

namespace recps {

namespace fs = std::filesystem;

namespace {

template <typename T>
T parse_value(std::string_view key, std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(s) + "'");
  return v;
}

bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("bad boolean for " + std::string(key) + ": '" + std::string(s) + "'");
}

struct Field {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(std::string name, T RunConfig::*member) {
  return {name,
          [name, member](RunConfig& c, std::string_view v) { c.*member = parse_value<T>(name, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename T>
Field train_number(std::string name, T TrainConfig::*member) {
  return {name,
          [name, member](RunConfig& c, std::string_view v) {
            c.train.*member = parse_value<T>(name, v);
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.train.*member);
            else return std::to_string(c.train.*member);
          }};
}

Field text(std::string name, std::string RunConfig::*member) {
  return {name, [member](RunConfig& c, std::string_view v) { c.*member = std::string(v); },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      text("dataset", &RunConfig::dataset),
      text("format", &RunConfig::format),
      number("min_count", &RunConfig::min_count),
      text("family", &RunConfig::family),
      train_number("learning_rate", &TrainConfig::learning_rate),
      train_number("batch_size", &TrainConfig::batch_size),
      train_number("max_epochs", &TrainConfig::max_epochs),
      train_number("patience", &TrainConfig::patience),
      train_number("dim", &TrainConfig::dim),
      train_number("layers", &TrainConfig::layers),
      train_number("eval_k", &TrainConfig::eval_k),
      train_number("init_scale", &TrainConfig::init_scale),
      number("negative_ratio", &RunConfig::negative_ratio),
      number("m", &RunConfig::m),
      number("seed", &RunConfig::seed),
      number("out_cap", &RunConfig::out_cap),
      text("mode", &RunConfig::mode),
      number("shadow_user_fraction", &RunConfig::shadow_user_fraction),
      {"target", [](RunConfig& c, std::string_view v) { c.target = parse_bool("target", v); },
       [](const RunConfig& c) { return std::string(c.target ? "true" : "false"); }},
      number("eval_count", &RunConfig::eval_count),
      text("nonmembers", &RunConfig::nonmembers),
      number("hr_k", &RunConfig::hr_k),
      text("removal_modes", &RunConfig::removal_modes),
      number("target_user_fraction", &RunConfig::target_user_fraction),
      number("interaction_fraction", &RunConfig::interaction_fraction),
      number("workers", &RunConfig::workers),
      text("out", &RunConfig::out),
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields())
    if (f.name == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t c = s.find(',', start);
    if (c == std::string_view::npos) c = s.size();
    std::string_view part = s.substr(start, c - start);
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    if (!part.empty()) out.emplace_back(part);
    start = c + 1;
  }
  return out;
}

std::string key_list(const InteractionDataset& ds, std::span<const InteractionKey> keys) {
  std::string out = "user,item\n";
  for (const auto& k : keys) out += ds.users().key(k.user) + "," + ds.items().key(k.item) + "\n";
  return out;
}

std::vector<InteractionKey> read_key_list(const InteractionDataset& ds, const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<InteractionKey> out;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const std::size_t c = line.find(',');
    if (c == std::string_view::npos) throw FormatError(path.string() + ": malformed row");
    const auto u = ds.users().find(line.substr(0, c));
    const auto i = ds.items().find(line.substr(c + 1));
    if (!u || !i) throw FormatError(path.string() + ": unknown user or item");
    out.push_back({*u, *i});
  }
  return out;
}

std::string manifest_hash(const fs::path& dir) {
  read_verified_manifest(dir);
  std::string h = read_file(dir / "manifest.sha256");
  while (!h.empty() && (h.back() == '\n' || h.back() == '\r')) h.pop_back();
  return h;
}

// Keys that cannot change any output bytes are left out of hashes and manifests.
KeyValues result_config(const RunConfig& cfg) {
  KeyValues kv;
  const KeyValues all = cfg.to_kv();
  for (const auto& [k, v] : all.entries())
    if (k != "out" && k != "workers") kv.set(k, v);
  return kv;
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& f : fields()) n.push_back(f.name);
    return n;
  }();
  return names;
}

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, value); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

RunConfig RunConfig::from_kv(const KeyValues& kv) {
  RunConfig c;
  for (const auto& [k, v] : kv.entries()) c.set(k, v);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return from_kv(KeyValues::parse(read_file(path)));
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

KeyValues RunConfig::to_kv() const {
  KeyValues kv;
  for (const auto& f : fields()) kv.set(f.name, f.get(*this));
  return kv;
}

EnsembleSpec RunConfig::ensemble_spec() const {
  EnsembleSpec spec;
  spec.family = parse_model_family(family);
  spec.train = train;
  spec.train.seed = seed;
  spec.m = m;
  spec.seed = seed;
  spec.out_cap = out_cap;
  spec.negative_ratio = negative_ratio;
  return spec;
}

AuditMode RunConfig::audit_mode() const {
  if (mode == "self") return AuditMode::self;
  if (mode == "attack") return AuditMode::attack;
  throw ConfigError("mode must be 'self' or 'attack', got '" + mode + "'");
}

void RunConfig::validate() const {
  parse_input_format(format);
  parse_model_family(family);
  audit_mode();
  parse_nonmember_pool(nonmembers);
  train.validate();
  if (m < 2) throw ConfigError("m must be at least 2");
  if (negative_ratio < 1) throw ConfigError("negative_ratio must be >= 1");
  if (out_cap < stats::kMinOutSamples) throw ConfigError("out_cap must be at least 30");
  if (!(shadow_user_fraction > 0 && shadow_user_fraction < 1))
    throw ConfigError("shadow_user_fraction must be in (0, 1)");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (hr_k == 0) throw ConfigError("hr_k must be positive");
  for (const auto& m : split_list(removal_modes)) parse_removal_mode(m);
  RemovalPlan{RemovalMode::user_level, target_user_fraction, interaction_fraction, seed}.validate();
}

// ---------------------------------------------------------------------------

fs::path cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.dataset.empty()) throw ConfigError("no dataset path configured");
  if (cfg.out.empty()) throw ConfigError("no output directory configured (--out)");
  const fs::path out(cfg.out);
  const std::string input_hash = fs::exists(cfg.dataset) ? sha256_file(cfg.dataset) : "";
  auto raw = ingest(cfg.dataset, parse_input_format(cfg.format));
  auto filtered = filter_min_interactions(raw, cfg.min_count);
  if (filtered.empty())
    throw PreconditionError("no users left after filtering with min_count=" +
                            std::to_string(cfg.min_count));
  auto ds = std::make_shared<const InteractionDataset>(split_leave_two_out(filtered));
  const EnsembleSpec spec = cfg.ensemble_spec();

  std::vector<InteractionKey> population;
  std::vector<InteractionKey> target_members;
  std::vector<std::string> shadow_users;
  if (cfg.audit_mode() == AuditMode::self) {
    population = ds->keys_with_split(Split::train);
    const std::uint64_t tseed = derive_seed(cfg.seed, {salt("target-membership")});
    for (const auto& k : population)
      if (derive_seed(tseed, {pack(k)}) >> 63) target_members.push_back(k);
  } else {
    std::vector<UserId> users(ds->num_users());
    for (UserId u = 0; u < users.size(); ++u) users[u] = u;
    Rng rng(derive_seed(cfg.seed, {salt("user-split")}));
    for (std::size_t k = users.size(); k-- > 1;) std::swap(users[k], users[rng.index(k + 1)]);
    const auto n_shadow = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.shadow_user_fraction * static_cast<double>(users.size()) + 0.5));
    std::vector<std::uint8_t> is_shadow(ds->num_users(), 0);
    for (std::size_t k = 0; k < n_shadow && k < users.size(); ++k) is_shadow[users[k]] = 1;
    for (const auto& k : ds->keys_with_split(Split::train))
      (is_shadow[k.user] ? population : target_members).push_back(k);
    for (UserId u = 0; u < ds->num_users(); ++u)
      if (is_shadow[u]) shadow_users.push_back(ds->users().key(u));
  }

  KeyValues extra;
  extra.set("mode", cfg.mode);
  extra.set("input.sha256", input_hash);
  extra.set("input.path", cfg.dataset);
  extra.set("dataset.users", std::to_string(ds->num_users()));
  extra.set("dataset.items", std::to_string(ds->num_items()));
  extra.set("dataset.interactions", std::to_string(ds->size()));
  const KeyValues resolved = result_config(cfg);
  for (const auto& [k, v] : resolved.entries()) extra.set("config." + k, v);

  if (cfg.target) {
    std::vector<std::vector<ItemId>> positives(ds->num_users());
    for (const auto& k : target_members) positives[k.user].push_back(k.item);
    // The target's owner sees its whole log, so no observed pair is a negative.
    std::vector<std::vector<ItemId>> observed(ds->num_users());
    for (std::size_t r = 0; r < ds->size(); ++r) observed[ds->key(r).user].push_back(ds->key(r).item);
    const auto examples = sample_negatives(ds->num_items(), positives, observed, cfg.negative_ratio,
                                           derive_seed(cfg.seed, {salt("target-negatives")}));
    TrainConfig tcfg = spec.train;
    tcfg.seed = derive_seed(cfg.seed, {salt("target-model")});
    const RecModel target = train(spec.family, *ds, examples, tcfg);
    const std::string ckpt = serialize_model(target);
    const std::string members = key_list(*ds, target_members);
    write_file(out / "target" / "model.ckpt", ckpt);
    write_file(out / "target" / "members.csv", members);
    extra.set("file.target/model.ckpt", sha256_hex(ckpt));
    extra.set("file.target/members.csv", sha256_hex(members));
  }
  if (!shadow_users.empty()) {
    std::string s;
    for (const auto& u : shadow_users) s += u + "\n";
    write_file(out / "shadow_users.txt", s);
    extra.set("file.shadow_users.txt", sha256_hex(s));
  }

  const auto ensemble = build_ensemble(ds, std::move(population), spec, cfg.workers);
  save_ensemble(ensemble, out, extra);
  return out;
}

void cmd_score(const fs::path& ensemble_dir, std::string_view users, const fs::path& out, int workers) {
  const std::string ref = manifest_hash(ensemble_dir);
  const auto ensemble = load_ensemble(ensemble_dir);
  std::vector<UserId> ids;
  if (users != "all" && !users.empty()) {
    for (const auto& key : split_list(users)) {
      const auto u = ensemble.dataset->users().find(key);
      if (!u) throw ConfigError("unknown user '" + key + "'");
      ids.push_back(*u);
    }
  }
  const auto table = build_score_table(ensemble, ids, workers, ref);
  write_score_table(table, *ensemble.dataset, out);
}

double cmd_attack(const fs::path& ensemble_dir, const fs::path& target_dir, const RunConfig& cfg,
                  const fs::path& out) {
  const std::string ref = manifest_hash(ensemble_dir);
  const KeyValues manifest = read_verified_manifest(ensemble_dir);
  const auto ensemble = load_ensemble(ensemble_dir);
  // Target files written by prepare are covered by the manifest.
  const bool inside = fs::equivalent(target_dir.parent_path(), ensemble_dir) ||
                      (fs::exists(ensemble_dir / "target") && fs::equivalent(target_dir, ensemble_dir / "target"));
  for (const std::string file : {"model.ckpt", "members.csv"}) {
    if (!fs::exists(target_dir / file)) throw ConfigError("missing " + (target_dir / file).string());
    if (inside)
      if (const auto h = manifest.get("file.target/" + file); h && *h != sha256_file(target_dir / file))
        throw FormatError("hash mismatch for target/" + file);
  }
  const RecModel target = load_model(target_dir / "model.ckpt");
  const auto members = read_key_list(*ensemble.dataset, target_dir / "members.csv");
  const auto population = sample_attack_population(*ensemble.dataset, members, cfg.eval_count,
                                                   derive_seed(cfg.seed, {salt("attack-population")}),
                                                   parse_nonmember_pool(cfg.nonmembers));
  if (population.nonmembers.empty())
    throw PreconditionError("no non-member candidates in pool '" + cfg.nonmembers +
                            "' (self-audit ensembles need nonmembers=all)");
  const auto result = run_attack(ensemble, target, population);

  KeyValues metrics;
  metrics.set("auc", format_double(result.curve.auc));
  for (double f : kReadoutFprs) {
    std::ostringstream k;
    k << "tpr@" << f;
    metrics.set(k.str(), format_double(result.curve.tpr_at(f)));
  }
  metrics.set("global_threshold.tpr", format_double(result.global_tpr));
  metrics.set("global_threshold.fpr", format_double(result.global_fpr));
  metrics.set("hr@" + std::to_string(cfg.hr_k),
              format_double(hit_rate_at_k(target, *ensemble.dataset, cfg.hr_k)));
  metrics.set("nonmembers", cfg.nonmembers);
  metrics.set("n_members", std::to_string(population.members.size()));
  metrics.set("n_nonmembers", std::to_string(population.nonmembers.size()));
  metrics.set("ensemble_manifest_sha256", ref);
  metrics.set("config_hash", sha256_hex(result_config(cfg).to_string()));
  write_file(out / "roc.csv", roc_csv(result.curve));
  write_file(out / "metrics.txt", metrics.to_string());
  return result.curve.auc;
}

void cmd_unlearn(const RunConfig& cfg, const fs::path& ensemble_dir, const fs::path& out) {
  const KeyValues manifest = read_verified_manifest(ensemble_dir);
  if (manifest.get("mode").value_or("self") != "self")
    throw ConfigError("removal experiments need a self-audit ensemble (mode=self)");
  const std::string ref = manifest_hash(ensemble_dir);
  const auto ensemble = load_ensemble(ensemble_dir);
  const auto modes = split_list(cfg.removal_modes);
  if (modes.empty()) throw ConfigError("no removal arms configured");

  auto baseline = make_baseline(ensemble, cfg.hr_k, cfg.workers);
  baseline.table.ensemble_ref = ref;
  write_score_table(baseline.table, *ensemble.dataset, out / "baseline");
  KeyValues base;
  base.set("hr_before", format_double(baseline.hr_before));
  base.set("hr_k", std::to_string(baseline.hr_k));
  base.set("ensemble_manifest_sha256", ref);
  write_file(out / "baseline" / "metrics.txt", base.to_string());

  KeyValues summary;
  for (const auto& name : modes) {
    RemovalPlan plan{parse_removal_mode(name), cfg.target_user_fraction, cfg.interaction_fraction, cfg.seed};
    const auto report = run_removal_experiment(baseline, plan, cfg.workers);
    write_removal_report(report, *ensemble.dataset, out / std::string(to_string(plan.mode)));
    const std::string p = std::string(to_string(plan.mode)) + ".";
    summary.set(p + "hr_drop_pct", format_double(report.hr_drop_pct));
    summary.set(p + "reduced_user_fraction", format_double(report.reduced_user_fraction));
    summary.set(p + "removed_interactions", std::to_string(report.removal.removed.size()));
  }
  write_file(out / "summary.txt", summary.to_string());
}

std::string cmd_report(const std::vector<fs::path>& dirs) {
  std::ostringstream os;
  for (const auto& dir : dirs) {
    os << "== " << dir.string() << "\n";
    bool any = false;
    if (fs::exists(dir / "manifest.txt")) {
      any = true;
      const KeyValues man = read_verified_manifest(dir);
      for (const char* k : {"mode", "family", "m", "seed", "out.mu", "out.sigma", "out.n",
                            "population.size", "dataset.users", "dataset.items",
                            "dataset.interactions"})
        if (auto v = man.get(k)) os << "  " << k << " = " << *v << "\n";
    }
    if (fs::exists(dir / "users.csv")) {
      any = true;
      std::istringstream in(read_file(dir / "users.csv"));
      std::string line;
      std::vector<double> scores;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("user,", 0) == 0) continue;
        const auto a = line.find(','), b = line.find(',', a + 1);
        scores.push_back(std::stod(line.substr(a + 1, b - a - 1)));
      }
      std::sort(scores.begin(), scores.end());
      os << "  users scored = " << scores.size() << "\n";
      if (!scores.empty()) {
        auto q = [&](double p) { return scores[static_cast<std::size_t>(p * static_cast<double>(scores.size() - 1))]; };
        os << "  user score min/p10/median/p90/max = " << scores.front() << " / " << q(0.1) << " / "
           << q(0.5) << " / " << q(0.9) << " / " << scores.back() << "\n";
      }
    }
    for (const char* f : {"metrics.txt", "summary.txt"}) {
      if (!fs::exists(dir / f)) continue;
      any = true;
      const KeyValues kv = KeyValues::parse(read_file(dir / f));
      for (const auto& [k, v] : kv.entries())
        os << "  " << k << " = " << v << "\n";
    }
    if (!any) os << "  (no recognised outputs)\n";
  }
  return os.str();
}

}  // namespace recps
