#include "recps/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/kv.hpp"
#include "recps/parallel.hpp"

namespace recps {

double max_log_ratio(std::span<const double> lambdas, std::span<const std::uint8_t> in_flags) {
  if (lambdas.size() != in_flags.size())
    throw std::invalid_argument("max_log_ratio: size mismatch");
  std::vector<double> in, out;
  for (std::size_t j = 0; j < lambdas.size(); ++j) (in_flags[j] ? in : out).push_back(lambdas[j]);
  if (in.empty() || out.empty())
    throw DegenerateMembershipError("interaction is " + std::string(in.empty() ? "OUT" : "IN") +
                                    " for every shadow model");
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  const double n_in = static_cast<double>(in.size());
  const double n_out = static_cast<double>(out.size());
  double best = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (k > 0 && out[k] == out[k - 1]) continue;
    const double t = out[k];
    const auto tp = static_cast<std::size_t>(in.end() - std::upper_bound(in.begin(), in.end(), t));
    const auto fp = static_cast<std::size_t>(out.end() - std::upper_bound(out.begin(), out.end(), t));
    if (fp == 0) continue;
    const double tpr = static_cast<double>(tp) / n_in;
    const double fpr = static_cast<double>(fp) / n_out;
    const double r = std::log(tpr / fpr);
    if (best < r) best = r;
  }
  return best;
}

double log_ratio_at(std::span<const double> lambdas, std::span<const std::uint8_t> in_flags,
                    double threshold) {
  std::size_t n_in = 0, n_out = 0, tp = 0, fp = 0;
  for (std::size_t j = 0; j < lambdas.size(); ++j) {
    const bool pred = lambdas[j] > threshold;
    if (in_flags[j]) {
      ++n_in;
      tp += pred;
    } else {
      ++n_out;
      fp += pred;
    }
  }
  if (n_in == 0 || n_out == 0 || fp == 0) return 0.0;
  return std::log((static_cast<double>(tp) / n_in) / (static_cast<double>(fp) / n_out));
}

ShadowEvidence shadow_evidence(const ShadowEnsemble& ensemble, InteractionKey k) {
  const auto r = ensemble.index_of(k);
  if (!r) throw std::out_of_range("interaction is not in the audited population");
  ShadowEvidence ev;
  const auto phis = ensemble_phi(ensemble, k);
  ev.lambdas.reserve(phis.size());
  for (double p : phis) ev.lambdas.push_back(stats::lambda_statistic(p, ensemble.out_dist));
  ev.in_flags.resize(ensemble.models.size());
  for (std::size_t j = 0; j < ensemble.models.size(); ++j)
    ev.in_flags[j] = ensemble.membership.contains(j, *r);
  return ev;
}

double score_interaction(const ShadowEnsemble& ensemble, InteractionKey k) {
  const auto ev = shadow_evidence(ensemble, k);
  try {
    return max_log_ratio(ev.lambdas, ev.in_flags);
  } catch (const DegenerateMembershipError& e) {
    throw DegenerateMembershipError("(" + std::to_string(k.user) + ", " + std::to_string(k.item) +
                                    "): " + e.what());
  }
}

double score_user(std::span<const double> interaction_scores) {
  if (interaction_scores.empty()) throw PreconditionError("user has no scored interactions");
  double sum = 0.0;
  for (double s : interaction_scores) sum += s;
  return sum / static_cast<double>(interaction_scores.size());
}

double score_user(const ShadowEnsemble& ensemble, UserId, std::span<const InteractionKey> interactions) {
  std::vector<double> scores;
  scores.reserve(interactions.size());
  for (const auto& k : interactions) scores.push_back(score_interaction(ensemble, k));
  return score_user(scores);
}

UserQuery score_query(const ShadowEnsemble& ensemble, UserId user) {
  if (!ensemble.dataset || user >= ensemble.dataset->num_users())
    throw std::out_of_range("user id " + std::to_string(user) + " out of range");
  UserQuery q;
  for (std::size_t r : ensemble.user_interactions(user)) {
    q.interactions.push_back(ensemble.population[r]);
    q.scores.push_back(score_interaction(ensemble, ensemble.population[r]));
  }
  q.user_score = score_user(q.scores);
  return q;
}

std::optional<double> ScoreTable::user_score(UserId user) const {
  auto it = std::lower_bound(users.begin(), users.end(), user,
                             [](const UserScore& s, UserId u) { return s.user < u; });
  if (it == users.end() || it->user != user) return std::nullopt;
  return it->score;
}

std::vector<InteractionScore> ScoreTable::user_interactions(UserId user) const {
  std::vector<InteractionScore> out;
  for (const auto& s : interactions)
    if (s.user == user) out.push_back(s);
  return out;
}

ScoreTable build_score_table(const ShadowEnsemble& ensemble, std::span<const UserId> users,
                             int workers, std::string ensemble_ref) {
  std::vector<UserId> targets(users.begin(), users.end());
  if (targets.empty()) {
    for (UserId u = 0; u < ensemble.dataset->num_users(); ++u)
      if (!ensemble.user_interactions(u).empty()) targets.push_back(u);
  }
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  for (UserId u : targets)
    if (u >= ensemble.dataset->num_users())
      throw std::out_of_range("user id " + std::to_string(u) + " out of range");

  struct PerUser {
    std::vector<InteractionScore> scored;
    std::vector<ResidualInteraction> residual;
  };
  std::vector<PerUser> parts(targets.size());
  parallel_for(targets.size(), workers, [&](std::size_t t) {
    for (std::size_t r : ensemble.user_interactions(targets[t])) {
      const InteractionKey k = ensemble.population[r];
      const auto ev = shadow_evidence(ensemble, k);
      try {
        parts[t].scored.push_back({k.user, k.item, max_log_ratio(ev.lambdas, ev.in_flags)});
      } catch (const DegenerateMembershipError& e) {
        parts[t].residual.push_back({k.user, k.item, "degenerate-membership"});
      }
    }
  });

  ScoreTable table;
  table.ensemble_ref = std::move(ensemble_ref);
  table.created_at = std::chrono::system_clock::now();
  for (std::size_t t = 0; t < targets.size(); ++t) {
    auto& p = parts[t];
    for (auto& r : p.residual) table.residual.push_back(std::move(r));
    if (p.scored.empty()) continue;
    std::vector<double> s;
    for (const auto& x : p.scored) s.push_back(x.score);
    table.users.push_back({targets[t], score_user(s), s.size()});
    table.interactions.insert(table.interactions.end(), p.scored.begin(), p.scored.end());
  }
  return table;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string_view>> read_csv_body(const std::string& text,
                                                         std::string_view header,
                                                         std::string* comment) {
  std::vector<std::vector<std::string_view>> rows;
  std::size_t start = 0;
  bool saw_header = false;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (comment) *comment = std::string(line);
      continue;
    }
    if (!saw_header) {
      if (line != header) throw ParseError(line_no, "expected header '" + std::string(header) + "'");
      saw_header = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t s = 0;
    while (true) {
      const std::size_t c = line.find(',', s);
      fields.push_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double to_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw FormatError("bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace

void write_score_table(const ScoreTable& table, const InteractionDataset& ds,
                       const std::filesystem::path& dir) {
  const std::string comment = "# ensemble_manifest_sha256=" + table.ensemble_ref + "\n";
  std::string inter = comment + "user,item,score\n";
  for (const auto& s : table.interactions)
    inter += ds.users().key(s.user) + "," + ds.items().key(s.item) + "," + format_double(s.score) + "\n";
  std::string users = comment + "user,score,n_interactions\n";
  for (const auto& s : table.users)
    users += ds.users().key(s.user) + "," + format_double(s.score) + "," +
             std::to_string(s.n_interactions) + "\n";
  std::string residual = comment + "user,item,reason\n";
  for (const auto& r : table.residual)
    residual += ds.users().key(r.user) + "," + ds.items().key(r.item) + "," + r.reason + "\n";
  write_file(dir / "interactions.csv", inter);
  write_file(dir / "users.csv", users);
  write_file(dir / "residual.csv", residual);
}

ScoreTable read_score_table(const InteractionDataset& ds, const std::filesystem::path& dir) {
  ScoreTable table;
  std::string comment;
  auto lookup = [&](std::string_view u, std::string_view i) {
    const auto uid = ds.users().find(u);
    const auto iid = ds.items().find(i);
    if (!uid || !iid) throw FormatError("score table references unknown user or item");
    return InteractionKey{*uid, *iid};
  };
  const std::string inter = read_file(dir / "interactions.csv");
  for (const auto& f : read_csv_body(inter, "user,item,score", &comment)) {
    if (f.size() != 3) throw FormatError("interactions.csv: malformed row");
    const auto k = lookup(f[0], f[1]);
    table.interactions.push_back({k.user, k.item, to_double(f[2])});
  }
  const std::string users = read_file(dir / "users.csv");
  for (const auto& f : read_csv_body(users, "user,score,n_interactions", nullptr)) {
    if (f.size() != 3) throw FormatError("users.csv: malformed row");
    const auto uid = ds.users().find(f[0]);
    if (!uid) throw FormatError("users.csv: unknown user");
    table.users.push_back({*uid, to_double(f[1]), static_cast<std::size_t>(to_double(f[2]))});
  }
  if (std::filesystem::exists(dir / "residual.csv")) {
    const std::string residual = read_file(dir / "residual.csv");
    for (const auto& f : read_csv_body(residual, "user,item,reason", nullptr)) {
      if (f.size() != 3) throw FormatError("residual.csv: malformed row");
      const auto k = lookup(f[0], f[1]);
      table.residual.push_back({k.user, k.item, std::string(f[2])});
    }
  }
  const std::string prefix = "# ensemble_manifest_sha256=";
  if (comment.rfind(prefix, 0) == 0) table.ensemble_ref = comment.substr(prefix.size());
  std::sort(table.users.begin(), table.users.end(),
            [](const UserScore& a, const UserScore& b) { return a.user < b.user; });
  return table;
}

}  // namespace recps
