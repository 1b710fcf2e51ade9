// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   acceptance [--only NAME]
//
// RECPS_ML1M may point at a MovieLens-1M ratings.dat; otherwise
// data/ml-1m/ratings.dat under the source tree is tried, and the golden
// ingestion check reports SKIP when neither exists.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "recps/attack.hpp"
#include "recps/hash.hpp"
#include "recps/kv.hpp"
#include "recps/pipeline.hpp"
#include "recps/scoring.hpp"
#include "recps/stats.hpp"
#include "recps/toy.hpp"
#include "recps/unlearn.hpp"
#include "score_oracle.hpp"
#include "stats_reference.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace recps;
using Clock = std::chrono::steady_clock;

namespace {

const std::string kRoot = RECPS_SOURCE_DIR;

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

// ---------------------------------------------------------------------------

Outcome stats_kernel() {
  constexpr int kGrid = 10000;
  const stats::OutDistribution d{-1.3, 2.2, 1000};
  std::vector<double> ps(kGrid), xs(kGrid), gap(kGrid), phi(kGrid), lam(kGrid);
  for (int k = 0; k < kGrid; ++k) {
    ps[k] = static_cast<double>(k) / (kGrid - 1);
    xs[k] = d.mu + d.sigma * (-8.0 + 16.0 * k / (kGrid - 1));
  }
  const auto t0 = Clock::now();
  for (int k = 0; k < kGrid; ++k) {
    gap[k] = stats::confidence_gap(ps[k]);
    phi[k] = stats::logit(gap[k]);
    lam[k] = stats::lambda_statistic(xs[k], d);
  }
  const double elapsed = seconds_since(t0);
  double worst = 0;
  for (int k = 0; k < kGrid; ++k) {
    worst = std::max(worst, std::abs(gap[k] - testing::ref_gap(ps[k]).convert_to<double>()));
    worst = std::max(worst, std::abs(phi[k] - testing::ref_logit(testing::ref_gap(ps[k])).convert_to<double>()));
    worst = std::max(worst, std::abs(lam[k] - testing::ref_lambda(xs[k], d.mu, d.sigma).convert_to<double>()));
  }
  return verdict(worst <= 1e-9 && elapsed < 1.0,
                 fmt("max |err| %.3g over 3x10000 points, kernel %.4f s", worst, elapsed));
}

Outcome threshold_oracle() {
  const auto t0 = Clock::now();
  std::size_t instances = 0, mismatches = 0;
  // Real ensembles, m = 2..12, on a slice of the toy set.
  auto ds = std::make_shared<const InteractionDataset>(
      split_leave_two_out(make_toy_dataset({.users = 30, .items = 100})));
  for (std::size_t m = 2; m <= 12 && instances < 1000; ++m) {
    EnsembleSpec spec;
    spec.family = ModelFamily::mf_logit;
    spec.m = m;
    spec.seed = m;
    spec.out_cap = 100000;
    spec.train.dim = 8;
    spec.train.max_epochs = 8;
    spec.train.patience = 0;
    spec.train.learning_rate = 0.5;
    spec.train.batch_size = 32;
    const auto ens = build_ensemble(ds, spec);
    for (std::size_t r = 0; r < ens.population.size() && instances < 1000; ++r) {
      const std::size_t in = ens.membership.in_count(r);
      if (in == 0 || in == m) continue;
      const auto ev = shadow_evidence(ens, ens.population[r]);
      mismatches += score_interaction(ens, ens.population[r]) != testing::brute_force_score(ev.lambdas, ev.in_flags);
      ++instances;
    }
  }
  const std::size_t from_ensembles = instances;
  // Synthetic instances with heavy ties.
  Rng rng(99);
  for (int k = 0; k < 1000; ++k, ++instances) {
    const auto x = testing::random_instance(rng);
    mismatches += max_log_ratio(x.lambdas, x.in) != testing::brute_force_score(x.lambdas, x.in);
  }
  const double elapsed = seconds_since(t0);
  return verdict(mismatches == 0 && from_ensembles >= 1000 && elapsed < 10.0,
                 std::to_string(instances) + " instances (" + std::to_string(from_ensembles) +
                     " from trained ensembles), " + std::to_string(mismatches) + " mismatches, " +
                     fmt("%.2f s", elapsed));
}

double neumaier_mean(const std::vector<double>& v) {
  double sum = 0, c = 0;
  for (double x : v) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return (sum + c) / static_cast<double>(v.size());
}

Outcome user_mean_exactness() {
  auto ds = std::make_shared<const InteractionDataset>(split_leave_two_out(make_toy_dataset()));
  EnsembleSpec spec;
  spec.family = ModelFamily::mf_logit;
  spec.m = 16;
  spec.seed = 4;
  spec.train.dim = 16;
  spec.train.max_epochs = 20;
  spec.train.patience = 0;
  spec.train.learning_rate = 0.5;
  spec.train.batch_size = 32;
  const auto ens = build_ensemble(ds, spec);
  const auto table = build_score_table(ens);
  std::size_t bad = 0;
  double worst_ratio = 0;
  for (const auto& u : table.users) {
    std::vector<double> scores;
    for (const auto& s : table.user_interactions(u.user)) scores.push_back(s.score);
    const double tol = 4 * std::numeric_limits<double>::epsilon() * static_cast<double>(scores.size());
    const double err = std::abs(u.score - neumaier_mean(scores));
    worst_ratio = std::max(worst_ratio, err / tol);
    bad += err > tol;
  }
  return verdict(bad == 0 && table.users.size() == ds->num_users(),
                 std::to_string(table.users.size()) + " users, worst error " +
                     fmt("%.3f of 4*eps*|I_u|", worst_ratio));
}

Outcome gradient_checks() {
  double worst = 0;
  std::size_t checked = 0;
  const std::pair<ModelFamily, int> cases[] = {
      {ModelFamily::mf_logit, 0}, {ModelFamily::ncf, 0},      {ModelFamily::lightgcn, 0},
      {ModelFamily::lightgcn, 1}, {ModelFamily::lightgcn, 2}, {ModelFamily::lightgcn, 3}};
  for (const auto& [family, layers] : cases)
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      // 8 users + 12 items = 20 graph nodes.
      const auto batch = testing::random_batch(8, 12, 24, seed);
      const auto model = testing::random_model(family, 8, 12, 5, layers, batch, seed * 31);
      const auto r = testing::check_gradients(model, batch);
      worst = std::max(worst, r.max_rel_error);
      checked += r.checked;
    }
  return verdict(worst < 1e-4, std::to_string(checked) + " parameters, max relative error " + fmt("%.3g", worst));
}

RunConfig mia_config(const fs::path& out) {
  RunConfig c;
  c.dataset = kRoot + "/data/toy.tsv";
  c.min_count = 2;
  c.family = "lightgcn";
  c.mode = "attack";
  c.train.dim = 16;
  c.train.layers = 3;
  c.train.max_epochs = 60;
  c.train.patience = 0;
  c.train.learning_rate = 1.0;
  c.train.batch_size = 32;
  c.m = 64;
  c.seed = 1;
  c.hr_k = 10;
  c.workers = 4;
  c.out = out.string();
  return c;
}

Outcome mia_effectiveness() {
  testing::TempDir dir("acc_mia");
  const auto t0 = Clock::now();
  RunConfig cfg = mia_config(dir / "ensemble");
  cmd_prepare(cfg);
  cmd_attack(dir / "ensemble", dir / "ensemble/target", cfg, dir / "attack");
  const double elapsed = seconds_since(t0);
  const auto m = KeyValues::parse(read_file(dir / "attack/metrics.txt"));
  const double auc = std::stod(m.require("auc")), tpr = std::stod(m.require("tpr@0.1"));

  cfg.nonmembers = "all";
  cmd_attack(dir / "ensemble", dir / "ensemble/target", cfg, dir / "attack_all");
  const auto s = KeyValues::parse(read_file(dir / "attack_all/metrics.txt"));
  return verdict(auc >= 0.80 && tpr >= 0.3 && elapsed <= 900,
                 "lightgcn dim 16, 60 epochs, m 64: AUC " + fmt("%.4f", auc) + ", TPR@0.1 " +
                     fmt("%.4f", tpr) + fmt(", %.1f s", elapsed) + " [held-out items as non-members too: AUC " +
                     fmt("%.4f", std::stod(s.require("auc"))) + ", TPR@0.1 " +
                     fmt("%.4f", std::stod(s.require("tpr@0.1"))) + "]");
}

Outcome removal_directionality() {
  // HR@100 is only informative with well over 100 items, so this uses the
  // toy generator's 300-item variant.
  int wins_a = 0, wins_b = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto ds = std::make_shared<const InteractionDataset>(
        split_leave_two_out(make_toy_dataset({.users = 200, .items = 300})));
    EnsembleSpec spec;
    spec.family = ModelFamily::mf_logit;
    spec.m = 16;
    spec.seed = seed;
    spec.train.dim = 16;
    spec.train.max_epochs = 30;
    spec.train.patience = 0;
    spec.train.learning_rate = 1.0;
    spec.train.batch_size = 64;
    const auto ens = build_ensemble(ds, spec, 4);
    const auto base = make_baseline(ens, 100, 4);
    const auto user = run_removal_experiment(base, {RemovalMode::user_level, 0.05, 0.5, seed}, 4);
    const auto inter = run_removal_experiment(base, {RemovalMode::interaction_level, 0.05, 0.5, seed}, 4);
    const auto rnd = run_removal_experiment(base, {RemovalMode::random_interaction, 0.05, 0.5, seed}, 4);
    const bool a = inter.hr_drop_pct < user.hr_drop_pct;
    const bool b = inter.reduced_user_fraction >= rnd.reduced_user_fraction + 0.1;
    wins_a += a;
    wins_b += b;
    detail += "seed " + std::to_string(seed) + fmt(": HR@100 %.3f, drop user %.2f%%", base.hr_before, user.hr_drop_pct) +
              fmt(" vs inter %.2f%%", inter.hr_drop_pct) +
              fmt(", reduced inter %.2f vs random %.2f", inter.reduced_user_fraction, rnd.reduced_user_fraction) + "; ";
  }
  detail += "votes a " + std::to_string(wins_a) + "/3, b " + std::to_string(wins_b) + "/3";
  return verdict(wins_a >= 2 && wins_b >= 2, detail);
}

Outcome determinism() {
  testing::TempDir dir("acc_det");
  auto run = [&](const std::string& tag) {
    RunConfig c;
    c.dataset = kRoot + "/data/toy.tsv";
    c.min_count = 2;
    c.family = "lightgcn";
    c.train.dim = 8;
    c.train.layers = 2;
    c.train.max_epochs = 6;
    c.train.patience = 2;
    c.train.eval_k = 10;
    c.train.learning_rate = 0.5;
    c.train.batch_size = 64;
    c.m = 8;
    c.seed = 77;
    c.nonmembers = "all";
    c.workers = tag == "a" ? 1 : 4;
    c.out = (dir / tag / "ensemble").string();
    cmd_prepare(c);
    cmd_score(dir / tag / "ensemble", "all", dir / tag / "scores", c.workers);
    cmd_attack(dir / tag / "ensemble", dir / tag / "ensemble/target", c, dir / tag / "attack");
  };
  run("a");
  run("b");
  std::vector<std::string> differ;
  std::size_t compared = 0;
  for (const char* f : {"ensemble/manifest.txt", "ensemble/manifest.sha256", "ensemble/target/model.ckpt",
                        "scores/interactions.csv", "scores/users.csv", "scores/residual.csv",
                        "attack/roc.csv", "attack/metrics.txt"}) {
    ++compared;
    if (read_file(dir / "a" / f) != read_file(dir / "b" / f)) differ.push_back(f);
  }
  std::string detail = std::to_string(compared) + " files compared (1 vs 4 workers)";
  for (const auto& f : differ) detail += "; differs: " + f;
  return verdict(differ.empty(), detail);
}

Outcome ml1m_golden() {
  fs::path path;
  if (const char* env = std::getenv("RECPS_ML1M")) path = env;
  if (path.empty() || !fs::exists(path)) path = kRoot + "/data/ml-1m/ratings.dat";
  if (!fs::exists(path)) return {Verdict::skip, "MovieLens-1M ratings.dat not present (set RECPS_ML1M)"};
  const auto ds = ingest(path, InputFormat::movielens_dat);
  const bool ok = ds.num_users() == 6040 && ds.num_items() == 3706 && ds.size() == 1000209;
  return verdict(ok, std::to_string(ds.num_users()) + " users, " + std::to_string(ds.num_items()) + " items, " +
                         std::to_string(ds.size()) + " interactions");
}

Outcome cost_model() {
  testing::TempDir dir("acc_cost");
  auto prepare_time = [&](std::size_t m, int rep) {
    RunConfig c;
    c.dataset = kRoot + "/data/toy.tsv";
    c.min_count = 2;
    c.family = "mf-logit";
    c.target = false;
    c.train.dim = 16;
    c.train.max_epochs = 30;
    c.train.patience = 0;
    c.train.learning_rate = 0.5;
    c.train.batch_size = 64;
    c.m = m;
    c.seed = 5;
    c.out = (dir / ("m" + std::to_string(m) + "_" + std::to_string(rep))).string();
    const auto t0 = Clock::now();
    cmd_prepare(c);
    return seconds_since(t0);
  };
  std::vector<double> t1, t2;
  for (int rep = 0; rep < 3; ++rep) {
    t1.push_back(prepare_time(16, rep));
    t2.push_back(prepare_time(32, rep));
  }
  std::sort(t1.begin(), t1.end());
  std::sort(t2.begin(), t2.end());
  const double ratio = t2[1] / t1[1];
  return verdict(ratio >= 1.5 && ratio <= 3.0,
                 fmt("median prepare m=16 %.3f s, m=32 %.3f s", t1[1], t2[1]) + fmt(", ratio %.3f", ratio));
}

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int k = 1; k + 1 < argc; ++k)
    if (std::string(argv[k]) == "--only") only = argv[k + 1];

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"stats_kernel_exactness", stats_kernel},
      {"threshold_search_oracle", threshold_oracle},
      {"user_score_mean_exactness", user_mean_exactness},
      {"gradient_checks", gradient_checks},
      {"mia_effectiveness_desk_scale", mia_effectiveness},
      {"removal_directionality", removal_directionality},
      {"end_to_end_determinism", determinism},
      {"ml1m_ingestion_golden", ml1m_golden},
      {"cost_model_shape", cost_model},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name != only) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    failures += o.verdict == Verdict::fail;
    std::printf("%s %s: %s\n", tag, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
