// recps: privacy scoring pipeline for interaction-probability recommenders.
//
//   recps prepare --config run.conf --out ens/
//   recps score   --ensemble ens/ --users all --out scores/
//   recps attack  --ensemble ens/ --out attack/
//   recps unlearn --config run.conf --ensemble ens/ --out unlearn/
//   recps report  ens/ scores/ attack/
//
// Every config key may be given as --<key> VALUE or --set key=VALUE.
// Precedence: defaults < --config file < --set < --<key>.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recps/errors.hpp"
#include "recps/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct Overrides {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
};

recps::RunConfig resolve(const Overrides& o) {
  recps::RunConfig cfg;
  if (!o.config.empty()) cfg = recps::RunConfig::load(o.config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw recps::ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : o.flags) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

fs::path need_dir(const std::string& value, const char* flag) {
  if (value.empty()) throw recps::ConfigError(std::string(flag) + " is required");
  if (!fs::is_directory(value)) throw recps::ConfigError(std::string(flag) + ": not a directory: " + value);
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Membership-inference privacy scoring for recommender training data"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides over;
  app.add_option("--config", over.config, "flat key=value run config");
  app.add_option("--set", over.sets, "override one config key (key=value), repeatable");
  for (const auto& key : recps::RunConfig::keys()) {
    app.add_option_function<std::string>(
        "--" + key, [&over, key](const std::string& v) { over.flags[key] = v; },
        "config key '" + key + "' (default " + recps::RunConfig{}.get(key) + ")");
  }

  std::string ensemble, users = "all", target;
  std::vector<std::string> report_dirs;

  auto* prepare = app.add_subcommand("prepare", "ingest, split, train shadow ensemble (and target)");
  auto* score = app.add_subcommand("score", "per-interaction and per-user privacy scores");
  score->add_option("--ensemble", ensemble)->required();
  score->add_option("--users", users, "'all' or comma-separated user keys");
  auto* attack = app.add_subcommand("attack", "membership inference against a target model");
  attack->add_option("--ensemble", ensemble)->required();
  attack->add_option("--target", target, "target directory (default <ensemble>/target)");
  auto* unlearn = app.add_subcommand("unlearn", "score-guided removal experiments");
  unlearn->add_option("--ensemble", ensemble)->required();
  auto* report = app.add_subcommand("report", "summarize output directories");
  report->add_option("dirs", report_dirs)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const recps::RunConfig cfg = resolve(over);
    if (prepare->parsed()) {
      if (cfg.dataset.empty()) throw recps::ConfigError("no dataset configured (--dataset)");
      if (!fs::exists(cfg.dataset)) throw recps::ConfigError("dataset not found: " + cfg.dataset);
      const fs::path dir = recps::cmd_prepare(cfg);
      std::cout << "ensemble written to " << dir.string() << "\n";
    } else if (score->parsed()) {
      if (cfg.out.empty()) throw recps::ConfigError("--out is required");
      recps::cmd_score(need_dir(ensemble, "--ensemble"), users, cfg.out, cfg.workers);
      std::cout << "scores written to " << cfg.out << "\n";
    } else if (attack->parsed()) {
      if (cfg.out.empty()) throw recps::ConfigError("--out is required");
      const fs::path ens = need_dir(ensemble, "--ensemble");
      const fs::path tgt = target.empty() ? ens / "target" : fs::path(target);
      const double auc = recps::cmd_attack(ens, need_dir(tgt.string(), "--target"), cfg, cfg.out);
      std::cout << "auc=" << recps::format_double(auc) << "\n";
    } else if (unlearn->parsed()) {
      if (cfg.out.empty()) throw recps::ConfigError("--out is required");
      recps::cmd_unlearn(cfg, need_dir(ensemble, "--ensemble"), cfg.out);
      std::cout << "removal reports written to " << cfg.out << "\n";
    } else if (report->parsed()) {
      std::vector<fs::path> dirs;
      for (const auto& d : report_dirs) dirs.push_back(need_dir(d, "report"));
      std::cout << recps::cmd_report(dirs);
    }
  } catch (const recps::ConfigError& e) {
    std::cerr << "recps: config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "recps: error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
