#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fleet/ablations.hpp"
#include "fleet/harness.hpp"
#include "fleet/lp_realloc.hpp"
#include "fleet/rng.hpp"

namespace {

using namespace fleet;

struct CommonOpts {
  std::string config_path;
  std::string scenario = "desk";
  std::string method;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_method = true) {
  cmd->add_option("--config", opts.config_path, "experiment config (json)");
  cmd->add_option("--scenario", opts.scenario, "built-in scenario when no config: desk | tiny");
  if (with_method) cmd->add_option("--method", opts.method, "method override");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "master seed override (derives train/eval/fit seeds)")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = ExperimentConfig::load(opts.config_path);
  } else if (opts.scenario == "desk") {
    cfg = desk_scenario();
  } else if (opts.scenario == "tiny") {
    cfg = tiny_scenario();
  } else {
    throw std::invalid_argument("unknown scenario '" + opts.scenario + "' (desk | tiny)");
  }
  if (!opts.method.empty()) {
    cfg.method.name = opts.method;
    cfg.method.label.clear();
  }
  if (!opts.out_dir.empty()) cfg.run.out_dir = opts.out_dir;
  if (opts.seed_set) {
    cfg.run.train_seed = opts.seed;
    cfg.run.eval_seed = opts.seed + 1;
    cfg.run.fit_seed = opts.seed + 2;
  }
  return cfg;
}

void print_aggregate(const ExperimentResult& res) {
  std::printf("%-18s scenario %s\n", res.aggregate.method.c_str(),
              res.aggregate.scenario.c_str());
  std::printf("  gmv  %10.2f +- %.2f\n", res.aggregate.gmv_mean, res.aggregate.gmv_std);
  std::printf("  orr  %10.4f +- %.4f\n", res.aggregate.orr_mean, res.aggregate.orr_std);
  std::printf("  repositions per episode %10.1f\n", res.aggregate.repositions_mean);
}

void print_comparison(const std::vector<ComparisonRow>& rows) {
  std::printf("%-20s %12s %8s %8s %12s %10s\n", "method", "norm_gmv", "std", "orr",
              "repositions", "roi");
  for (const auto& r : rows) {
    std::printf("%-20s %12.2f %8.2f %8.4f %12.1f %10s\n", r.method.c_str(), r.norm_gmv_mean,
                r.norm_gmv_std, r.orr_mean, r.repositions_mean,
                r.roi ? std::to_string(*r.roi).substr(0, 7).c_str() : "-");
  }
}

int cmd_oracle_check(int instances, uint64_t seed) {
  Rng rng(seed);
  double worst_gap = 0.0;
  int conservation_failures = 0;
  for (int trial = 0; trial < instances; ++trial) {
    const int pick = (int)rng.uniform_int(4);
    GridWorld w = pick == 0   ? GridWorld::build(1, 2)
                  : pick == 1 ? GridWorld::build(1, 3)
                  : pick == 2 ? GridWorld::build(2, 2)
                              : GridWorld::build(2, 3);
    const int n = w.n_grids();
    Eigen::VectorXd v(n), d(n), o(n);
    int agents_left = 6;
    for (int g = 0; g < n; ++g) {
      v(g) = rng.uniform_real(0.0, 20.0);
      const int take = (int)rng.uniform_int((uint64_t)(agents_left + 1));
      d(g) = take;
      agents_left -= take;
      o(g) = (double)rng.uniform_int(4);
    }
    const double cost = rng.bernoulli(0.5) ? 0.6 : 0.0;
    const double lambdas[] = {0.0, 0.3, 1.0, 3.0};
    const RepositionProblem p = build_problem(v, d, o, w, cost, lambdas[rng.uniform_int(4)]);
    const RelaxResult relax = solve_relaxation(p);
    const RepositionPlan plan = round_to_integer(relax.y, p);
    const OracleResult oracle = brute_force_oracle(p);
    const double rounded = reposition_objective(p, plan.y.cast<double>());
    const double gap = (oracle.objective - rounded) / std::max(1.0, std::abs(oracle.objective));
    worst_gap = std::max(worst_gap, gap);
    if (((p.B * plan.y.cast<double>()) - p.d).cwiseAbs().maxCoeff() != 0.0)
      ++conservation_failures;
  }
  std::printf("oracle-check: %d instances, worst rounding gap %.4f%%, %d conservation failures\n",
              instances, 100.0 * worst_gap, conservation_failures);
  const bool ok = worst_gap <= 0.02 && conservation_failures == 0;
  std::printf("oracle-check: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hex-grid fleet management simulator and reallocation methods"};
  app.require_subcommand(1);

  CommonOpts sim_opts, train_opts, eval_opts, cmp_opts, abl_opts, mk_opts;
  std::string eval_artifacts;
  std::vector<std::string> cmp_methods;
  std::string abl_preset;
  std::string mk_out = "config.json";
  int oracle_instances = 100;
  uint64_t oracle_seed = 12345;
  bool sim_write_logs = false;

  CLI::App* c_sim = app.add_subcommand("simulate", "run the no-management baseline");
  add_common(c_sim, sim_opts, false);
  c_sim->add_flag("--write-logs", sim_write_logs, "write per-episode jsonl logs");

  CLI::App* c_train = app.add_subcommand("train", "train a method and save artifacts");
  add_common(c_train, train_opts);

  CLI::App* c_eval = app.add_subcommand("evaluate", "evaluate saved artifacts");
  add_common(c_eval, eval_opts);
  c_eval->add_option("--artifacts", eval_artifacts, "artifacts directory from train")->required();

  CLI::App* c_cmp = app.add_subcommand("compare", "run several methods on one scenario");
  add_common(c_cmp, cmp_opts, false);
  c_cmp->add_option("--methods", cmp_methods, "method names")->delimiter(',');

  CLI::App* c_oracle = app.add_subcommand("oracle-check", "verify solve+round against brute force");
  c_oracle->add_option("--instances", oracle_instances, "instance count");
  c_oracle->add_option("--seed", oracle_seed, "instance seed");

  CLI::App* c_abl = app.add_subcommand("ablation", "run an ablation preset");
  add_common(c_abl, abl_opts);
  c_abl->add_option("--preset", abl_preset, "table5-reward | table6-context | table8-group-reg")
      ->required();

  CLI::App* c_mk = app.add_subcommand("make-config", "write a built-in scenario as json");
  c_mk->add_option("--scenario", mk_opts.scenario, "desk | tiny");
  c_mk->add_option("--out", mk_out, "output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_sim->parsed()) {
      ExperimentConfig cfg = resolve_config(sim_opts);
      cfg.method = MethodConfig{};
      cfg.method.name = "Simulation";
      cfg.run.write_logs = sim_write_logs;
      print_aggregate(run_experiment(cfg));
      return 0;
    }
    if (c_train->parsed()) {
      ExperimentConfig cfg = resolve_config(train_opts);
      if (cfg.run.out_dir.empty()) cfg.run.out_dir = "out";
      train_only(cfg);
      std::printf("trained %s; artifacts under %s/%s\n", cfg.method.display_name().c_str(),
                  cfg.run.out_dir.c_str(), cfg.method.display_name().c_str());
      return 0;
    }
    if (c_eval->parsed()) {
      ExperimentConfig cfg = resolve_config(eval_opts);
      print_aggregate(evaluate_trained(cfg, eval_artifacts));
      return 0;
    }
    if (c_cmp->parsed()) {
      ExperimentConfig cfg = resolve_config(cmp_opts);
      if (cmp_methods.empty())
        cmp_methods = {"Diffusion", "Rule-based", "Value-Iter", "T-Q",
                       "T-SARSA",   "DQN",        "cDQN",       "cA2C",
                       "LP-cA2C"};
      const auto rows = compare(cfg, cmp_methods);
      print_comparison(rows);
      if (!cfg.run.out_dir.empty())
        write_comparison_csv(rows, cfg.scenario_hash(), cfg.run.out_dir + "/comparison.csv");
      return 0;
    }
    if (c_oracle->parsed()) return cmd_oracle_check(oracle_instances, oracle_seed);
    if (c_abl->parsed()) {
      ExperimentConfig cfg = resolve_config(abl_opts);
      const AblationReport report = run_ablation_preset(abl_preset, cfg);
      print_comparison(report.rows);
      std::printf("%s: %s (%s)\n", report.preset.c_str(),
                  report.direction_holds ? "direction holds" : "direction violated",
                  report.summary.c_str());
      if (!cfg.run.out_dir.empty())
        write_comparison_csv(report.rows, cfg.scenario_hash(),
                             cfg.run.out_dir + "/" + report.preset + ".csv");
      return report.direction_holds ? 0 : 1;
    }
    if (c_mk->parsed()) {
      ExperimentConfig cfg =
          mk_opts.scenario == "tiny" ? tiny_scenario() : desk_scenario();
      cfg.save(mk_out);
      std::printf("wrote %s\n", mk_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
