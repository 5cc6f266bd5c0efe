// Command-line interface for the multi-view ellipsoid estimation library:
// synthetic data generation, fitting, evaluation, gradient validation,
// and a weighting benchmark. Data outputs go to files or stdout;
// diagnostics go to stderr.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mvq/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"multi-view dual-quadric estimation toolkit"};
  app.require_subcommand(1);

  mvq::SimulateArgs sim;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic scene and detections");
  simulate->add_option("--config", sim.config_path, "experiment config JSON")->required();
  CLI::Option* sim_seed_opt = simulate->add_option("--seed", sim_seed, "override config seed");
  CLI::Option* sim_out_opt = simulate->add_option("--out", sim_out, "override output directory");

  mvq::FitArgs fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "estimate ellipsoids from detections");
  fit_cmd->add_option("--scene", fit.scene_path, "scene JSON (cameras)")->required();
  fit_cmd->add_option("--detections", fit.detections_path, "detections JSON")->required();
  fit_cmd->add_option("--out", fit.out_path, "results JSON path");
  fit_cmd->add_option("--weights", fit.weights, "oracle|identity|shuffled")
      ->check(CLI::IsMember({"oracle", "identity", "shuffled"}));
  fit_cmd->add_option("--view-fraction", fit.view_fraction, "1|1/2|1/4")
      ->check(CLI::IsMember({"1", "1/2", "1/4"}));
  fit_cmd->add_flag("--no-divergence", fit.no_divergence,
                    "fit with offset channels only");
  fit_cmd->add_flag("--strict", fit.strict, "error out instead of dropping bad views");
  fit_cmd->add_option("--seed", fit.seed, "seed for the shuffled weights mode");

  mvq::EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score results against ground truth");
  eval_cmd->add_option("--scene", eval.scene_path, "scene JSON (ground truth)")->required();
  eval_cmd->add_option("--results", eval.results_path, "results JSON")->required();
  eval_cmd->add_option("--out", eval.out_path, "output CSV path");
  eval_cmd->add_option("--samples", eval.samples, "Monte Carlo samples per object");
  eval_cmd->add_option("--seed", eval.seed, "Monte Carlo seed");

  mvq::GradcheckArgs grad;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "validate loss-kernel gradients");
  grad_cmd->add_option("--seed", grad.seed, "configuration seed");
  grad_cmd->add_option("--count", grad.count, "configurations per kernel");
  grad_cmd->add_option("--step", grad.step, "finite difference step");
  grad_cmd
      ->add_option("--inject-bug", grad.inject,
                   "bias a kernel's gradient (negative control)")
      ->check(CLI::IsMember({"offset", "observation"}))
      ->group("");  // hidden

  mvq::BenchArgs bench;
  int bench_trials = 0;
  std::uint64_t bench_seed = 0;
  CLI::App* bench_cmd = app.add_subcommand("bench", "oracle-vs-identity weighting benchmark");
  bench_cmd->add_option("--config", bench.config_path, "experiment config JSON")->required();
  bench_cmd->add_option("--out", bench.out_path, "output CSV path");
  CLI::Option* bench_trials_opt =
      bench_cmd->add_option("--trials", bench_trials, "override config trials");
  CLI::Option* bench_seed_opt =
      bench_cmd->add_option("--seed", bench_seed, "override config seed");

  CLI11_PARSE(app, argc, argv);

  if (*sim_seed_opt) sim.seed = sim_seed;
  if (*sim_out_opt) sim.out_dir = sim_out;
  if (*bench_trials_opt) bench.trials = bench_trials;
  if (*bench_seed_opt) bench.seed = bench_seed;

  return mvq::run_command(
      [&]() -> int {
        if (simulate->parsed()) return mvq::cmd_simulate(sim, std::cerr);
        if (fit_cmd->parsed()) return mvq::cmd_fit(fit, std::cerr);
        if (eval_cmd->parsed()) return mvq::cmd_eval(eval, std::cerr);
        if (grad_cmd->parsed()) return mvq::cmd_gradcheck(grad, std::cout, std::cerr);
        if (bench_cmd->parsed()) return mvq::cmd_bench(bench, std::cerr);
        return 1;
      },
      std::cerr);
}
