// nuc: simulate, restore and evaluate scene-based nonuniformity correction.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nuc/commands.hpp"

namespace {

using namespace nuc;
using namespace nuc::cli;

constexpr int kExitRuntime = 1;
constexpr int kExitDiverged = 3;

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(k);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--k-list", "not an integer: '" + item + "'");
    }
  }
  return out;
}

void add_simulate_flags(CLI::App* app, SimulateOptions& o, std::string& profile) {
  app->add_option("--profile", profile, "Corruption profile")
      ->check(CLI::IsMember({"radial", "sine"}))
      ->capture_default_str();
  app->add_option("--fovs", o.fovs, "Number of fields of view (groups)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--size", o.size, "Sensor size in pixels")->check(CLI::Range(3, 4096))->capture_default_str();
  app->add_option("--snr", o.snr, "Signal-to-noise ratio (0 = noiseless)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app->add_option("--init-nuc-error", o.init_nuc_error,
                  "Relative error of the simulated laboratory calibration")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app->add_option("--psf-sigma", o.psf_sigma, "Gaussian PSF sigma in pixels (0 = none)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app->add_option("--psf-radius", o.psf_radius, "Gaussian PSF radius")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

void add_solver_flags(CLI::App* app, SolverConfig& c) {
  app->add_option("--cycles", c.outer_iterations, "Alternating cycles")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--lsqr-iters", c.lsqr_iterations, "LSQR iterations per x stage")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--joint-iters", c.joint_iterations,
                  "LSQR iterations of the joint refinement (0 disables it)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads (0 = all cores, capped by NUC_THREADS)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-based nonuniformity correction with homography shifts"};
  app.require_subcommand(1);

  SimulateOptions sim;
  std::string sim_profile = "radial";
  std::string sim_scene;
  std::string sim_out;
  bool sim_force = false;
  CLI::App* simulate_cmd = app.add_subcommand("simulate", "Write a synthetic dataset directory");
  add_simulate_flags(simulate_cmd, sim, sim_profile);
  simulate_cmd->add_option("--k", sim.k, "Observations per group")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  simulate_cmd->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate_cmd->add_option("--scene", sim_scene, "8-bit PGM scene mosaic")->check(CLI::ExistingFile);
  simulate_cmd->add_option("--out", sim_out, "Output directory")->required();
  simulate_cmd->add_flag("--force", sim_force, "Replace an existing dataset in --out");

  RestoreOptions rest;
  std::string rest_in;
  std::string rest_out;
  CLI::App* restore_cmd = app.add_subcommand("restore", "Estimate scene, gain and offset");
  restore_cmd->add_option("--in", rest_in, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  restore_cmd->add_option("--out", rest_out, "Results directory (default <in>/results)");
  restore_cmd->add_option("--init", rest.init, "Initial gain/offset: auto, calib or stats")
      ->check(CLI::IsMember({"auto", "calib", "stats"}))
      ->capture_default_str();
  restore_cmd->add_flag("--record-timings", rest.record_timings,
                        "Store wall-clock stage timings in the manifest");
  add_solver_flags(restore_cmd, rest.solver);

  EvaluateOptions ev;
  std::string ev_truth;
  std::string ev_results;
  std::string ev_out;
  CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "Compare results with ground truth");
  evaluate_cmd->add_option("--truth", ev_truth, "Ground-truth directory (<dataset>/truth)")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate_cmd->add_option("--results", ev_results, "Results directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate_cmd->add_option("--out", ev_out, "Report directory (default --results)");
  evaluate_cmd->add_option("--margin", ev.margin, "Border pixels excluded")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  SweepOptions sw;
  std::string sw_profile = "radial";
  std::string sw_klist = "5,10,20,30,40";
  std::string sw_out;
  CLI::App* sweep_cmd = app.add_subcommand("sweep-k", "Mean Pearson and RMSE against k");
  sweep_cmd->add_option("--k-list", sw_klist, "Comma separated k values")->capture_default_str();
  sweep_cmd->add_option("--repeats", sw.repeats, "Datasets per k")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seed, "First seed; repeat r uses seed + r")->capture_default_str();
  sweep_cmd->add_option("--out", sw_out, "Also write the table to this file");
  add_simulate_flags(sweep_cmd, sw.sim, sw_profile);
  add_solver_flags(sweep_cmd, sw.solver);

  std::string rp_manifest;
  std::string rp_out;
  CLI::App* replay_cmd = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  replay_cmd->add_option("--manifest", rp_manifest, "manifest.txt to replay")
      ->required()
      ->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", rp_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate_cmd->parsed()) {
      sim.profile = profile_kind_from_string(sim_profile);
      if (!sim_scene.empty()) sim.scene = sim_scene;
      prepare_simulate_output(sim_out, sim_force);
      cmd_simulate(sim, sim_out);
    } else if (restore_cmd->parsed()) {
      rest.in = rest_in;
      if (!rest_out.empty()) rest.out = rest_out;
      cmd_restore(rest, std::cerr);
    } else if (evaluate_cmd->parsed()) {
      ev.truth = ev_truth;
      ev.results = ev_results;
      if (!ev_out.empty()) ev.out = ev_out;
      const EvalReport rep = cmd_evaluate(ev);
      std::cout << "mean_rmse_gv=" << io::format_double(rep.mean_rmse) << '\n'
                << "mean_pearson=" << io::format_double(rep.mean_pearson) << '\n'
                << "gain_rmse_percent=" << io::format_double(rep.gain_rmse_pct) << '\n'
                << "offset_rmse_gv=" << io::format_double(rep.offset_rmse) << '\n';
    } else if (sweep_cmd->parsed()) {
      sw.sim.profile = profile_kind_from_string(sw_profile);
      sw.k_list = parse_k_list(sw_klist);
      if (!sw_out.empty()) sw.out = sw_out;
      cmd_sweep_k(sw, std::cout, std::cerr);
    } else if (replay_cmd->parsed()) {
      replay(rp_manifest, rp_out, std::cerr);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return static_cast<int>(CLI::ExitCodes::ValidationError);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
