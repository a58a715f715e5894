#pragma once

// The command-line workflows: simulate a dataset directory, restore it,
// evaluate against its ground truth, and sweep the group size k.
//
// Dataset layout (written by simulate):
//   obs/dataset.txt, obs/y_gGG_oOO.nucf     what the solver may read
//   calib/gain.nucf, calib/offset.nucf      approximate two-point correction
//   truth/...                               ground truth, never read by restore
//   manifest.txt
//
// Results layout (written by restore, default <dataset>/results):
//   x_gGG.nucf/.pgm, gain.nucf, offset.nucf, support.pgm, H_gGG_oOO.txt,
//   objective.txt, manifest.txt

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nuc/io.hpp"
#include "nuc/metrics.hpp"
#include "nuc/scene_sim.hpp"
#include "nuc/solver.hpp"

namespace nuc::cli {

namespace fs = std::filesystem;

// Worker count: `requested` (0 = hardware concurrency) capped by NUC_THREADS.
int resolve_threads(int requested);

struct SimulateOptions {
  ProfileKind profile = ProfileKind::radial;
  int fovs = 8;
  int k = 8;
  int size = 66;
  double snr = 1000.0;
  std::uint64_t seed = 0;
  std::optional<fs::path> scene;  // 8-bit PGM mosaic; procedural when absent
  double init_nuc_error = 0.05;   // perturbation of the simulated lab calibration
  double psf_sigma = 0.0;         // 0 = no blur
  int psf_radius = 2;
  HoverModel hover;

  void validate() const;
};

struct RestoreOptions {
  fs::path in;
  std::optional<fs::path> out;
  SolverConfig solver;
  std::string init = "auto";  // auto | calib | stats
  bool record_timings = false;
};

struct EvaluateOptions {
  fs::path truth;
  fs::path results;
  std::optional<fs::path> out;
  int margin = 1;
};

struct SweepOptions {
  std::vector<int> k_list{5, 10, 20, 30, 40};
  int repeats = 30;
  std::uint64_t seed = 0;
  SimulateOptions sim;
  SolverConfig solver;
  std::optional<fs::path> out;
};

struct SweepRow {
  int k = 0;
  int repeats = 0;
  double mean_pearson = 0.0;
  double mean_rmse = 0.0;
  double min_pearson = 0.0;
  double max_rmse = 0.0;
};

// Simulated dataset with its calibration, fully in memory.
struct SimulatedRun {
  Dataset dataset;
  GainOffsetMap calibration;
};

SimulatedRun simulate(const SimulateOptions& opt);

struct PipelineResult {
  SolverState state;
  EvalReport report;
};

// simulate -> restore (from the calibration) -> evaluate without touching disk.
PipelineResult run_pipeline(const SimulateOptions& sim, const SolverConfig& solver,
                            const ProgressSink& progress = {});

// Refuses a non-empty `out` unless `force`, which clears the dataset entries.
void prepare_simulate_output(const fs::path& out, bool force);
void cmd_simulate(const SimulateOptions& opt, const fs::path& out);
void cmd_restore(const RestoreOptions& opt, std::ostream& log);
EvalReport cmd_evaluate(const EvaluateOptions& opt);
// Called after every (k, repeat) run of the sweep.
using SweepObserver = std::function<void(int k, int repeat, const PipelineResult&)>;

std::vector<SweepRow> cmd_sweep_k(const SweepOptions& opt, std::ostream& table, std::ostream& log,
                                  const SweepObserver& observer = {});
std::string format_sweep_table(const std::vector<SweepRow>& rows);

// Re-runs the command recorded in a manifest into `out`.
void replay(const fs::path& manifest, const fs::path& out, std::ostream& log);

// Readers for the directory layouts above.
ObservationSet read_observations(const fs::path& dataset);
std::vector<ImageGrid> read_truth_pivots(const fs::path& truth);

}  // namespace nuc::cli
