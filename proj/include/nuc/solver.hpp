#pragma once

// Joint recovery of scene radiance, per-pixel gain and per-pixel offset by
// alternating minimization of
//
//   sum_ij || W_ij (G A S^{H_ij} x_i + d - y_j) ||^2
//
// over the homographies (registration), the gain/offset maps (pixel-wise
// regression) and the pivot images (matrix-free LSQR), with the gain mean
// fixed at 1 and the offset mean at 0.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nuc/grid.hpp"
#include "nuc/registration.hpp"
#include "nuc/scene_sim.hpp"

namespace nuc {

struct GainOffsetMap {
  ImageGrid gain;
  ImageGrid offset;
  VisibilityMask support;  // pixels whose g, d were estimated from enough samples

  static GainOffsetMap identity(int height, int width);
};

struct SolverConfig {
  int outer_iterations = 10;
  int lsqr_iterations = 20;
  int min_pixel_pairs = 2;
  double variance_floor_rel = 1e-9;           // times the pooled observation variance
  std::optional<double> variance_floor;       // absolute override
  RegistrationConfig registration;
  bool normalize_each_cycle = true;
  double early_exit_rel = 1e-8;  // relative objective decrease over a full cycle
  int template_search_radius = 3;
  int joint_iterations = 150;  // LSQR budget of the joint refinement; 0 disables it
  double joint_min_gain = 1e-3;  // relative decrease below which later cycles skip it
  int joint_backtracks = 10;
  int threads = 1;

  void validate() const;
};

struct SolverState {
  std::vector<ImageGrid> x;                      // one pivot estimate per group
  GainOffsetMap gd;
  std::vector<std::vector<Homography>> h;        // [group][observation]
  std::vector<std::vector<bool>> registration_failed;
  std::vector<double> objective_history;
  std::vector<std::string> stage_history;        // stage that produced each objective entry
  std::vector<int> cycle_history;
  int cycle = 0;
  double variance_floor = 0.0;
};

struct ProgressRecord {
  int cycle = 0;
  std::string stage;
  double objective = 0.0;
  double wall_seconds = 0.0;
};

using ProgressSink = std::function<void(const ProgressRecord&)>;

// Radiance predicted for one observation, A S^H x, with its validity.
ImageGrid predict_radiance(const ImageGrid& x, const Homography& h, const Psf& psf);

// Pixels where observation y and its prediction are both valid (W_ij).
VisibilityMask residual_mask(const ImageGrid& x, const Homography& h, const Psf& psf,
                             const ImageGrid& y);

double objective(const SolverState& state, const ObservationSet& obs);

// Pooled variance of every valid observation pixel times the relative floor,
// unless an absolute floor is configured.
double resolve_variance_floor(const ObservationSet& obs, const SolverConfig& cfg);

// Raw statistics initialization: d0 = masked mean, g0 = masked standard
// deviation of all observations at each pixel. Pixels with variance below the
// floor get g0 = sqrt(floor) and leave the support; pixels with no samples get
// (g, d) = (1, 0). No normalization is applied here; solve() normalizes the
// full state through the scale/shift ambiguity.
GainOffsetMap init_gd(const ObservationSet& obs, double variance_floor);

// Simulated laboratory two-point correction: the true maps perturbed by
// smooth fields, gain multiplicatively by at most `perturbation` and offset
// additively by at most `perturbation` times max |d|.
GainOffsetMap initial_nuc(const CorruptionProfile& truth, double perturbation,
                          std::uint64_t seed = 0);

// x_i = (y - d) / g where g is usable; other pixels invalid.
ImageGrid clean_observation(const ImageGrid& y, const GainOffsetMap& gd);

enum class GroupStatus { solved, skipped_empty };

// Per group, warm-started LSQR on the stacked masked system of that group's
// observations. Throws InternalError if the operator fails its adjoint check.
std::vector<GroupStatus> x_stage(SolverState& state, const ObservationSet& obs,
                                 const SolverConfig& cfg);

// Closed-form per-pixel regression g = Cov(P, y) / Var(P), d = <y> - g <P>.
// Pixels with too few samples, variance below the floor, or a nonpositive
// slope keep their previous values and leave the support.
GainOffsetMap gd_stage(const SolverState& state, const ObservationSet& obs,
                       const SolverConfig& cfg);

struct JointStepResult {
  int iterations = 0;
  double step = 0.0;  // accepted step length, 0 when the state was left unchanged
};

// One Gauss-Newton step on (x, g, d) jointly with the homographies fixed: the
// linearized system g A S dx_i + (A S x_i) dg + dd = y - (g A S x_i + d) is
// solved by column-scaled LSQR, then applied with backtracking so the
// objective strictly decreases or the state is left untouched. Gain/offset
// outside the support stay fixed.
JointStepResult joint_stage(SolverState& state, const ObservationSet& obs,
                            const SolverConfig& cfg);

// Re-registers every non-reference observation against its group's pivot
// estimate, warm-started from the previous homography. Returns the number of
// failed pairs; failed pairs keep their previous homography and are flagged.
int registration_stage(SolverState& state, const ObservationSet& obs, const SolverConfig& cfg);

// Applies (x, g, d) -> (a x + b, g / a, d - (b / a) g).
void apply_ambiguity(SolverState& state, double a, double b);

// Maps the state onto mean(g) = 1, mean(d) = 0 over the support through the
// scale/shift ambiguity, leaving the objective unchanged. Throws
// NormalizationError when mean(g) <= 0 or the support is empty.
void normalize(SolverState& state);

// Full alternating minimization. `initial` defaults to init_gd(). Throws
// DivergenceError naming the stage if the objective turns non-finite.
SolverState solve(const ObservationSet& obs, const std::optional<GainOffsetMap>& initial,
                  const SolverConfig& cfg, const ProgressSink& progress = {});

}  // namespace nuc
