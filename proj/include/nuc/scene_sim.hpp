#pragma once

// Synthetic thermal datasets: procedural ground-truth scenes, hover-error
// homographies, gain/offset corruption profiles and noisy observations.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nuc/grid.hpp"

namespace nuc {

using Rng = std::mt19937_64;

// Hover-error model for a downward-looking camera. Ranges are half-widths of
// symmetric uniform distributions.
struct HoverModel {
  double t_z_range_m = 0.5;
  double yaw_range_deg = 5.0;
  double roll_range_deg = 0.05;
  double pitch_range_deg = 0.05;
  double tilt_x_range_deg = 0.05;  // psi
  double tilt_y_range_deg = 0.05;  // xi
  double max_translation_px = 1.0;
  double altitude_m = 60.0;
  double fov_deg = 45.0;  // full horizontal field of view of the sensor
  int sensor_height = 66;
  int sensor_width = 66;
  std::uint64_t seed = 0;

  void validate() const;
  double focal_px() const;
  // Ground footprint of one pixel at the model altitude.
  double ground_sample_m() const { return altitude_m / focal_px(); }
};

struct HoverParams {
  double t_x_m = 0.0;
  double t_y_m = 0.0;
  double t_z_m = 0.0;
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  double tilt_x_deg = 0.0;
  double tilt_y_deg = 0.0;
};

// Plane-induced homography K (R + t n^T / z) K^-1 for flat ground at the
// model altitude, normalized so H[3][3] = 1.
Homography build_hover_homography(const HoverParams& p, const HoverModel& model);

struct HoverSample {
  Homography h;
  HoverParams params;
  int draws = 0;  // draws consumed including rejections
};

inline constexpr int kHoverRejectionBudget = 1000;

// Draws parameters uniformly from the model ranges (t_x, t_y within
// +-max_translation_px on the ground), redrawing while the maximum corner
// displacement exceeds max_translation_px. Throws ConfigError after
// kHoverRejectionBudget draws.
HoverSample sample_hover(const HoverModel& model, Rng& rng);
Homography sample_homography(const HoverModel& model, Rng& rng);

enum class ProfileKind { radial, sine, custom };

std::string to_string(ProfileKind kind);
ProfileKind profile_kind_from_string(const std::string& s);

struct CorruptionProfile {
  ProfileKind kind = ProfileKind::custom;
  ImageGrid gain;
  ImageGrid offset;
  double noise_snr = 1000.0;  // <= 0 or infinity disables noise
  std::uint64_t seed = 0;
};

// Scales gain to mean 1 and shifts offset to mean 0 over the full sensor.
void normalize_profile(CorruptionProfile& profile);

// Centered paraboloid gain rescaled to [0.7, 1.3]; offset paraboloid
// 0.5 * ds^2 + dt^2 rescaled to [0, 4 * scene_std]. Both mean-normalized
// unless `normalize` is false.
CorruptionProfile make_radial_profile(int height, int width, double scene_std,
                                      bool normalize = true);

// g = 1 + 0.3 sin(s / 2.5) sin(t / 7.5),
// d = 3.5 scene_std sin((s + t) / 5) sin((s - t) / 10).
CorruptionProfile make_sine_profile(int height, int width, double scene_std,
                                    bool normalize = true);

CorruptionProfile make_profile(ProfileKind kind, int height, int width, double scene_std);

// y = g * (A warp(x, h)) + d + n with n ~ N(0, sigma^2), sigma = std(A warp(x, h)) / snr.
ImageGrid corrupt(const ImageGrid& x, const Homography& h, const CorruptionProfile& profile,
                  Rng& rng, const Psf& psf = Psf::delta());

// Smooth multi-scale random texture quantized to integer gray values 0..255.
ImageGrid make_scene(int height, int width, std::uint64_t seed);

// What the restoration sees: per FOV group, k observations. Observation 0 of
// each group shares the pivot's geometry.
struct ObservationSet {
  std::vector<std::vector<ImageGrid>> groups;
  Psf psf;

  std::size_t group_count() const { return groups.size(); }
  std::size_t observation_count() const;
  int height() const { return groups.at(0).at(0).height(); }
  int width() const { return groups.at(0).at(0).width(); }
  void validate() const;
};

struct FovTruth {
  ImageGrid pivot;
  std::vector<Homography> homographies;
  int origin_row = 0;
  int origin_col = 0;
};

struct Dataset {
  ObservationSet observations;
  std::vector<FovTruth> truth;
  CorruptionProfile profile;
  double scene_std = 0.0;
  std::vector<std::vector<VisibilityMask>> masks;  // W for each observation
};

struct DatasetOptions {
  int size = 66;
  double snr = 1000.0;
  Psf psf = Psf::delta();
};

// Crops `fovs` disjoint size x size tiles from the mosaic (row-major tile
// order), corrupts k hover-shifted views of each, observation 0 unshifted.
// Throws ConfigError when the mosaic cannot hold the tiles.
Dataset build_dataset(const ImageGrid& mosaic, int fovs, int k, const HoverModel& model,
                      ProfileKind kind, std::uint64_t seed,
                      const DatasetOptions& options = DatasetOptions{});

// Mosaic dimensions large enough for `fovs` disjoint tiles of `size` pixels.
std::pair<int, int> mosaic_shape_for(int fovs, int size);

}  // namespace nuc
