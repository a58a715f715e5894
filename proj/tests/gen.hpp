#pragma once

// Hand-rolled generators shared by the unit tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "nuc/grid.hpp"
#include "nuc/scene_sim.hpp"

namespace gen {

using nuc::Homography;
using nuc::ImageGrid;
using nuc::VisibilityMask;

inline double uniform(nuc::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int integer(nuc::Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline ImageGrid image(nuc::Rng& rng, int h, int w, double lo = -1.0, double hi = 1.0) {
  ImageGrid out(h, w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uniform(rng, lo, hi);
  return out;
}

inline VisibilityMask mask(nuc::Rng& rng, int h, int w, double p_set = 0.7) {
  VisibilityMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, uniform(rng, 0.0, 1.0) < p_set);
  return m;
}

inline ImageGrid masked_image(nuc::Rng& rng, int h, int w, double p_valid = 0.7) {
  ImageGrid out = image(rng, h, w);
  out.apply_mask(mask(rng, h, w, p_valid));
  return out;
}

// Hover-model homography for a sensor of the given size.
inline Homography hover(nuc::Rng& rng, int h = 66, int w = 66) {
  nuc::HoverModel model;
  model.sensor_height = h;
  model.sensor_width = w;
  return nuc::sample_homography(model, rng);
}

// Small generic projective perturbation of the identity.
inline Homography near_identity(nuc::Rng& rng, double shift = 1.0) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) += uniform(rng, -0.02, 0.02);
  m(0, 1) += uniform(rng, -0.02, 0.02);
  m(1, 0) += uniform(rng, -0.02, 0.02);
  m(1, 1) += uniform(rng, -0.02, 0.02);
  m(0, 2) = uniform(rng, -shift, shift);
  m(1, 2) = uniform(rng, -shift, shift);
  m(2, 0) = uniform(rng, -1e-4, 1e-4);
  m(2, 1) = uniform(rng, -1e-4, 1e-4);
  return Homography::from_matrix(m);
}

// Textured scene with values in gray levels.
inline ImageGrid scene(std::uint64_t seed, int h = 66, int w = 66) {
  return nuc::make_scene(h, w, seed);
}

inline double relative(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace gen
