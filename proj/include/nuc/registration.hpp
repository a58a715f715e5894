#pragma once

// Homography registration of a pivot image against an observation:
// integer template matching for the starting shift, then forward-additive
// Lucas-Kanade iterations solved by Gauss-Newton.

#include <array>

#include <Eigen/Core>

#include "nuc/grid.hpp"

namespace nuc {

struct RegistrationConfig {
  int max_gn_iterations = 50;
  int boundary_margin = 1;      // pixels excluded on each side
  double damping = 0.0;         // added to the diagonal of M^T M
  double step_tolerance = 1e-10;  // early exit on ||dH||_inf
  double max_condition = 1e12;
  int min_pixels = 50;

  void validate() const;
};

// Integer translation (t_x, t_y) minimizing the mean squared difference
// between pivot(s + t_x, t + t_y) and obs(s, t) over their overlap. Ties go to
// the smallest shift norm, then lexicographic (t_x, t_y). Throws
// RegistrationFailureError when the best overlap covers < 25% of the image.
Homography template_match_shift(const ImageGrid& pivot, const ImageGrid& obs, int search_radius);

struct Gradients {
  ImageGrid ds;  // d/ds (columns)
  ImageGrid dt;  // d/dt (rows)
};

// Central differences with the [-1/2, 0, 1/2] stencil; border pixels and
// pixels next to invalid data are invalid.
Gradients image_gradients(const ImageGrid& image);

using JacobianRow = std::array<double, 9>;

// Derivative of the warped intensity X(H1 e / H3 e, H2 e / H3 e) at pixel
// (s, t) with respect to the row-major entries of H, given the image
// gradient (grad_s, grad_t) at the warped location. Throws
// DegeneratePointError when |H3 e| < 1e-9.
JacobianRow gn_jacobian_row(double grad_s, double grad_t, double s, double t,
                            const Eigen::Matrix3d& h);
JacobianRow gn_jacobian_row(double grad_s, double grad_t, double s, double t,
                            const Homography& h);

struct RegistrationResult {
  Homography h;
  double initial_rms = 0.0;
  double final_rms = 0.0;  // residual RMS of the returned iterate
  int iterations = 0;       // Gauss-Newton steps taken
};

// Minimizes ||warp(pivot, H) - obs|| over interior valid pixels starting at
// `init`. Each step solves (M^T M + damping I) dH = -M^T r with H[3][3] held
// at 1, and the lowest-residual iterate is returned.
RegistrationResult register_homography(const ImageGrid& pivot, const ImageGrid& obs,
                                       const Homography& init,
                                       const RegistrationConfig& cfg = RegistrationConfig{});

}  // namespace nuc
