#include "nuc/registration.hpp"

#include <array>

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

namespace nuc {

void RegistrationConfig::validate() const {
  if (max_gn_iterations < 1) throw ConfigError("max_gn_iterations must be >= 1");
  if (boundary_margin < 1) throw ConfigError("boundary_margin must be >= 1");
  if (damping < 0) throw ConfigError("damping must be nonnegative");
  if (step_tolerance < 0) throw ConfigError("step_tolerance must be nonnegative");
}

Homography template_match_shift(const ImageGrid& pivot, const ImageGrid& obs, int search_radius) {
  if (!pivot.same_shape(obs)) throw ConfigError("template matching needs equal image sizes");
  if (search_radius < 0) throw ConfigError("search radius must be nonnegative");
  const int h = obs.height();
  const int w = obs.width();

  std::vector<std::tuple<int, int, int>> shifts;  // (norm^2, tx, ty)
  for (int ty = -search_radius; ty <= search_radius; ++ty)
    for (int tx = -search_radius; tx <= search_radius; ++tx)
      shifts.emplace_back(tx * tx + ty * ty, tx, ty);
  std::sort(shifts.begin(), shifts.end());

  double best = std::numeric_limits<double>::infinity();
  int best_tx = 0;
  int best_ty = 0;
  std::size_t best_overlap = 0;
  for (const auto& [n2, tx, ty] : shifts) {
    double ssd = 0.0;
    std::size_t overlap = 0;
    for (int t = 0; t < h; ++t) {
      const int pt = t + ty;
      if (pt < 0 || pt >= h) continue;
      for (int s = 0; s < w; ++s) {
        const int ps = s + tx;
        if (ps < 0 || ps >= w || !obs.valid(t, s) || !pivot.valid(pt, ps)) continue;
        const double d = pivot(pt, ps) - obs(t, s);
        ssd += d * d;
        ++overlap;
      }
    }
    if (overlap == 0) continue;
    const double score = ssd / static_cast<double>(overlap);
    if (score < best) {
      best = score;
      best_tx = tx;
      best_ty = ty;
      best_overlap = overlap;
    }
  }
  if (4 * best_overlap < static_cast<std::size_t>(h) * static_cast<std::size_t>(w))
    throw RegistrationFailureError("template matching overlap below 25% of the image");
  return Homography::translation(best_tx, best_ty);
}

Gradients image_gradients(const ImageGrid& image) {
  const int h = image.height();
  const int w = image.width();
  Gradients g{ImageGrid(h, w, 0.0, false), ImageGrid(h, w, 0.0, false)};
  for (int t = 0; t < h; ++t)
    for (int s = 0; s < w; ++s) {
      if (s > 0 && s < w - 1 && image.valid(t, s - 1) && image.valid(t, s + 1)) {
        g.ds(t, s) = 0.5 * (image(t, s + 1) - image(t, s - 1));
        g.ds.set_valid(t, s, true);
      }
      if (t > 0 && t < h - 1 && image.valid(t - 1, s) && image.valid(t + 1, s)) {
        g.dt(t, s) = 0.5 * (image(t + 1, s) - image(t - 1, s));
        g.dt.set_valid(t, s, true);
      }
    }
  // Border pixels are invalid in both components.
  for (int t = 0; t < h; ++t)
    for (int s = 0; s < w; ++s) {
      const bool ok = g.ds.valid(t, s) && g.dt.valid(t, s);
      g.ds.set_valid(t, s, ok);
      g.dt.set_valid(t, s, ok);
      if (!ok) {
        g.ds(t, s) = 0.0;
        g.dt(t, s) = 0.0;
      }
    }
  return g;
}

JacobianRow gn_jacobian_row(double grad_s, double grad_t, double s, double t,
                            const Eigen::Matrix3d& h) {
  const double w = h(2, 0) * s + h(2, 1) * t + h(2, 2);
  if (std::abs(w) < 1e-9) throw DegeneratePointError("H3 e vanishes at the requested point");
  const double inv = 1.0 / w;
  const double st = (h(0, 0) * s + h(0, 1) * t + h(0, 2)) * inv;
  const double tt = (h(1, 0) * s + h(1, 1) * t + h(1, 2)) * inv;
  const double proj = -(st * grad_s + tt * grad_t);
  return {inv * s * grad_s, inv * t * grad_s, inv * grad_s,
          inv * s * grad_t, inv * t * grad_t, inv * grad_t,
          inv * s * proj,   inv * t * proj,   inv * proj};
}

JacobianRow gn_jacobian_row(double grad_s, double grad_t, double s, double t,
                            const Homography& h) {
  return gn_jacobian_row(grad_s, grad_t, s, t, h.matrix());
}

namespace {

struct Linearization {
  Eigen::Matrix<double, 9, 9> jtj = Eigen::Matrix<double, 9, 9>::Zero();
  Eigen::Matrix<double, 9, 1> jtr = Eigen::Matrix<double, 9, 1>::Zero();
  double sum_sq = 0.0;
  std::size_t count = 0;
};

// Residual statistics (and optionally the normal equations) at H.
Linearization linearize(const ImageGrid& pivot, const Gradients& grads, const ImageGrid& obs,
                        const Homography& h, int margin, bool with_jacobian) {
  Linearization lin;
  const int height = obs.height();
  const int width = obs.width();
  const std::array<const ImageGrid*, 3> sources{&pivot, &grads.ds, &grads.dt};
  const std::vector<ImageGrid> warped_all =
      warp_all(std::span(sources.data(), with_jacobian ? 3 : 1), h, height, width);
  const ImageGrid& warped = warped_all[0];
  const ImageGrid& gs = with_jacobian ? warped_all[1] : warped;
  const ImageGrid& gt = with_jacobian ? warped_all[2] : warped;
  double a[9][9] = {};
  for (int t = margin; t < height - margin; ++t) {
    for (int s = margin; s < width - margin; ++s) {
      if (!warped.valid(t, s) || !obs.valid(t, s)) continue;
      if (with_jacobian && !(gs.valid(t, s) && gt.valid(t, s))) continue;
      const double r = warped(t, s) - obs(t, s);
      lin.sum_sq += r * r;
      ++lin.count;
      if (!with_jacobian) continue;
      const JacobianRow row = gn_jacobian_row(gs(t, s), gt(t, s), s, t, h.matrix());
      for (int i = 0; i < 9; ++i) {
        lin.jtr(i) += row[i] * r;
        for (int j = i; j < 9; ++j) a[i][j] += row[i] * row[j];
      }
    }
  }
  if (with_jacobian)
    for (int i = 0; i < 9; ++i)
      for (int j = i; j < 9; ++j) lin.jtj(i, j) = lin.jtj(j, i) = a[i][j];
  return lin;
}

}  // namespace

RegistrationResult register_homography(const ImageGrid& pivot, const ImageGrid& obs,
                                       const Homography& init, const RegistrationConfig& cfg) {
  cfg.validate();
  if (!pivot.same_shape(obs)) throw ConfigError("registration needs equal image sizes");
  const Gradients grads = image_gradients(pivot);

  RegistrationResult result;
  result.h = init;
  double best_rms = std::numeric_limits<double>::infinity();
  Homography current = init;
  bool converged = false;

  for (int it = 0; it <= cfg.max_gn_iterations; ++it) {
    const bool step = it < cfg.max_gn_iterations && !converged;
    Linearization lin = linearize(pivot, grads, obs, current, cfg.boundary_margin, true);
    if (lin.count < static_cast<std::size_t>(cfg.min_pixels)) {
      if (it == 0)
        throw InsufficientOverlapError("registration has only " + std::to_string(lin.count) +
                                       " interior valid pixels");
      break;
    }
    const double rms = std::sqrt(lin.sum_sq / static_cast<double>(lin.count));
    if (it == 0) result.initial_rms = rms;
    if (rms < best_rms) {
      best_rms = rms;
      result.h = current;
    }
    if (!step) break;

    // H[3][3] is pinned: the full 9x9 system is singular along the projective
    // scale direction dH = H.
    Eigen::Matrix<double, 8, 8> a = lin.jtj.topLeftCorner<8, 8>();
    a.diagonal().array() += cfg.damping;
    const Eigen::Matrix<double, 8, 1> b = -lin.jtr.head<8>();
    const Eigen::Matrix<double, 8, 1> d = a.diagonal().cwiseMax(0.0).cwiseSqrt();
    if ((d.array() <= 0.0).any())
      throw IllConditionedRegistrationError("Gauss-Newton normal matrix has a zero column");
    const Eigen::Matrix<double, 8, 8> scaled =
        d.cwiseInverse().asDiagonal() * a * d.cwiseInverse().asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 8, 8>> eig(scaled,
                                                                   Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > cfg.max_condition)
      throw IllConditionedRegistrationError("Gauss-Newton normal matrix is numerically singular");
    const Eigen::Matrix<double, 8, 1> y =
        scaled.ldlt().solve(d.cwiseInverse().asDiagonal() * b);
    const Eigen::Matrix<double, 8, 1> delta = d.cwiseInverse().asDiagonal() * y;

    Eigen::Matrix3d next = current.matrix();
    for (int k = 0; k < 8; ++k) next(k / 3, k % 3) += delta(k);
    try {
      current = Homography::from_matrix(next);
    } catch (const InvalidTransformError&) {
      break;
    }
    ++result.iterations;
    if (delta.lpNorm<Eigen::Infinity>() < cfg.step_tolerance) converged = true;
  }
  result.final_rms = best_rms;
  return result;
}

}  // namespace nuc
