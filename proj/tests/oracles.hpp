#pragma once

// Independent reference implementations used to check the library.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nuc/grid.hpp"
#include "nuc/registration.hpp"
#include "nuc/solver.hpp"

namespace oracle {

using nuc::ImageGrid;

struct Tap {
  int index;
  double weight;
};

// Bilinear taps for output pixel (s, t) of an in_h x in_w image under matrix m,
// or nullopt when a tap with nonzero weight falls outside the image.
inline std::optional<std::vector<Tap>> bilinear_taps(const Eigen::Matrix3d& m, int in_h, int in_w,
                                                     int s, int t) {
  const double z = m(2, 0) * s + m(2, 1) * t + m(2, 2);
  const double u = (m(0, 0) * s + m(0, 1) * t + m(0, 2)) / z;
  const double v = (m(1, 0) * s + m(1, 1) * t + m(1, 2)) / z;
  const int c0 = static_cast<int>(std::floor(u));
  const int r0 = static_cast<int>(std::floor(v));
  const double a = u - c0;
  const double b = v - r0;
  const double w[2][2] = {{(1 - a) * (1 - b), a * (1 - b)}, {(1 - a) * b, a * b}};
  std::vector<Tap> taps;
  for (int dr = 0; dr < 2; ++dr)
    for (int dc = 0; dc < 2; ++dc) {
      if (w[dr][dc] == 0.0) continue;
      const int r = r0 + dr;
      const int c = c0 + dc;
      if (r < 0 || c < 0 || r >= in_h || c >= in_w) return std::nullopt;
      taps.push_back({r * in_w + c, w[dr][dc]});
    }
  return taps;
}

// Per-pixel bilinear resampling written out directly.
inline ImageGrid dense_bilinear(const ImageGrid& in, const Eigen::Matrix3d& m, int oh, int ow) {
  ImageGrid out(oh, ow, 0.0, false);
  for (int t = 0; t < oh; ++t)
    for (int s = 0; s < ow; ++s) {
      const auto taps = bilinear_taps(m, in.height(), in.width(), s, t);
      if (!taps) continue;
      bool ok = true;
      double acc = 0.0;
      for (const Tap& tp : *taps) {
        if (!in.valid(static_cast<std::size_t>(tp.index))) ok = false;
        acc += tp.weight * in[static_cast<std::size_t>(tp.index)];
      }
      if (!ok) continue;
      out(t, s) = acc;
      out.set_valid(t, s, true);
    }
  return out;
}

// Central finite differences of X(H1 e / H3 e, H2 e / H3 e) with respect to
// the nine entries of H, for a smooth image function X.
inline std::array<double, 9> jacobian_fd(const std::function<double(double, double)>& image,
                                         const Eigen::Matrix3d& h, double s, double t,
                                         double step = 1e-6) {
  auto sample = [&](const Eigen::Matrix3d& m) {
    const double z = m(2, 0) * s + m(2, 1) * t + m(2, 2);
    return image((m(0, 0) * s + m(0, 1) * t + m(0, 2)) / z, (m(1, 0) * s + m(1, 1) * t + m(1, 2)) / z);
  };
  std::array<double, 9> out{};
  for (int k = 0; k < 9; ++k) {
    Eigen::Matrix3d hp = h;
    Eigen::Matrix3d hm = h;
    hp(k / 3, k % 3) += step;
    hm(k / 3, k % 3) -= step;
    out[static_cast<std::size_t>(k)] = (sample(hp) - sample(hm)) / (2 * step);
  }
  return out;
}

// Smooth random image function sum_k a_k sin(f_k . (s, t) + p_k) with its gradient.
struct SmoothField {
  std::vector<std::array<double, 4>> terms;  // a, fs, ft, phase

  double operator()(double s, double t) const {
    double v = 0.0;
    for (const auto& [a, fs, ft, p] : terms) v += a * std::sin(fs * s + ft * t + p);
    return v;
  }
  std::pair<double, double> gradient(double s, double t) const {
    double gs = 0.0;
    double gt = 0.0;
    for (const auto& [a, fs, ft, p] : terms) {
      const double c = a * std::cos(fs * s + ft * t + p);
      gs += c * fs;
      gt += c * ft;
    }
    return {gs, gt};
  }
};

// Per-pixel two-parameter least squares y ~ g P + d by Cramer's rule on the
// normal equations. Pixels with fewer than two samples, a singular system or a
// nonpositive slope keep `previous`.
inline std::pair<ImageGrid, ImageGrid> gd_regression(const std::vector<ImageGrid>& predictors,
                                                     const std::vector<ImageGrid>& responses,
                                                     const ImageGrid& prev_gain,
                                                     const ImageGrid& prev_offset) {
  ImageGrid g = prev_gain;
  ImageGrid d = prev_offset;
  for (std::size_t p = 0; p < g.size(); ++p) {
    double n = 0, sp = 0, spp = 0, sy = 0, spy = 0;
    for (std::size_t k = 0; k < predictors.size(); ++k) {
      if (!predictors[k].valid(p) || !responses[k].valid(p)) continue;
      const double a = predictors[k][p];
      const double b = responses[k][p];
      n += 1;
      sp += a;
      spp += a * a;
      sy += b;
      spy += a * b;
    }
    if (n < 2) continue;
    const double det = n * spp - sp * sp;
    if (!(std::abs(det) > 0)) continue;
    const double gg = (n * spy - sp * sy) / det;
    const double dd = (spp * sy - sp * spy) / det;
    if (!(gg > 0)) continue;
    g[p] = gg;
    d[p] = dd;
  }
  return {g, d};
}

// Dense least-squares pivot estimate for one group: rows g_p * bilinear(H_j)
// for every pixel valid in y_j and inside the warp, target y_j - d.
inline Eigen::VectorXd dense_x_solve(const std::vector<ImageGrid>& ys,
                                     const std::vector<nuc::Homography>& hs,
                                     const ImageGrid& gain, const ImageGrid& offset) {
  const int h = ys.front().height();
  const int w = ys.front().width();
  const int n = h * w;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (std::size_t j = 0; j < ys.size(); ++j)
    for (int t = 0; t < h; ++t)
      for (int s = 0; s < w; ++s) {
        const auto p = static_cast<std::size_t>(t * w + s);
        if (!ys[j].valid(p)) continue;
        const auto taps = bilinear_taps(hs[j].matrix(), h, w, s, t);
        if (!taps) continue;
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
        for (const Tap& tp : *taps) row[tp.index] += gain[p] * tp.weight;
        rows.push_back(row);
        rhs.push_back(ys[j][p] - offset[p]);
      }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), n);
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    a.row(static_cast<Eigen::Index>(r)) = rows[r];
    b[static_cast<Eigen::Index>(r)] = rhs[r];
  }
  return a.colPivHouseholderQr().solve(b);
}

// Objective written as a plain loop over the dense oracle warp.
inline double objective(const nuc::SolverState& st, const nuc::ObservationSet& obs) {
  double total = 0.0;
  for (std::size_t i = 0; i < obs.groups.size(); ++i)
    for (std::size_t j = 0; j < obs.groups[i].size(); ++j) {
      const ImageGrid& y = obs.groups[i][j];
      const ImageGrid pred = dense_bilinear(st.x[i], st.h[i][j].matrix(), y.height(), y.width());
      for (std::size_t p = 0; p < y.size(); ++p) {
        if (!pred.valid(p) || !y.valid(p)) continue;
        const double r = st.gd.gain[p] * pred[p] + st.gd.offset[p] - y[p];
        total += r * r;
      }
    }
  return total;
}

}  // namespace oracle
