#include "doctest.h"

#include <cmath>
#include <limits>

#include "gen.hpp"
#include "oracles.hpp"
#include "nuc/registration.hpp"

using namespace nuc;

namespace {

oracle::SmoothField random_field(Rng& rng) {
  oracle::SmoothField f;
  for (int k = 0; k < 4; ++k)
    f.terms.push_back({gen::uniform(rng, 5, 40), gen::uniform(rng, -0.6, 0.6),
                       gen::uniform(rng, -0.6, 0.6), gen::uniform(rng, 0, 6.28)});
  return f;
}

}  // namespace

TEST_CASE("template matching") {
  const ImageGrid x = gen::scene(1);
  CHECK(template_match_shift(x, x, 3).matrix() == Eigen::Matrix3d::Identity());

  const ImageGrid one = warp(x, Homography::translation(1, 0));
  const Homography h1 = template_match_shift(x, one, 3);
  CHECK(h1(0, 2) == 1.0);
  CHECK(h1(1, 2) == 0.0);

  Rng rng(2);
  const ImageGrid tex = gen::image(rng, 30, 30, 0, 255);
  const ImageGrid obs = warp(tex, Homography::translation(-2, 3));
  const Homography h = template_match_shift(tex, obs, 4);
  CHECK(h(0, 2) == -2.0);
  CHECK(h(1, 2) == 3.0);

  // Exhaustive search over the window.
  double best = std::numeric_limits<double>::infinity();
  int bx = 99, by = 99;
  for (int ty = -4; ty <= 4; ++ty)
    for (int tx = -4; tx <= 4; ++tx) {
      double ssd = 0;
      int n = 0;
      for (int t = 0; t < 30; ++t)
        for (int s = 0; s < 30; ++s) {
          if (s + tx < 0 || s + tx >= 30 || t + ty < 0 || t + ty >= 30 || !obs.valid(t, s)) continue;
          const double d = tex(t + ty, s + tx) - obs(t, s);
          ssd += d * d;
          ++n;
        }
      if (ssd / n < best) best = ssd / n, bx = tx, by = ty;
    }
  CHECK(bx == -2);
  CHECK(by == 3);

  ImageGrid sparse = x;
  for (std::size_t i = 0; i < sparse.size(); ++i) sparse.set_valid(i, i % 66 < 10);
  CHECK_THROWS_AS(template_match_shift(x, sparse, 3), RegistrationFailureError);
}

TEST_CASE("image gradients") {
  const Gradients c = image_gradients(ImageGrid(6, 6, 3.0));
  for (std::size_t i = 0; i < c.ds.size(); ++i) {
    CHECK(c.ds[i] == 0.0);
    CHECK(c.dt[i] == 0.0);
  }

  ImageGrid ramp(6, 7);
  for (int t = 0; t < 6; ++t)
    for (int s = 0; s < 7; ++s) ramp(t, s) = s;
  const Gradients r = image_gradients(ramp);
  for (int t = 1; t < 5; ++t)
    for (int s = 1; s < 6; ++s) {
      CHECK(r.ds(t, s) == 1.0);
      CHECK(r.dt(t, s) == 0.0);
    }
  CHECK_FALSE(r.ds.valid(0, 3));

  Rng rng(3);
  const ImageGrid u = gen::image(rng, 5, 5);
  const Gradients g = image_gradients(u);
  for (int t = 0; t < 5; ++t)
    for (int s = 0; s < 5; ++s) {
      const bool inner = t > 0 && s > 0 && t < 4 && s < 4;
      CHECK(g.ds.valid(t, s) == inner);
      if (!inner) continue;
      CHECK(g.ds(t, s) == 0.5 * (u(t, s + 1) - u(t, s - 1)));
      CHECK(g.dt(t, s) == 0.5 * (u(t + 1, s) - u(t - 1, s)));
    }
}

TEST_CASE("Jacobian rows") {
  const JacobianRow z = gn_jacobian_row(0, 0, 3, 4, Homography::identity());
  for (double v : z) CHECK(v == 0.0);

  const double s = 3, t = 5, a = 0.7, b = -1.3;
  const JacobianRow r = gn_jacobian_row(a, b, s, t, Homography::identity());
  const double q = s * a + t * b;
  const JacobianRow want{s * a, t * a, a, s * b, t * b, b, -s * q, -t * q, -q};
  for (int k = 0; k < 9; ++k) CHECK(r[k] == doctest::Approx(want[k]).epsilon(1e-15));

  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const oracle::SmoothField f = random_field(rng);
    const Homography h = gen::hover(rng);
    const double ps = gen::uniform(rng, 0, 65);
    const double pt = gen::uniform(rng, 0, 65);
    const auto wp = h.apply(ps, pt);
    const auto [gs, gt] = f.gradient(wp->s, wp->t);
    const JacobianRow an = gn_jacobian_row(gs, gt, ps, pt, h);
    const auto fd = oracle::jacobian_fd(f, h.matrix(), ps, pt);
    for (int k = 0; k < 9; ++k) CHECK(gen::relative(an[k], fd[k]) <= 1e-4);
  }

  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = -0.5;
  CHECK_THROWS_AS(gn_jacobian_row(1, 1, 2.0, 0.0, m), DegeneratePointError);
}

TEST_CASE("registration recovers known homographies") {
  const ImageGrid pivot = gen::scene(5);
  const RegistrationResult same = register_homography(pivot, pivot, Homography::identity());
  CHECK(same.h.matrix() == Eigen::Matrix3d::Identity());
  CHECK(same.final_rms == 0.0);

  const ImageGrid half = warp(pivot, Homography::translation(0.5, 0));
  const RegistrationResult hr = register_homography(pivot, half, Homography::identity());
  CHECK(std::abs(hr.h(0, 2) - 0.5) <= 0.02);

  Rng rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const Homography truth = gen::hover(rng);
    const ImageGrid obs = warp(pivot, truth);
    const Homography init = template_match_shift(pivot, obs, 3);
    const RegistrationResult res = register_homography(pivot, obs, init);
    CHECK(res.h.corner_transfer_error(truth, 66, 66) <= 0.05);
    CHECK(res.final_rms <= res.initial_rms);
  }
}

TEST_CASE("registration is equivariant to a shared affine intensity map") {
  Rng rng(7);
  const ImageGrid pivot = gen::scene(8);
  const ImageGrid obs = warp(pivot, gen::hover(rng));
  ImageGrid p2 = pivot, o2 = obs;
  for (auto& v : p2.values()) v = 2.0 * v + 7.0;
  for (auto& v : o2.values()) v = 2.0 * v + 7.0;
  const Homography a = register_homography(pivot, obs, Homography::identity()).h;
  const Homography b = register_homography(p2, o2, Homography::identity()).h;
  CHECK((a.matrix() - b.matrix()).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("registration errors") {
  const ImageGrid small = gen::scene(9, 8, 8);
  CHECK_THROWS_AS(register_homography(small, small, Homography::identity()),
                  InsufficientOverlapError);
  const ImageGrid flat(20, 20, 5.0);
  CHECK_THROWS_AS(register_homography(flat, flat, Homography::identity()),
                  IllConditionedRegistrationError);
  RegistrationConfig bad;
  bad.boundary_margin = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
