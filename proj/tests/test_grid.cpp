#include "doctest.h"

#include <cmath>
#include <vector>

#include "gen.hpp"
#include "oracles.hpp"
#include "nuc/grid.hpp"

using namespace nuc;

namespace {

using oracle::dense_bilinear;

// Convolution by definition: out(r, c) = sum_ij k(i, j) in(r + rad - i, c + rad - j).
ImageGrid naive_convolution(const ImageGrid& in, const Psf& k) {
  const int rad = k.radius();
  ImageGrid out(in.height(), in.width(), 0.0, false);
  for (int r = rad; r + rad < in.height(); ++r)
    for (int c = rad; c + rad < in.width(); ++c) {
      double acc = 0.0;
      for (int i = 0; i < k.size(); ++i)
        for (int j = 0; j < k.size(); ++j) acc += k(i, j) * in(r + rad - i, c + rad - j);
      out(r, c) = acc;
      out.set_valid(r, c, true);
    }
  return out;
}

Eigen::VectorXd flat(const ImageGrid& im) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(im.size()));
  for (std::size_t i = 0; i < im.size(); ++i) v[static_cast<Eigen::Index>(i)] = im.valid(i) ? im[i] : 0.0;
  return v;
}

void check_same(const ImageGrid& a, const ImageGrid& b, double tol) {
  REQUIRE(a.same_shape(b));
  CHECK(a.mask() == b.mask());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.valid(i) && b.valid(i)) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= tol);
}

}  // namespace

TEST_CASE("warp: identity keeps values and mask") {
  Rng rng(1);
  const ImageGrid u = gen::masked_image(rng, 7, 9);
  check_same(warp(u, Homography::identity()), u, 0.0);
}

TEST_CASE("warp: constant image stays constant") {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const ImageGrid u(12, 12, 4.25);
    const ImageGrid w = warp(u, gen::near_identity(rng));
    for (std::size_t i = 0; i < w.size(); ++i)
      if (w.valid(i)) CHECK(w[i] == doctest::Approx(4.25).epsilon(1e-14));
  }
}

TEST_CASE("warp: half-pixel translation matches dense bilinear oracle") {
  Rng rng(3);
  const ImageGrid u = gen::image(rng, 8, 8);
  const Homography h = Homography::translation(0.5, 0.25);
  const ImageGrid w = warp(u, h);
  check_same(w, dense_bilinear(u, h.matrix(), 8, 8), 1e-12);
  CHECK(w.valid_count() == 49);
}

TEST_CASE("warp: random projective maps match the oracle") {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const ImageGrid u = gen::masked_image(rng, 10, 11, 0.9);
    const Homography h = gen::near_identity(rng, 1.5);
    const ImageGrid oracle = dense_bilinear(u, h.matrix(), 9, 12);
    if (oracle.valid_count() == 0) {
      CHECK_THROWS_AS(warp(u, h, 9, 12), EmptyOverlapError);
      continue;
    }
    check_same(warp(u, h, 9, 12), oracle, 1e-12);
    CHECK(warp_mask(u.mask(), h, 9, 12) == oracle.mask());
  }
}

TEST_CASE("warp: linearity on the shared valid region") {
  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const ImageGrid u = gen::masked_image(rng, 9, 9, 0.85);
    const ImageGrid v = gen::masked_image(rng, 9, 9, 0.85);
    const Homography h = gen::near_identity(rng);
    const double al = gen::uniform(rng, -2, 2);
    const double be = gen::uniform(rng, -2, 2);
    ImageGrid mix(9, 9, 0.0, false);
    for (std::size_t i = 0; i < mix.size(); ++i) {
      mix[i] = al * u[i] + be * v[i];
      mix.set_valid(i, u.valid(i) && v.valid(i));
    }
    ImageGrid wm, wu, wv;
    try {
      wm = warp(mix, h);
      wu = warp(u, h);
      wv = warp(v, h);
    } catch (const EmptyOverlapError&) {
      continue;
    }
    for (std::size_t i = 0; i < wm.size(); ++i)
      if (wm.valid(i)) {
        REQUIRE((wu.valid(i) && wv.valid(i)));
        CHECK(std::abs(wm[i] - (al * wu[i] + be * wv[i])) <= 1e-12);
      }
  }
}

TEST_CASE("warp_all agrees with separate warps") {
  Rng rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const ImageGrid a = gen::masked_image(rng, 10, 10, 0.95);
    const ImageGrid b = gen::masked_image(rng, 10, 10, 0.8);
    const Homography h = gen::near_identity(rng);
    const std::vector<const ImageGrid*> src{&a, &b};
    const auto both = warp_all(src, h, 10, 10);
    REQUIRE(both.size() == 2);
    check_same(both[0], dense_bilinear(a, h.matrix(), 10, 10), 0.0);
    check_same(both[1], dense_bilinear(b, h.matrix(), 10, 10), 0.0);
  }
}

TEST_CASE("warp_adjoint: identity, zero input and the dot-product identity") {
  Rng rng(7);
  const ImageGrid u = gen::image(rng, 6, 6);
  CHECK(warp_adjoint(u, Homography::identity()) == u);

  const ImageGrid none(6, 6, 3.0, false);
  const ImageGrid z = warp_adjoint(none, gen::near_identity(rng), VisibilityMask(6, 6, true));
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  int checked = 0;
  while (checked < 100) {
    const VisibilityMask dom = gen::mask(rng, 6, 6, 0.85);
    ImageGrid x = gen::image(rng, 6, 6);
    x.apply_mask(dom);
    const ImageGrid v = gen::image(rng, 6, 6);
    const Homography h = gen::near_identity(rng);
    ImageGrid sx;
    try {
      sx = warp(x, h);
    } catch (const EmptyOverlapError&) {
      continue;
    }
    const double lhs = dot(sx, v);
    const double rhs = dot(x, warp_adjoint(v, h, dom));
    CHECK(gen::relative(lhs, rhs) <= 1e-10);
    ++checked;
  }
}

TEST_CASE("warp_operator reproduces warp") {
  Rng rng(8);
  for (int rep = 0; rep < 30; ++rep) {
    const ImageGrid u = gen::masked_image(rng, 8, 9, 0.9);
    const Homography h = gen::near_identity(rng);
    const LinearImageOperator op = warp_operator(h, u.mask(), 7, 10);
    const ImageGrid oracle = dense_bilinear(u, h.matrix(), 7, 10);
    CHECK(op.rows == oracle.mask());
    const Eigen::VectorXd y = op.matrix * flat(u);
    for (std::size_t i = 0; i < oracle.size(); ++i)
      if (oracle.valid(i)) CHECK(std::abs(y[static_cast<Eigen::Index>(i)] - oracle[i]) <= 1e-12);
  }
}

TEST_CASE("convolution: delta, constants, naive oracle and errors") {
  Rng rng(9);
  const ImageGrid u = gen::image(rng, 8, 8);
  CHECK(convolve(u, Psf::delta()) == u);

  const ImageGrid c(10, 10, -2.5);
  const ImageGrid cg = convolve(c, Psf::gaussian(1.2, 2));
  for (std::size_t i = 0; i < cg.size(); ++i)
    if (cg.valid(i)) CHECK(cg[i] == doctest::Approx(-2.5).epsilon(1e-14));

  check_same(convolve(u, Psf::box(3)), naive_convolution(u, Psf::box(3)), 1e-12);

  std::vector<double> wts(9);
  for (auto& w : wts) w = gen::uniform(rng, 0.1, 1.0);
  const Psf skew = Psf::from_weights(3, wts);
  check_same(convolve(u, skew), naive_convolution(u, skew), 1e-12);

  CHECK_THROWS_AS(convolve(ImageGrid(4, 4), Psf::box(5)), ConfigError);
  CHECK_THROWS_AS(Psf::from_weights(2, {1, 1, 1, 1}), ConfigError);
}

TEST_CASE("convolution: adjoint identity and operator form") {
  Rng rng(10);
  for (int rep = 0; rep < 50; ++rep) {
    const VisibilityMask dom = gen::mask(rng, 9, 9, 0.9);
    ImageGrid x = gen::image(rng, 9, 9);
    x.apply_mask(dom);
    std::vector<double> wts(9);
    for (auto& w : wts) w = gen::uniform(rng, 0.1, 1.0);
    const Psf k = Psf::from_weights(3, wts);
    const ImageGrid cx = convolve(x, k);
    const ImageGrid v = gen::image(rng, 9, 9);
    if (cx.valid_count() > 0)
      CHECK(gen::relative(dot(cx, v), dot(x, convolve_adjoint(v, k, dom))) <= 1e-10);

    const LinearImageOperator op = convolve_operator(k, dom);
    CHECK(op.rows == cx.mask());
    const Eigen::VectorXd y = op.matrix * flat(x);
    for (std::size_t i = 0; i < cx.size(); ++i)
      if (cx.valid(i)) CHECK(std::abs(y[static_cast<Eigen::Index>(i)] - cx[i]) <= 1e-12);
  }
}

TEST_CASE("imaging_operator equals convolve after warp") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const ImageGrid x = gen::masked_image(rng, 12, 12, 0.95);
    const Homography h = gen::near_identity(rng);
    const Psf k = rep % 2 ? Psf::gaussian(0.8, 1) : Psf::delta();
    ImageGrid ref;
    try {
      ref = convolve(warp(x, h), k);
    } catch (const EmptyOverlapError&) {
      continue;
    }
    const LinearImageOperator op = imaging_operator(h, k, x.mask());
    CHECK(op.rows == ref.mask());
    const Eigen::VectorXd y = op.matrix * flat(x);
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (ref.valid(i)) CHECK(std::abs(y[static_cast<Eigen::Index>(i)] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("homography: normalization, inverse and singular input") {
  Rng rng(12);
  Eigen::Matrix3d m;
  m << 2, 0.1, 4, 0, 2, -2, 0, 0, 2;
  const Homography h = Homography::from_matrix(m);
  CHECK(h(2, 2) == 1.0);
  CHECK(h(0, 2) == doctest::Approx(2.0));
  Eigen::Matrix3d sing = Eigen::Matrix3d::Zero();
  sing(2, 2) = 1;
  CHECK_THROWS_AS(Homography::from_matrix(sing), InvalidTransformError);
  Eigen::Matrix3d zero33 = Eigen::Matrix3d::Identity();
  zero33(2, 2) = 0;
  CHECK_THROWS_AS(Homography::from_matrix(zero33), InvalidTransformError);

  for (int rep = 0; rep < 20; ++rep) {
    const Homography g = gen::hover(rng);
    const Homography id = g * g.inverse();
    CHECK((id.matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(g.corner_transfer_error(g, 66, 66) == 0.0);
  }
}

TEST_CASE("warp composition within the hover ranges") {
  Rng rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    oracle::SmoothField f;
    for (int k = 0; k < 6; ++k)
      f.terms.push_back({gen::uniform(rng, 5, 40), gen::uniform(rng, -0.3, 0.3),
                         gen::uniform(rng, -0.3, 0.3), gen::uniform(rng, 0, 6.28)});
    ImageGrid u(66, 66);
    for (int t = 0; t < 66; ++t)
      for (int s = 0; s < 66; ++s) u(t, s) = f(s, t);
    const Homography a = gen::hover(rng);
    const Homography b = gen::hover(rng);
    const ImageGrid two = warp(warp(u, a), b);
    const ImageGrid one = warp(u, a * b);
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < one.size(); ++i)
      if (one.valid(i) && two.valid(i)) {
        ss += (one[i] - two[i]) * (one[i] - two[i]);
        ++n;
      }
    REQUIRE(n > 0);
    CHECK(std::sqrt(ss / static_cast<double>(n)) <= 0.02 * stddev(u));
  }
}

TEST_CASE("masked moments") {
  std::vector<ImageGrid> same(4, ImageGrid(3, 3, 1.5));
  std::vector<VisibilityMask> all(4, VisibilityMask(3, 3, true));
  const MomentFields f = masked_moments(same, all);
  for (std::size_t i = 0; i < 9; ++i) CHECK(f.var_a[i] == 0.0);

  std::vector<ImageGrid> two{ImageGrid(3, 3, 0.0), ImageGrid(3, 3, 2.0)};
  std::vector<VisibilityMask> both(2, VisibilityMask(3, 3, true));
  const MomentFields g = masked_moments(two, both);
  CHECK(g.mean_a[4] == 1.0);
  CHECK(g.var_a[4] == 1.0);

  Rng rng(14);
  std::vector<ImageGrid> a, b;
  std::vector<VisibilityMask> m;
  for (int k = 0; k < 5; ++k) {
    a.push_back(gen::masked_image(rng, 4, 4, 0.9));
    b.push_back(gen::masked_image(rng, 4, 4, 0.9));
    m.push_back(gen::mask(rng, 4, 4, 0.7));
  }
  const MomentFields r = masked_moments(a, b, m, 2);
  for (std::size_t p = 0; p < 16; ++p) {
    std::vector<std::pair<double, double>> xs;
    for (int k = 0; k < 5; ++k)
      if (m[k][p] && a[k].valid(p) && b[k].valid(p)) xs.emplace_back(a[k][p], b[k][p]);
    CHECK(r.count[p] == static_cast<int>(xs.size()));
    if (xs.size() < 2) {
      CHECK_FALSE(r.mean_a.valid(p));
      CHECK_FALSE(r.cov.valid(p));
      continue;
    }
    const double n = static_cast<double>(xs.size());
    double ma = 0, mb = 0;
    for (auto [x, y] : xs) {
      ma += x / n;
      mb += y / n;
    }
    double va = 0, vb = 0, cv = 0;
    for (auto [x, y] : xs) {
      va += (x - ma) * (x - ma) / n;
      vb += (y - mb) * (y - mb) / n;
      cv += (x - ma) * (y - mb) / n;
    }
    CHECK(std::abs(r.mean_a[p] - ma) <= 1e-12);
    CHECK(std::abs(r.mean_b[p] - mb) <= 1e-12);
    CHECK(std::abs(r.var_a[p] - va) <= 1e-12);
    CHECK(std::abs(r.var_b[p] - vb) <= 1e-12);
    CHECK(std::abs(r.cov[p] - cv) <= 1e-12);
  }
}

TEST_CASE("pair counts") {
  VisibilityMask a(2, 2, true), b(2, 2, false);
  b.set(0, 1, true);
  const std::vector<VisibilityMask> ms{a, b};
  const auto n = pair_counts(ms);
  CHECK(n == std::vector<int>{1, 2, 1, 1});
}
