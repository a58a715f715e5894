#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "gen.hpp"
#include "nuc/lsqr.hpp"
#include "nuc/metrics.hpp"

using namespace nuc;

TEST_CASE("rmse") {
  Rng rng(1);
  const ImageGrid a = gen::masked_image(rng, 9, 9, 0.8);
  CHECK(rmse(a, a) == 0.0);
  ImageGrid b = a;
  for (auto& v : b.values()) v += 3.0;
  CHECK(rmse(a, b) == doctest::Approx(3.0).epsilon(1e-14));

  const ImageGrid c = gen::masked_image(rng, 9, 9, 0.8);
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.valid(i) && c.valid(i)) s += (a[i] - c[i]) * (a[i] - c[i]), ++n;
  CHECK(std::abs(rmse(a, c) - std::sqrt(s / n)) <= 1e-12);

  CHECK_THROWS_AS(rmse(a, ImageGrid(9, 9, 0.0, false)), EvaluationError);
  CHECK_THROWS_AS(rmse(a, ImageGrid(8, 9)), EvaluationError);
}

TEST_CASE("pearson") {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const ImageGrid a = gen::masked_image(rng, 7, 8, 0.8);
    const double al = gen::uniform(rng, 0.01, 100);
    const double be = gen::uniform(rng, -100, 100);
    ImageGrid b = a, neg = a;
    for (auto& v : b.values()) v = al * v + be;
    for (auto& v : neg.values()) v = -v;
    CHECK(std::abs(pearson(a, b) - 1.0) <= 1e-12);
    CHECK(std::abs(pearson(a, neg) + 1.0) <= 1e-12);

    const ImageGrid c = gen::masked_image(rng, 7, 8, 0.8);
    double ma = 0, mc = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.valid(i) && c.valid(i)) ma += a[i], mc += c[i], n += 1;
    ma /= n;
    mc /= n;
    double saa = 0, scc = 0, sac = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.valid(i) && c.valid(i)) {
        saa += (a[i] - ma) * (a[i] - ma);
        scc += (c[i] - mc) * (c[i] - mc);
        sac += (a[i] - ma) * (c[i] - mc);
      }
    const double r = pearson(a, c);
    CHECK(std::abs(r - sac / std::sqrt(saa * scc)) <= 1e-12);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }
  CHECK_THROWS_AS(pearson(ImageGrid(4, 4, 1.0), gen::image(rng, 4, 4)), EvaluationError);
}

TEST_CASE("metrics do not depend on pixel order") {
  Rng rng(3);
  const ImageGrid a = gen::masked_image(rng, 10, 10, 0.9);
  const ImageGrid b = gen::masked_image(rng, 10, 10, 0.9);
  std::vector<std::size_t> perm(100);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  ImageGrid pa(10, 10), pb(10, 10);
  for (std::size_t i = 0; i < 100; ++i) {
    pa[i] = a[perm[i]];
    pa.set_valid(i, a.valid(perm[i]));
    pb[i] = b[perm[i]];
    pb.set_valid(i, b.valid(perm[i]));
  }
  CHECK(rmse(pa, pb) == doctest::Approx(rmse(a, b)).epsilon(1e-13));
  CHECK(pearson(pa, pb) == doctest::Approx(pearson(a, b)).epsilon(1e-13));
  CHECK(aligned_compare(pa, pb).aligned_rmse ==
        doctest::Approx(aligned_compare(a, b).aligned_rmse).epsilon(1e-12));
}

TEST_CASE("gray value conversion") {
  CHECK(gv_to_celsius(0.0) == 0.0);
  CHECK(gv_to_celsius(1.0) == doctest::Approx(0.0965).epsilon(1e-3));
  CHECK(gv_to_celsius(0.073) == doctest::Approx(0.00704).epsilon(1e-3));
}

TEST_CASE("aligned comparison") {
  const ImageGrid truth = gen::scene(4, 20, 20);
  ImageGrid est = truth;
  for (auto& v : est.values()) v = 3.0 * v - 10.0;
  const AlignedComparison m = aligned_compare(truth, est);
  CHECK(m.aligned_rmse <= 1e-10);
  CHECK(m.pearson == doctest::Approx(1.0).epsilon(1e-14));

  const AlignedComparison id = aligned_compare(truth, truth);
  CHECK(id.scale == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(id.shift) <= 1e-10);
  CHECK(id.aligned_rmse <= 1e-10);

  double mean_ratio = 0.0;
  for (int seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 0.5);
    const ImageGrid t = gen::scene(50 + seed);
    ImageGrid e = t;
    for (auto& v : e.values()) v += n(rng);
    const AlignedComparison c = aligned_compare(t, e);
    CHECK(c.aligned_rmse <= c.raw_rmse);
    mean_ratio += c.aligned_rmse / 0.5 / 30.0;
  }
  CHECK(std::abs(mean_ratio - 1.0) <= 0.15);

  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const ImageGrid a = gen::masked_image(rng, 6, 6, 0.9);
    const ImageGrid b = gen::masked_image(rng, 6, 6, 0.9);
    const AlignedComparison c = aligned_compare(a, b);
    CHECK(c.aligned_rmse <= rmse(a, b) + 1e-12);
  }
}

TEST_CASE("gain/offset comparison removes the ambiguity") {
  Rng rng(6);
  const ImageGrid g = gen::image(rng, 8, 8, 0.8, 1.2);
  const ImageGrid d = gen::image(rng, 8, 8, -3, 3);
  ImageGrid g2 = g, d2 = d;
  const double a = 1.7, b = -4.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    d2[p] = d[p] - (b / a) * g[p];
    g2[p] = g[p] / a;
  }
  const GainOffsetComparison c = compare_gain_offset(g, d, g2, d2, VisibilityMask(8, 8, true));
  CHECK(c.gain_rmse_pct <= 1e-12);
  CHECK(c.offset_rmse <= 1e-12);
  CHECK(c.pixels == 64);
}

TEST_CASE("evaluate: perfect results") {
  std::vector<ImageGrid> t{gen::scene(1, 20, 20), gen::scene(2, 20, 20)};
  const ImageGrid g(20, 20, 1.0), d(20, 20, 0.0);
  const EvalReport r = evaluate(t, t, g, d, g, d, VisibilityMask(20, 20, true));
  CHECK(r.mean_rmse <= 1e-12);
  CHECK(r.mean_pearson == doctest::Approx(1.0));
  for (double pc : r.group_pearson) CHECK(pc == doctest::Approx(1.0));
  CHECK(r.evaluated_pixels > 0);
  CHECK_THROWS_AS(evaluate(t, {t[0]}, g, d, g, d, VisibilityMask(20, 20, true)), EvaluationError);
}

TEST_CASE("lsqr solves small least-squares problems") {
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::MatrixXd a = Eigen::MatrixXd::Random(30, 12);
    const Eigen::VectorXd b = Eigen::VectorXd::Random(30);
    const LinearMap ap = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; };
    const LinearMap at = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return a.transpose() * v;
    };
    const Eigen::VectorXd ref = a.colPivHouseholderQr().solve(b);
    const LsqrResult res = lsqr(ap, at, b, Eigen::VectorXd::Zero(12), 100);
    CHECK((res.x - ref).norm() <= 1e-9 * ref.norm());
    CHECK(res.residual <= res.initial_residual);
    CHECK(std::abs(res.residual - (a * res.x - b).norm()) <= 1e-8);

    const LsqrResult warm = lsqr(ap, at, b, ref, 5);
    CHECK((warm.x - ref).norm() <= 1e-9 * ref.norm());
  }
}
