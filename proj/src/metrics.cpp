#include "nuc/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace nuc {

namespace {

void require_shape(const ImageGrid& a, const ImageGrid& b) {
  if (!a.same_shape(b)) throw EvaluationError("dimension mismatch between compared images");
}

struct PairStats {
  std::size_t n = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  double cov = 0.0;
};

PairStats pair_stats(const ImageGrid& a, const ImageGrid& b) {
  require_shape(a, b);
  PairStats st;
  double sa = 0.0;
  double sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.valid(i) && b.valid(i)) {
      sa += a[i];
      sb += b[i];
      ++st.n;
    }
  if (st.n == 0) throw EvaluationError("no mutually valid pixels");
  st.mean_a = sa / static_cast<double>(st.n);
  st.mean_b = sb / static_cast<double>(st.n);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.valid(i) && b.valid(i)) {
      const double da = a[i] - st.mean_a;
      const double db = b[i] - st.mean_b;
      st.var_a += da * da;
      st.var_b += db * db;
      st.cov += da * db;
    }
  st.var_a /= static_cast<double>(st.n);
  st.var_b /= static_cast<double>(st.n);
  st.cov /= static_cast<double>(st.n);
  return st;
}

}  // namespace

double rmse(const ImageGrid& a, const ImageGrid& b) {
  require_shape(a, b);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.valid(i) && b.valid(i)) {
      const double d = a[i] - b[i];
      s += d * d;
      ++n;
    }
  if (n == 0) throw EvaluationError("no mutually valid pixels");
  return std::sqrt(s / static_cast<double>(n));
}

double pearson(const ImageGrid& a, const ImageGrid& b) {
  const PairStats st = pair_stats(a, b);
  if (!(st.var_a > 0.0) || !(st.var_b > 0.0))
    throw EvaluationError("pearson correlation of a constant image");
  const double r = st.cov / std::sqrt(st.var_a * st.var_b);
  return std::clamp(r, -1.0, 1.0);
}

AlignedComparison aligned_compare(const ImageGrid& truth, const ImageGrid& estimate) {
  const PairStats st = pair_stats(truth, estimate);
  if (!(st.var_a > 0.0) || !(st.var_b > 0.0))
    throw EvaluationError("aligned comparison of a constant image");
  AlignedComparison out;
  out.pixels = st.n;
  out.scale = st.cov / st.var_b;
  out.shift = st.mean_a - out.scale * st.mean_b;
  out.pearson = std::clamp(st.cov / std::sqrt(st.var_a * st.var_b), -1.0, 1.0);
  out.raw_rmse = rmse(truth, estimate);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth.valid(i) && estimate.valid(i)) {
      const double d = out.scale * estimate[i] + out.shift - truth[i];
      s += d * d;
    }
  out.aligned_rmse = std::sqrt(s / static_cast<double>(st.n));
  return out;
}

ImageGrid interior(const ImageGrid& image, int margin) {
  ImageGrid out = image;
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c)
      if (r < margin || c < margin || r >= image.height() - margin || c >= image.width() - margin)
        out.set_valid(r, c, false);
  return out;
}

GainOffsetComparison compare_gain_offset(const ImageGrid& true_gain, const ImageGrid& true_offset,
                                         const ImageGrid& est_gain, const ImageGrid& est_offset,
                                         const VisibilityMask& region) {
  require_shape(true_gain, est_gain);
  require_shape(true_offset, est_offset);
  require_shape(true_gain, true_offset);
  if (region.height() != true_gain.height() || region.width() != true_gain.width())
    throw EvaluationError("region does not match the gain map");

  auto normalized = [&](const ImageGrid& g, const ImageGrid& d) {
    double sg = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < g.size(); ++p)
      if (region[p]) {
        sg += g[p];
        sd += d[p];
        ++n;
      }
    if (n == 0) throw EvaluationError("empty gain/offset comparison region");
    const double mg = sg / static_cast<double>(n);
    const double md = sd / static_cast<double>(n);
    if (!(mg > 0.0)) throw EvaluationError("gain mean is not positive");
    std::pair<ImageGrid, ImageGrid> out{g, d};
    for (std::size_t p = 0; p < g.size(); ++p) {
      out.second[p] = d[p] - (md / mg) * g[p];
      out.first[p] = g[p] / mg;
    }
    return out;
  };
  const auto [tg, td] = normalized(true_gain, true_offset);
  const auto [eg, ed] = normalized(est_gain, est_offset);
  GainOffsetComparison cmp;
  double sg = 0.0;
  double sd = 0.0;
  for (std::size_t p = 0; p < tg.size(); ++p)
    if (region[p]) {
      sg += (eg[p] - tg[p]) * (eg[p] - tg[p]);
      sd += (ed[p] - td[p]) * (ed[p] - td[p]);
      ++cmp.pixels;
    }
  cmp.gain_rmse_pct = 100.0 * std::sqrt(sg / static_cast<double>(cmp.pixels));
  cmp.offset_rmse = std::sqrt(sd / static_cast<double>(cmp.pixels));
  return cmp;
}

EvalReport evaluate(const std::vector<ImageGrid>& truth, const std::vector<ImageGrid>& estimates,
                    const ImageGrid& true_gain, const ImageGrid& true_offset,
                    const ImageGrid& est_gain, const ImageGrid& est_offset,
                    const VisibilityMask& est_support, int margin) {
  if (truth.size() != estimates.size() || truth.empty())
    throw EvaluationError("truth and estimate group counts differ");
  EvalReport rep;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const AlignedComparison cmp = aligned_compare(interior(truth[i], margin), estimates[i]);
    rep.group_rmse.push_back(cmp.aligned_rmse);
    rep.group_raw_rmse.push_back(cmp.raw_rmse);
    rep.group_pearson.push_back(cmp.pearson);
    rep.evaluated_pixels += cmp.pixels;
  }
  const double n = static_cast<double>(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    rep.mean_rmse += rep.group_rmse[i] / n;
    rep.mean_raw_rmse += rep.group_raw_rmse[i] / n;
    rep.mean_pearson += rep.group_pearson[i] / n;
  }
  VisibilityMask region = interior(ImageGrid(true_gain.height(), true_gain.width()), margin).mask();
  region = region & est_support;
  const GainOffsetComparison go =
      compare_gain_offset(true_gain, true_offset, est_gain, est_offset, region);
  rep.gain_rmse_pct = go.gain_rmse_pct;
  rep.offset_rmse = go.offset_rmse;
  return rep;
}

ImageGrid difference_map(const ImageGrid& truth, const ImageGrid& estimate) {
  const AlignedComparison cmp = aligned_compare(truth, estimate);
  ImageGrid out(truth.height(), truth.width(), 0.0, false);
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth.valid(i) && estimate.valid(i)) {
      out[i] = std::abs(cmp.scale * estimate[i] + cmp.shift - truth[i]);
      out.set_valid(i, true);
    }
  return out;
}

}  // namespace nuc
