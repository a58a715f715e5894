#include "nuc/grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/LU>

namespace nuc {

VisibilityMask::VisibilityMask(int height, int width, bool value)
    : height_(height), width_(width),
      bits_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), value ? 1 : 0) {
  if (height < 0 || width < 0) throw ConfigError("negative mask dimensions");
}

std::size_t VisibilityMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

VisibilityMask VisibilityMask::operator&(const VisibilityMask& other) const {
  if (height_ != other.height_ || width_ != other.width_)
    throw ConfigError("mask dimension mismatch");
  VisibilityMask out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] & other.bits_[i];
  return out;
}

std::vector<int> pair_counts(std::span<const VisibilityMask> masks) {
  if (masks.empty()) return {};
  std::vector<int> counts(masks.front().size(), 0);
  for (const auto& m : masks) {
    if (m.size() != counts.size()) throw ConfigError("mask dimension mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += m[i] ? 1 : 0;
  }
  return counts;
}

ImageGrid::ImageGrid(int height, int width, double fill, bool valid)
    : height_(height), width_(width) {
  if (height < 3 || width < 3)
    throw ConfigError("image grids must be at least 3x3, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  values_.assign(n, fill);
  valid_.assign(n, valid ? 1 : 0);
}

void ImageGrid::set_all_valid(bool v) { std::fill(valid_.begin(), valid_.end(), v ? 1 : 0); }

VisibilityMask ImageGrid::mask() const {
  VisibilityMask m(height_, width_);
  for (std::size_t i = 0; i < valid_.size(); ++i) m.set(i, valid_[i] != 0);
  return m;
}

void ImageGrid::apply_mask(const VisibilityMask& m) {
  if (m.height() != height_ || m.width() != width_) throw ConfigError("mask dimension mismatch");
  for (std::size_t i = 0; i < valid_.size(); ++i) valid_[i] = valid_[i] && m[i];
}

std::size_t ImageGrid::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

ImageGrid ImageGrid::zero_invalid() const {
  ImageGrid out = *this;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!valid_[i]) out.values_[i] = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Homography

Homography Homography::from_matrix(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw InvalidTransformError("homography has non-finite entries");
  if (std::abs(m(2, 2)) < 1e-12)
    throw InvalidTransformError("homography cannot be normalized: H[3][3] is zero");
  Eigen::Matrix3d n = m / m(2, 2);
  n(2, 2) = 1.0;
  if (std::abs(n.determinant()) <= 1e-12) throw InvalidTransformError("singular homography");
  return Homography(n);
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

std::optional<Point2> Homography::apply(double s, double t) const {
  const double w = h_(2, 0) * s + h_(2, 1) * t + h_(2, 2);
  if (std::abs(w) < 1e-12) return std::nullopt;
  return Point2{(h_(0, 0) * s + h_(0, 1) * t + h_(0, 2)) / w,
                (h_(1, 0) * s + h_(1, 1) * t + h_(1, 2)) / w};
}

Homography Homography::inverse() const { return from_matrix(h_.inverse()); }

Homography operator*(const Homography& a, const Homography& b) {
  return Homography::from_matrix(a.h_ * b.h_);
}

double Homography::max_corner_displacement(int height, int width) const {
  const std::array<Point2, 4> corners{Point2{0, 0}, Point2{double(width - 1), 0},
                                      Point2{0, double(height - 1)},
                                      Point2{double(width - 1), double(height - 1)}};
  double worst = 0.0;
  for (const auto& c : corners) {
    const auto p = apply(c.s, c.t);
    if (!p) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::hypot(p->s - c.s, p->t - c.t));
  }
  return worst;
}

double Homography::corner_transfer_error(const Homography& other, int height, int width) const {
  const std::array<Point2, 4> corners{Point2{0, 0}, Point2{double(width - 1), 0},
                                      Point2{0, double(height - 1)},
                                      Point2{double(width - 1), double(height - 1)}};
  double total = 0.0;
  for (const auto& c : corners) {
    const auto p = apply(c.s, c.t);
    const auto q = other.apply(c.s, c.t);
    if (!p || !q) return std::numeric_limits<double>::infinity();
    total += std::hypot(p->s - q->s, p->t - q->t);
  }
  return total / 4.0;
}

// ---------------------------------------------------------------------------
// Psf

Psf Psf::from_weights(int size, std::vector<double> weights) {
  if (size < 1 || size % 2 == 0) throw ConfigError("PSF size must be odd and positive");
  if (weights.size() != static_cast<std::size_t>(size) * static_cast<std::size_t>(size))
    throw ConfigError("PSF weight count does not match size");
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!std::isfinite(sum) || std::abs(sum) < 1e-15) throw ConfigError("PSF weights sum to zero");
  for (auto& w : weights) w /= sum;
  Psf p;
  p.size_ = size;
  p.weights_ = std::move(weights);
  return p;
}

Psf Psf::box(int size) {
  return from_weights(size, std::vector<double>(static_cast<std::size_t>(size * size), 1.0));
}

Psf Psf::gaussian(double sigma, int radius) {
  if (sigma <= 0.0 || radius < 0) throw ConfigError("gaussian PSF needs sigma > 0, radius >= 0");
  const int n = 2 * radius + 1;
  std::vector<double> w(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double dr = r - radius;
      const double dc = c - radius;
      w[static_cast<std::size_t>(r * n + c)] = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
    }
  return from_weights(n, std::move(w));
}

// ---------------------------------------------------------------------------
// Warping

namespace {

struct BilinearSample {
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};
  int n = 0;
};

// Neighbors with nonzero weight for sampling at (s, t). Returns false when a
// required neighbor falls outside the grid.
bool bilinear_sample(double s, double t, int height, int width, BilinearSample& out) {
  if (!std::isfinite(s) || !std::isfinite(t)) return false;
  const double fs0 = std::floor(s);
  const double ft0 = std::floor(t);
  if (fs0 < 0.0 || ft0 < 0.0 || fs0 > width - 1 || ft0 > height - 1) return false;
  const int c0 = static_cast<int>(fs0);
  const int r0 = static_cast<int>(ft0);
  const double fs = s - fs0;
  const double ft = t - ft0;
  out.n = 0;
  const std::array<int, 4> dr{0, 0, 1, 1};
  const std::array<int, 4> dc{0, 1, 0, 1};
  const std::array<double, 4> w{(1 - fs) * (1 - ft), fs * (1 - ft), (1 - fs) * ft, fs * ft};
  for (int k = 0; k < 4; ++k) {
    if (w[k] == 0.0) continue;
    const int r = r0 + dr[k];
    const int c = c0 + dc[k];
    if (r >= height || c >= width) return false;
    out.index[out.n] = static_cast<std::size_t>(r) * static_cast<std::size_t>(width) +
                       static_cast<std::size_t>(c);
    out.weight[out.n] = w[k];
    ++out.n;
  }
  return true;
}

template <typename ValidFn>
bool sample_valid(const BilinearSample& smp, ValidFn&& is_valid) {
  for (int k = 0; k < smp.n; ++k)
    if (!is_valid(smp.index[k])) return false;
  return true;
}

}  // namespace

ImageGrid warp(const ImageGrid& image, const Homography& h) {
  return warp(image, h, image.height(), image.width());
}

ImageGrid warp(const ImageGrid& image, const Homography& h, int out_height, int out_width) {
  ImageGrid out(out_height, out_width, 0.0, false);
  BilinearSample smp;
  std::size_t any = 0;
  for (int t = 0; t < out_height; ++t) {
    for (int s = 0; s < out_width; ++s) {
      const auto p = h.apply(s, t);
      if (!p || !bilinear_sample(p->s, p->t, image.height(), image.width(), smp)) continue;
      if (!sample_valid(smp, [&](std::size_t i) { return image.valid(i); })) continue;
      double v = 0.0;
      for (int k = 0; k < smp.n; ++k) v += smp.weight[k] * image[smp.index[k]];
      out(t, s) = v;
      out.set_valid(t, s, true);
      ++any;
    }
  }
  if (any == 0) throw EmptyOverlapError("warp produced no valid pixels");
  return out;
}

std::vector<ImageGrid> warp_all(std::span<const ImageGrid* const> images, const Homography& h,
                                int out_height, int out_width) {
  std::vector<ImageGrid> out;
  if (images.empty()) return out;
  const int ih = images.front()->height();
  const int iw = images.front()->width();
  for (const ImageGrid* im : images) {
    if (im->height() != ih || im->width() != iw) throw ConfigError("warp_all needs equal sizes");
    out.emplace_back(out_height, out_width, 0.0, false);
  }
  BilinearSample smp;
  for (int t = 0; t < out_height; ++t)
    for (int s = 0; s < out_width; ++s) {
      const auto p = h.apply(s, t);
      if (!p || !bilinear_sample(p->s, p->t, ih, iw, smp)) continue;
      for (std::size_t m = 0; m < images.size(); ++m) {
        const ImageGrid& im = *images[m];
        if (!sample_valid(smp, [&](std::size_t i) { return im.valid(i); })) continue;
        double v = 0.0;
        for (int k = 0; k < smp.n; ++k) v += smp.weight[k] * im[smp.index[k]];
        out[m](t, s) = v;
        out[m].set_valid(t, s, true);
      }
    }
  return out;
}

VisibilityMask warp_mask(const VisibilityMask& domain, const Homography& h, int out_height,
                         int out_width) {
  VisibilityMask out(out_height, out_width, false);
  BilinearSample smp;
  for (int t = 0; t < out_height; ++t)
    for (int s = 0; s < out_width; ++s) {
      const auto p = h.apply(s, t);
      if (!p || !bilinear_sample(p->s, p->t, domain.height(), domain.width(), smp)) continue;
      if (sample_valid(smp, [&](std::size_t i) { return domain[i]; })) out.set(t, s, true);
    }
  return out;
}

ImageGrid warp_adjoint(const ImageGrid& image, const Homography& h) {
  return warp_adjoint(image, h, VisibilityMask(image.height(), image.width(), true));
}

ImageGrid warp_adjoint(const ImageGrid& image, const Homography& h,
                       const VisibilityMask& domain) {
  ImageGrid out(domain.height(), domain.width(), 0.0, false);
  for (std::size_t i = 0; i < domain.size(); ++i) out.set_valid(i, domain[i]);
  BilinearSample smp;
  for (int t = 0; t < image.height(); ++t) {
    for (int s = 0; s < image.width(); ++s) {
      if (!image.valid(t, s)) continue;
      const auto p = h.apply(s, t);
      if (!p || !bilinear_sample(p->s, p->t, domain.height(), domain.width(), smp)) continue;
      if (!sample_valid(smp, [&](std::size_t i) { return domain[i]; })) continue;
      const double v = image(t, s);
      for (int k = 0; k < smp.n; ++k) out[smp.index[k]] += smp.weight[k] * v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

ImageGrid convolve(const ImageGrid& image, const Psf& psf) {
  if (psf.size() > image.height() || psf.size() > image.width())
    throw ConfigError("PSF kernel larger than image");
  if (psf.is_delta()) return image;
  const int rad = psf.radius();
  const int h = image.height();
  const int w = image.width();
  ImageGrid out(h, w, 0.0, false);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (r - rad < 0 || c - rad < 0 || r + rad >= h || c + rad >= w) continue;
      bool ok = true;
      double v = 0.0;
      for (int i = 0; i < psf.size() && ok; ++i)
        for (int j = 0; j < psf.size(); ++j) {
          const int rr = r + rad - i;
          const int cc = c + rad - j;
          if (!image.valid(rr, cc)) {
            ok = false;
            break;
          }
          v += psf(i, j) * image(rr, cc);
        }
      if (!ok) continue;
      out(r, c) = v;
      out.set_valid(r, c, true);
    }
  }
  return out;
}

ImageGrid convolve_adjoint(const ImageGrid& image, const Psf& psf, const VisibilityMask& domain) {
  if (psf.size() > image.height() || psf.size() > image.width())
    throw ConfigError("PSF kernel larger than image");
  const int h = domain.height();
  const int w = domain.width();
  ImageGrid out(h, w, 0.0, false);
  for (std::size_t i = 0; i < domain.size(); ++i) out.set_valid(i, domain[i]);
  const int rad = psf.radius();
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      if (!image.valid(r, c)) continue;
      if (r - rad < 0 || c - rad < 0 || r + rad >= h || c + rad >= w) continue;
      bool ok = true;
      for (int i = 0; i < psf.size() && ok; ++i)
        for (int j = 0; j < psf.size(); ++j)
          if (!domain(r + rad - i, c + rad - j)) {
            ok = false;
            break;
          }
      if (!ok) continue;
      const double v = image(r, c);
      for (int i = 0; i < psf.size(); ++i)
        for (int j = 0; j < psf.size(); ++j) out(r + rad - i, c + rad - j) += psf(i, j) * v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operator matrices

LinearImageOperator warp_operator(const Homography& h, const VisibilityMask& domain,
                                  int out_height, int out_width) {
  const std::size_t rows = static_cast<std::size_t>(out_height) * out_width;
  LinearImageOperator op{SparseOperator(static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(domain.size())),
                         VisibilityMask(out_height, out_width, false)};
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(rows * 4);
  BilinearSample smp;
  for (int t = 0; t < out_height; ++t)
    for (int s = 0; s < out_width; ++s) {
      const auto p = h.apply(s, t);
      if (!p || !bilinear_sample(p->s, p->t, domain.height(), domain.width(), smp)) continue;
      if (!sample_valid(smp, [&](std::size_t i) { return domain[i]; })) continue;
      const auto row = static_cast<Eigen::Index>(static_cast<std::size_t>(t) * out_width + s);
      for (int k = 0; k < smp.n; ++k)
        entries.emplace_back(row, static_cast<Eigen::Index>(smp.index[k]), smp.weight[k]);
      op.rows.set(t, s, true);
    }
  op.matrix.setFromTriplets(entries.begin(), entries.end());
  return op;
}

LinearImageOperator convolve_operator(const Psf& psf, const VisibilityMask& domain) {
  const int h = domain.height();
  const int w = domain.width();
  if (psf.size() > h || psf.size() > w) throw ConfigError("PSF kernel larger than image");
  const auto n = static_cast<Eigen::Index>(domain.size());
  LinearImageOperator op{SparseOperator(n, n), VisibilityMask(h, w, false)};
  std::vector<Eigen::Triplet<double>> entries;
  if (psf.is_delta()) {
    for (std::size_t p = 0; p < domain.size(); ++p)
      if (domain[p]) {
        entries.emplace_back(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p), 1.0);
        op.rows.set(p, true);
      }
    op.matrix.setFromTriplets(entries.begin(), entries.end());
    return op;
  }
  const int rad = psf.radius();
  for (int r = rad; r + rad < h; ++r)
    for (int c = rad; c + rad < w; ++c) {
      bool ok = true;
      for (int i = 0; i < psf.size() && ok; ++i)
        for (int j = 0; j < psf.size() && ok; ++j) ok = domain(r + rad - i, c + rad - j);
      if (!ok) continue;
      const auto row = static_cast<Eigen::Index>(r) * w + c;
      for (int i = 0; i < psf.size(); ++i)
        for (int j = 0; j < psf.size(); ++j)
          entries.emplace_back(row, static_cast<Eigen::Index>(r + rad - i) * w + (c + rad - j),
                               psf(i, j));
      op.rows.set(r, c, true);
    }
  op.matrix.setFromTriplets(entries.begin(), entries.end());
  return op;
}

LinearImageOperator imaging_operator(const Homography& h, const Psf& psf,
                                     const VisibilityMask& domain) {
  LinearImageOperator sw = warp_operator(h, domain, domain.height(), domain.width());
  if (psf.is_delta()) return sw;
  LinearImageOperator cv = convolve_operator(psf, sw.rows);
  return {SparseOperator(cv.matrix * sw.matrix), cv.rows};
}

// ---------------------------------------------------------------------------
// Moments

MomentFields masked_moments(std::span<const ImageGrid> a, std::span<const ImageGrid> b,
                            std::span<const VisibilityMask> masks, int min_count) {
  if (a.empty()) throw ConfigError("masked_moments needs a nonempty stack");
  if (a.size() != b.size() || a.size() != masks.size())
    throw ConfigError("masked_moments stack length mismatch");
  const int h = a.front().height();
  const int w = a.front().width();
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].height() != h || a[k].width() != w || b[k].height() != h || b[k].width() != w ||
        masks[k].height() != h || masks[k].width() != w)
      throw ConfigError("masked_moments dimension mismatch");
  }
  const std::size_t n = a.front().size();
  MomentFields out{std::vector<int>(n, 0),  ImageGrid(h, w, 0.0, false),
                   ImageGrid(h, w, 0.0, false), ImageGrid(h, w, 0.0, false),
                   ImageGrid(h, w, 0.0, false), ImageGrid(h, w, 0.0, false)};
  const int need = std::max(min_count, 1);
  // Samples are shifted by the first one so a constant stack has exactly zero spread.
  for (std::size_t p = 0; p < n; ++p) {
    int cnt = 0;
    double ka = 0.0;
    double kb = 0.0;
    double sa = 0.0;
    double sb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!masks[k][p] || !a[k].valid(p) || !b[k].valid(p)) continue;
      if (cnt == 0) {
        ka = a[k][p];
        kb = b[k][p];
      }
      ++cnt;
      sa += a[k][p] - ka;
      sb += b[k][p] - kb;
    }
    out.count[p] = cnt;
    if (cnt < need) continue;
    const double ca = sa / cnt;
    const double cb = sb / cnt;
    double vaa = 0.0;
    double vbb = 0.0;
    double vab = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!masks[k][p] || !a[k].valid(p) || !b[k].valid(p)) continue;
      const double da = (a[k][p] - ka) - ca;
      const double db = (b[k][p] - kb) - cb;
      vaa += da * da;
      vbb += db * db;
      vab += da * db;
    }
    const double ma = ka + ca;
    const double mb = kb + cb;
    out.mean_a[p] = ma;
    out.mean_b[p] = mb;
    out.var_a[p] = vaa / cnt;
    out.var_b[p] = vbb / cnt;
    out.cov[p] = vab / cnt;
    for (ImageGrid* g : {&out.mean_a, &out.mean_b, &out.var_a, &out.var_b, &out.cov})
      g->set_valid(p, true);
  }
  return out;
}

MomentFields masked_moments(std::span<const ImageGrid> a, std::span<const VisibilityMask> masks,
                            int min_count) {
  return masked_moments(a, a, masks, min_count);
}

double mean(const ImageGrid& image) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < image.size(); ++i)
    if (image.valid(i)) {
      s += image[i];
      ++n;
    }
  if (n == 0) throw EmptyOverlapError("mean of an image with no valid pixels");
  return s / static_cast<double>(n);
}

double variance(const ImageGrid& image) {
  const double m = mean(image);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < image.size(); ++i)
    if (image.valid(i)) {
      const double d = image[i] - m;
      s += d * d;
      ++n;
    }
  return s / static_cast<double>(n);
}

double stddev(const ImageGrid& image) { return std::sqrt(variance(image)); }

double dot(const ImageGrid& a, const ImageGrid& b) {
  if (!a.same_shape(b)) throw ConfigError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.valid(i) && b.valid(i)) s += a[i] * b[i];
  return s;
}

}  // namespace nuc
