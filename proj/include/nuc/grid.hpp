#pragma once

// Image-array primitives: masked scalar grids, homographies, bilinear warping
// and its adjoint, PSF convolution, and masked per-pixel moments.
//
// Coordinates: pixel centers sit on integers, origin top-left, s = column,
// t = row. A homography maps an output pixel (s, t) to the input location it
// samples.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "nuc/errors.hpp"

namespace nuc {

class VisibilityMask {
 public:
  VisibilityMask() = default;
  VisibilityMask(int height, int width, bool value = false);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool operator()(int row, int col) const { return bits_[index(row, col)] != 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(int row, int col, bool v) { bits_[index(row, col)] = v ? 1 : 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const;
  VisibilityMask operator&(const VisibilityMask& other) const;
  bool operator==(const VisibilityMask&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Per-pixel number of masks that are set (the pair count n_p).
std::vector<int> pair_counts(std::span<const VisibilityMask> masks);

class ImageGrid {
 public:
  ImageGrid() = default;
  // Throws ConfigError unless height >= 3 and width >= 3.
  ImageGrid(int height, int width, double fill = 0.0, bool valid = true);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool same_shape(const ImageGrid& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  double& operator()(int row, int col) { return values_[index(row, col)]; }
  double operator()(int row, int col) const { return values_[index(row, col)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool valid(int row, int col) const { return valid_[index(row, col)] != 0; }
  bool valid(std::size_t i) const { return valid_[i] != 0; }
  void set_valid(int row, int col, bool v) { valid_[index(row, col)] = v ? 1 : 0; }
  void set_valid(std::size_t i, bool v) { valid_[i] = v ? 1 : 0; }
  void set_all_valid(bool v);

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  VisibilityMask mask() const;
  void apply_mask(const VisibilityMask& m);  // AND the mask in
  std::size_t valid_count() const;

  // Copies of the data with invalid pixels forced to zero.
  ImageGrid zero_invalid() const;

  bool operator==(const ImageGrid&) const = default;

  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
};

struct Point2 {
  double s = 0.0;  // column
  double t = 0.0;  // row
};

class Homography {
 public:
  Homography() : h_(Eigen::Matrix3d::Identity()) {}

  // Scales so that H(2,2) == 1; throws InvalidTransformError if that entry
  // vanishes or |det| <= 1e-12 after scaling.
  static Homography from_matrix(const Eigen::Matrix3d& m);
  static Homography translation(double tx, double ty);
  static Homography identity() { return Homography(); }

  const Eigen::Matrix3d& matrix() const { return h_; }
  double operator()(int r, int c) const { return h_(r, c); }

  // Projective map (s, t) -> (H1 e / H3 e, H2 e / H3 e); nullopt when
  // |H3 e| < 1e-12.
  std::optional<Point2> apply(double s, double t) const;
  Homography inverse() const;
  // (a * b) samples like warp(warp(u, a), b).
  friend Homography operator*(const Homography& a, const Homography& b);

  // Largest displacement of the four corners of a height x width image.
  double max_corner_displacement(int height, int width) const;
  // Mean corner-transfer distance between two homographies over the image corners.
  double corner_transfer_error(const Homography& other, int height, int width) const;

 private:
  explicit Homography(const Eigen::Matrix3d& m) : h_(m) {}
  Eigen::Matrix3d h_;
};

class Psf {
 public:
  Psf() : size_(1), weights_{1.0} {}
  // Normalizes to unit sum; throws ConfigError for even size or zero sum.
  static Psf from_weights(int size, std::vector<double> weights);
  static Psf delta() { return Psf(); }
  static Psf box(int size);
  static Psf gaussian(double sigma, int radius);

  int size() const { return size_; }
  int radius() const { return size_ / 2; }
  bool is_delta() const { return size_ == 1; }
  double operator()(int row, int col) const { return weights_[row * size_ + col]; }

 private:
  int size_;
  std::vector<double> weights_;
};

// Bilinear resampling. Output pixel (s, t) samples the input at H(s, t); it is
// valid only when every neighbor carrying nonzero interpolation weight is in
// bounds and valid. Throws EmptyOverlapError when no output pixel is valid.
ImageGrid warp(const ImageGrid& image, const Homography& h);
ImageGrid warp(const ImageGrid& image, const Homography& h, int out_height, int out_width);

// warp() applied to several same-size images with one sampling pass. Never
// throws on an empty overlap; the outputs are then all invalid.
std::vector<ImageGrid> warp_all(std::span<const ImageGrid* const> images, const Homography& h,
                                int out_height, int out_width);

// Validity mask warp() would produce for an input with the given mask.
VisibilityMask warp_mask(const VisibilityMask& domain, const Homography& h, int out_height,
                         int out_width);

// Exact adjoint of warp() for a fixed domain mask. Invalid pixels of `image`
// contribute zero. The result lives on the domain grid with the domain mask.
ImageGrid warp_adjoint(const ImageGrid& image, const Homography& h,
                       const VisibilityMask& domain);
ImageGrid warp_adjoint(const ImageGrid& image, const Homography& h);

// Full convolution over the valid region; pixels whose stencil reaches an
// invalid or out-of-bounds pixel are invalid.
ImageGrid convolve(const ImageGrid& image, const Psf& psf);
// Adjoint of convolve() for a fixed domain mask.
ImageGrid convolve_adjoint(const ImageGrid& image, const Psf& psf, const VisibilityMask& domain);

// Matrix form of the imaging chain for a fixed geometry. Row p holds the
// weights producing output pixel p from the flattened (row-major) input;
// rows of invalid output pixels are empty and flagged in `rows`.
using SparseOperator = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct LinearImageOperator {
  SparseOperator matrix;
  VisibilityMask rows;
};

// Same values and validity as warp(image, h, out_height, out_width) for any
// image whose mask is `domain`.
LinearImageOperator warp_operator(const Homography& h, const VisibilityMask& domain,
                                  int out_height, int out_width);

// Same values and validity as convolve(image, psf) for an image with mask `domain`.
LinearImageOperator convolve_operator(const Psf& psf, const VisibilityMask& domain);

// convolve(warp(., h), psf) on a same-size grid.
LinearImageOperator imaging_operator(const Homography& h, const Psf& psf,
                                     const VisibilityMask& domain);

struct MomentFields {
  std::vector<int> count;
  ImageGrid mean_a;
  ImageGrid mean_b;
  ImageGrid var_a;
  ImageGrid var_b;
  ImageGrid cov;
};

// Per-pixel masked mean / variance / covariance (population normalization,
// 1 / n_p). A sample contributes where its mask and both images are valid.
// Pixels with fewer than `min_count` samples are invalid in every output.
MomentFields masked_moments(std::span<const ImageGrid> a, std::span<const ImageGrid> b,
                            std::span<const VisibilityMask> masks, int min_count = 1);
MomentFields masked_moments(std::span<const ImageGrid> a, std::span<const VisibilityMask> masks,
                            int min_count = 1);

// Whole-image reductions over valid pixels.
double mean(const ImageGrid& image);
double variance(const ImageGrid& image);
double stddev(const ImageGrid& image);
double dot(const ImageGrid& a, const ImageGrid& b);  // over mutually valid pixels

}  // namespace nuc
