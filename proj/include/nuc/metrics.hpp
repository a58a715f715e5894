#pragma once

// Restoration quality against ground truth. Every statistic is taken over
// mutually valid pixels only.

#include <cstddef>
#include <vector>

#include "nuc/grid.hpp"

namespace nuc {

inline constexpr double kCelsiusSpan = 51.7 - 27.1;
inline constexpr double kGrayLevels = 255.0;

// Throws EvaluationError on shape mismatch or an empty mutual valid set.
double rmse(const ImageGrid& a, const ImageGrid& b);

// Throws EvaluationError if either input is constant on the mutual set.
double pearson(const ImageGrid& a, const ImageGrid& b);

constexpr double gv_to_celsius(double delta_gv) { return delta_gv * kCelsiusSpan / kGrayLevels; }

struct AlignedComparison {
  double aligned_rmse = 0.0;  // after least-squares scale/shift of estimate onto truth
  double raw_rmse = 0.0;
  double pearson = 0.0;
  double scale = 1.0;
  double shift = 0.0;
  std::size_t pixels = 0;
};

AlignedComparison aligned_compare(const ImageGrid& truth, const ImageGrid& estimate);

// Copy with a `margin`-pixel border marked invalid.
ImageGrid interior(const ImageGrid& image, int margin);

struct GainOffsetComparison {
  double gain_rmse_pct = 0.0;  // RMS gain error relative to a unit-mean gain, percent
  double offset_rmse = 0.0;    // gv
  std::size_t pixels = 0;
};

// Both (g, d) pairs are first mapped to mean(g) = 1, mean(d) = 0 over the
// shared region through the scale/shift ambiguity.
GainOffsetComparison compare_gain_offset(const ImageGrid& true_gain, const ImageGrid& true_offset,
                                         const ImageGrid& est_gain, const ImageGrid& est_offset,
                                         const VisibilityMask& region);

struct EvalReport {
  std::vector<double> group_rmse;      // aligned, gv
  std::vector<double> group_raw_rmse;  // gv
  std::vector<double> group_pearson;
  double mean_rmse = 0.0;
  double mean_raw_rmse = 0.0;
  double mean_pearson = 0.0;
  double gain_rmse_pct = 0.0;
  double offset_rmse = 0.0;
  std::size_t evaluated_pixels = 0;
};

// Per-group comparison over the interior (boundary `margin` excluded) plus
// gain/offset errors over the interior of the estimated support.
EvalReport evaluate(const std::vector<ImageGrid>& truth, const std::vector<ImageGrid>& estimates,
                    const ImageGrid& true_gain, const ImageGrid& true_offset,
                    const ImageGrid& est_gain, const ImageGrid& est_offset,
                    const VisibilityMask& est_support, int margin = 1);

// |estimate aligned onto truth - truth| per pixel (invalid outside the mutual set).
ImageGrid difference_map(const ImageGrid& truth, const ImageGrid& estimate);

}  // namespace nuc
