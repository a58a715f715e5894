#include "nuc/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace nuc {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double draw_symmetric(Rng& rng, double half_width) {
  if (half_width <= 0.0) return 0.0;
  std::uniform_real_distribution<double> dist(-half_width, half_width);
  return dist(rng);
}

Eigen::Matrix3d rot_x(double a) {
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

Eigen::Matrix3d rot_y(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

Eigen::Matrix3d rot_z(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

// Separable gaussian blur with mirrored borders.
std::vector<double> blur(const std::vector<double>& in, int h, int w, double sigma) {
  const int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
  double ks = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    k[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
    ks += k[static_cast<std::size_t>(i + rad)];
  }
  for (auto& v : k) v /= ks;
  auto mirror = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  std::vector<double> tmp(in.size());
  std::vector<double> out(in.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int i = -rad; i <= rad; ++i)
        s += k[static_cast<std::size_t>(i + rad)] * in[static_cast<std::size_t>(r * w + mirror(c + i, w))];
      tmp[static_cast<std::size_t>(r * w + c)] = s;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int i = -rad; i <= rad; ++i)
        s += k[static_cast<std::size_t>(i + rad)] * tmp[static_cast<std::size_t>(mirror(r + i, h) * w + c)];
      out[static_cast<std::size_t>(r * w + c)] = s;
    }
  return out;
}

void rescale_to(ImageGrid& img, double lo, double hi) {
  const auto v = img.values();
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double a = *mn;
  const double span = *mx - *mn;
  for (auto& x : v) x = span > 0.0 ? lo + (hi - lo) * (x - a) / span : lo;
}

}  // namespace

// ---------------------------------------------------------------------------
// Hover model

void HoverModel::validate() const {
  if (t_z_range_m < 0 || yaw_range_deg < 0 || roll_range_deg < 0 || pitch_range_deg < 0 ||
      tilt_x_range_deg < 0 || tilt_y_range_deg < 0 || max_translation_px < 0)
    throw ConfigError("hover model ranges must be nonnegative");
  if (!(altitude_m > 0)) throw ConfigError("hover model altitude must be positive");
  if (!(fov_deg > 0 && fov_deg < 180)) throw ConfigError("hover model fov must be in (0, 180)");
  if (sensor_height < 3 || sensor_width < 3) throw ConfigError("hover model sensor too small");
}

double HoverModel::focal_px() const {
  return 0.5 * sensor_width / std::tan(0.5 * fov_deg * kDeg);
}

Homography build_hover_homography(const HoverParams& p, const HoverModel& model) {
  model.validate();
  const double f = model.focal_px();
  const double cx = 0.5 * (model.sensor_width - 1);
  const double cy = 0.5 * (model.sensor_height - 1);
  Eigen::Matrix3d k;
  k << f, 0, cx, 0, f, cy, 0, 0, 1;
  Eigen::Matrix3d k_inv;
  k_inv << 1.0 / f, 0, -cx / f, 0, 1.0 / f, -cy / f, 0, 0, 1;

  const Eigen::Matrix3d r = rot_z(p.yaw_deg * kDeg) * rot_y(p.pitch_deg * kDeg) *
                            rot_x(p.roll_deg * kDeg) * rot_x(p.tilt_x_deg * kDeg) *
                            rot_y(p.tilt_y_deg * kDeg);
  const Eigen::Vector3d t(p.t_x_m, p.t_y_m, p.t_z_m);
  const Eigen::Vector3d n(0, 0, 1);
  const Eigen::Matrix3d m = k * (r + t * n.transpose() / model.altitude_m) * k_inv;
  return Homography::from_matrix(m);
}

HoverSample sample_hover(const HoverModel& model, Rng& rng) {
  model.validate();
  const double gsd = model.ground_sample_m();
  for (int draw = 1; draw <= kHoverRejectionBudget; ++draw) {
    HoverParams p;
    p.t_x_m = draw_symmetric(rng, model.max_translation_px) * gsd;
    p.t_y_m = draw_symmetric(rng, model.max_translation_px) * gsd;
    p.t_z_m = draw_symmetric(rng, model.t_z_range_m);
    p.roll_deg = draw_symmetric(rng, model.roll_range_deg);
    p.pitch_deg = draw_symmetric(rng, model.pitch_range_deg);
    p.yaw_deg = draw_symmetric(rng, model.yaw_range_deg);
    p.tilt_x_deg = draw_symmetric(rng, model.tilt_x_range_deg);
    p.tilt_y_deg = draw_symmetric(rng, model.tilt_y_range_deg);
    const Homography h = build_hover_homography(p, model);
    if (h.max_corner_displacement(model.sensor_height, model.sensor_width) <=
        model.max_translation_px)
      return {h, p, draw};
  }
  throw ConfigError("hover homography rejection budget exhausted (" +
                    std::to_string(kHoverRejectionBudget) + " draws)");
}

Homography sample_homography(const HoverModel& model, Rng& rng) {
  return sample_hover(model, rng).h;
}

// ---------------------------------------------------------------------------
// Profiles

std::string to_string(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::radial: return "radial";
    case ProfileKind::sine: return "sine";
    case ProfileKind::custom: return "custom";
  }
  return "custom";
}

ProfileKind profile_kind_from_string(const std::string& s) {
  if (s == "radial") return ProfileKind::radial;
  if (s == "sine") return ProfileKind::sine;
  if (s == "custom") return ProfileKind::custom;
  throw ConfigError("unknown profile kind '" + s + "'");
}

void normalize_profile(CorruptionProfile& profile) {
  const double gm = mean(profile.gain);
  if (!(gm > 0)) throw NormalizationError("profile gain mean is not positive");
  for (auto& v : profile.gain.values()) v /= gm;
  const double dm = mean(profile.offset);
  for (auto& v : profile.offset.values()) v -= dm;
}

CorruptionProfile make_radial_profile(int height, int width, double scene_std, bool normalize) {
  if (!(scene_std > 0)) throw ConfigError("scene_std must be positive");
  CorruptionProfile p;
  p.kind = ProfileKind::radial;
  p.gain = ImageGrid(height, width);
  p.offset = ImageGrid(height, width);
  const double cs = 0.5 * (width - 1);
  const double ct = 0.5 * (height - 1);
  for (int t = 0; t < height; ++t)
    for (int s = 0; s < width; ++s) {
      const double qs = (s - cs) / 2.0;
      const double qt = (t - ct) / 2.0;
      p.gain(t, s) = qs * qs + qt * qt;
      p.offset(t, s) = 0.5 * qs * qs + qt * qt;
    }
  rescale_to(p.gain, 0.7, 1.3);
  rescale_to(p.offset, 0.0, 4.0 * scene_std);
  if (normalize) normalize_profile(p);
  return p;
}

CorruptionProfile make_sine_profile(int height, int width, double scene_std, bool normalize) {
  if (!(scene_std > 0)) throw ConfigError("scene_std must be positive");
  CorruptionProfile p;
  p.kind = ProfileKind::sine;
  p.gain = ImageGrid(height, width);
  p.offset = ImageGrid(height, width);
  for (int t = 0; t < height; ++t)
    for (int s = 0; s < width; ++s) {
      p.gain(t, s) = 1.0 + 0.3 * std::sin(s / 2.5) * std::sin(t / 7.5);
      p.offset(t, s) = 3.5 * scene_std * std::sin((s + t) / 5.0) * std::sin((s - t) / 10.0);
    }
  if (normalize) normalize_profile(p);
  return p;
}

CorruptionProfile make_profile(ProfileKind kind, int height, int width, double scene_std) {
  switch (kind) {
    case ProfileKind::radial: return make_radial_profile(height, width, scene_std);
    case ProfileKind::sine: return make_sine_profile(height, width, scene_std);
    case ProfileKind::custom: break;
  }
  throw ConfigError("custom profiles must be supplied explicitly");
}

// ---------------------------------------------------------------------------
// Observations

ImageGrid corrupt(const ImageGrid& x, const Homography& h, const CorruptionProfile& profile,
                  Rng& rng, const Psf& psf) {
  if (profile.gain.height() != x.height() || profile.gain.width() != x.width() ||
      !profile.gain.same_shape(profile.offset))
    throw ConfigError("corruption profile does not match the sensor grid");
  const ImageGrid radiance = convolve(warp(x, h), psf);
  if (radiance.valid_count() == 0) throw EmptyOverlapError("no valid pixels after warp and blur");
  const bool noisy = profile.noise_snr > 0 && std::isfinite(profile.noise_snr);
  const double sigma = noisy ? stddev(radiance) / profile.noise_snr : 0.0;
  std::normal_distribution<double> noise(0.0, sigma > 0 ? sigma : 1.0);
  ImageGrid y(x.height(), x.width(), 0.0, false);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!radiance.valid(i)) continue;
    double v = profile.gain[i] * radiance[i] + profile.offset[i];
    if (sigma > 0) v += noise(rng);
    y[i] = v;
    y.set_valid(i, true);
  }
  return y;
}

ImageGrid make_scene(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);
  const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  std::vector<double> acc(n, 0.0);
  // Fine structure for registration, coarse structure for the thermal field.
  const std::array<std::pair<double, double>, 3> octaves{
      std::pair{1.2, 0.35}, std::pair{3.5, 0.6}, std::pair{10.0, 1.0}};
  for (const auto& [sigma, weight] : octaves) {
    std::vector<double> noise(n);
    for (auto& v : noise) v = white(rng);
    auto layer = blur(noise, height, width, sigma);
    double m = 0.0;
    for (double v : layer) m += v;
    m /= static_cast<double>(n);
    double var = 0.0;
    for (double v : layer) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) acc[i] += weight * (layer[i] - m) / sd;
  }
  ImageGrid img(height, width);
  std::copy(acc.begin(), acc.end(), img.values().begin());
  rescale_to(img, 0.0, 255.0);
  for (auto& v : img.values()) v = std::round(v);
  return img;
}

std::size_t ObservationSet::observation_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

void ObservationSet::validate() const {
  if (groups.empty() || groups.front().empty()) throw ConfigError("observation set is empty");
  const int h = height();
  const int w = width();
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("observation group is empty");
    for (const auto& y : g)
      if (y.height() != h || y.width() != w)
        throw ConfigError("observations do not share the sensor dimensions");
  }
}

std::pair<int, int> mosaic_shape_for(int fovs, int size) {
  if (fovs < 1 || size < 3) throw ConfigError("need fovs >= 1 and size >= 3");
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(fovs))));
  const int rows = (fovs + cols - 1) / cols;
  return {rows * size, cols * size};
}

Dataset build_dataset(const ImageGrid& mosaic, int fovs, int k, const HoverModel& model,
                      ProfileKind kind, std::uint64_t seed, const DatasetOptions& options) {
  if (fovs < 1 || k < 1) throw ConfigError("need fovs >= 1 and k >= 1");
  const int size = options.size;
  if (size < 3) throw ConfigError("image size must be at least 3");
  const int tiles_per_row = mosaic.width() / size;
  const int tile_rows = mosaic.height() / size;
  if (tiles_per_row * tile_rows < fovs)
    throw ConfigError("mosaic " + std::to_string(mosaic.height()) + "x" +
                      std::to_string(mosaic.width()) + " cannot hold " + std::to_string(fovs) +
                      " disjoint " + std::to_string(size) + "x" + std::to_string(size) + " tiles");

  HoverModel hover = model;
  hover.sensor_height = size;
  hover.sensor_width = size;

  Dataset ds;
  ds.observations.psf = options.psf;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (int g = 0; g < fovs; ++g) {
    FovTruth ft;
    ft.origin_row = (g / tiles_per_row) * size;
    ft.origin_col = (g % tiles_per_row) * size;
    ft.pivot = ImageGrid(size, size);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        if (!mosaic.valid(ft.origin_row + r, ft.origin_col + c))
          throw ConfigError("scene mosaic has invalid pixels inside a tile");
        const double v = mosaic(ft.origin_row + r, ft.origin_col + c);
        ft.pivot(r, c) = v;
        sum += v;
        sum_sq += v * v;
        ++count;
      }
    ds.truth.push_back(std::move(ft));
  }
  const double m = sum / static_cast<double>(count);
  ds.scene_std = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - m * m));
  if (!(ds.scene_std > 0)) throw ConfigError("scene has no contrast");

  ds.profile = make_profile(kind, size, size, ds.scene_std);
  ds.profile.noise_snr = options.snr;
  ds.profile.seed = seed;

  Rng rng(seed);
  for (int g = 0; g < fovs; ++g) {
    auto& ft = ds.truth[static_cast<std::size_t>(g)];
    std::vector<ImageGrid> obs;
    std::vector<VisibilityMask> masks;
    for (int j = 0; j < k; ++j) {
      const Homography h = j == 0 ? Homography::identity() : sample_homography(hover, rng);
      ft.homographies.push_back(h);
      obs.push_back(corrupt(ft.pivot, h, ds.profile, rng, options.psf));
      masks.push_back(obs.back().mask());
    }
    ds.observations.groups.push_back(std::move(obs));
    ds.masks.push_back(std::move(masks));
  }
  return ds;
}

}  // namespace nuc
