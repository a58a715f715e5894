#include "nuc/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "nuc/lsqr.hpp"
#include "parallel.hpp"

namespace nuc {

GainOffsetMap GainOffsetMap::identity(int height, int width) {
  return {ImageGrid(height, width, 1.0), ImageGrid(height, width, 0.0),
          VisibilityMask(height, width, true)};
}

void SolverConfig::validate() const {
  if (outer_iterations < 1) throw ConfigError("outer_iterations must be >= 1");
  if (lsqr_iterations < 1) throw ConfigError("lsqr_iterations must be >= 1");
  if (min_pixel_pairs < 2) throw ConfigError("min_pixel_pairs must be >= 2");
  if (variance_floor_rel < 0) throw ConfigError("variance_floor_rel must be nonnegative");
  if (variance_floor && *variance_floor < 0) throw ConfigError("variance_floor must be >= 0");
  if (template_search_radius < 0) throw ConfigError("template_search_radius must be >= 0");
  if (joint_iterations < 0) throw ConfigError("joint_iterations must be >= 0");
  if (!(joint_min_gain >= 0.0)) throw ConfigError("joint_min_gain must be >= 0");
  if (joint_backtracks < 0) throw ConfigError("joint_backtracks must be >= 0");
  registration.validate();
}

ImageGrid predict_radiance(const ImageGrid& x, const Homography& h, const Psf& psf) {
  try {
    return convolve(warp(x, h), psf);
  } catch (const EmptyOverlapError&) {
    return ImageGrid(x.height(), x.width(), 0.0, false);
  }
}

VisibilityMask residual_mask(const ImageGrid& x, const Homography& h, const Psf& psf,
                             const ImageGrid& y) {
  return predict_radiance(x, h, psf).mask() & y.mask();
}

double objective(const SolverState& state, const ObservationSet& obs) {
  double total = 0.0;
  const auto& g = state.gd.gain;
  const auto& d = state.gd.offset;
  for (std::size_t i = 0; i < obs.groups.size(); ++i) {
    for (std::size_t j = 0; j < obs.groups[i].size(); ++j) {
      const ImageGrid& y = obs.groups[i][j];
      const ImageGrid pred = predict_radiance(state.x[i], state.h[i][j], obs.psf);
      for (std::size_t p = 0; p < y.size(); ++p) {
        if (!pred.valid(p) || !y.valid(p)) continue;
        const double r = g[p] * pred[p] + d[p] - y[p];
        total += r * r;
      }
    }
  }
  return total;
}

double resolve_variance_floor(const ObservationSet& obs, const SolverConfig& cfg) {
  if (cfg.variance_floor) return *cfg.variance_floor;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& group : obs.groups)
    for (const auto& y : group)
      for (std::size_t p = 0; p < y.size(); ++p)
        if (y.valid(p)) {
          sum += y[p];
          sum_sq += y[p] * y[p];
          ++n;
        }
  if (n == 0) throw ConfigError("observations carry no valid pixels");
  const double m = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum_sq / static_cast<double>(n) - m * m);
  return cfg.variance_floor_rel * var;
}

GainOffsetMap init_gd(const ObservationSet& obs, double variance_floor) {
  obs.validate();
  std::vector<ImageGrid> stack;
  std::vector<VisibilityMask> masks;
  for (const auto& group : obs.groups)
    for (const auto& y : group) {
      stack.push_back(y);
      masks.push_back(y.mask());
    }
  const MomentFields mom = masked_moments(stack, masks, 1);
  const int h = obs.height();
  const int w = obs.width();
  GainOffsetMap gd = GainOffsetMap::identity(h, w);
  const double floor_std = std::sqrt(variance_floor);
  for (std::size_t p = 0; p < gd.gain.size(); ++p) {
    if (mom.count[p] == 0) {
      gd.support.set(p, false);
      continue;
    }
    gd.offset[p] = mom.mean_a[p];
    if (mom.var_a[p] < variance_floor || mom.var_a[p] <= 0.0) {
      gd.gain[p] = floor_std > 0 ? floor_std : 1.0;
      gd.support.set(p, false);
    } else {
      gd.gain[p] = std::sqrt(mom.var_a[p]);
    }
  }
  return gd;
}

GainOffsetMap initial_nuc(const CorruptionProfile& truth, double perturbation,
                          std::uint64_t seed) {
  if (perturbation < 0) throw ConfigError("perturbation must be nonnegative");
  const int h = truth.gain.height();
  const int w = truth.gain.width();
  GainOffsetMap gd{truth.gain, truth.offset, VisibilityMask(h, w, true)};
  if (perturbation == 0.0) return gd;

  Rng rng(seed);
  std::uniform_real_distribution<double> freq(0.3, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  auto smooth_field = [&] {
    ImageGrid f(h, w);
    for (int k = 0; k < 3; ++k) {
      const double fs = freq(rng);
      const double ft = freq(rng);
      const double ph = phase(rng);
      const double a = amp(rng);
      for (int t = 0; t < h; ++t)
        for (int s = 0; s < w; ++s)
          f(t, s) += a * std::sin(2.0 * std::numbers::pi * (fs * s / w + ft * t / h) + ph);
    }
    double peak = 0.0;
    for (double v : f.values()) peak = std::max(peak, std::abs(v));
    if (peak > 0)
      for (auto& v : f.values()) v /= peak;
    return f;
  };
  const ImageGrid fg = smooth_field();
  const ImageGrid fd = smooth_field();
  double dmax = 0.0;
  for (double v : truth.offset.values()) dmax = std::max(dmax, std::abs(v));
  if (dmax == 0.0) dmax = 1.0;
  for (std::size_t p = 0; p < gd.gain.size(); ++p) {
    gd.gain[p] *= 1.0 + perturbation * fg[p];
    gd.offset[p] += perturbation * dmax * fd[p];
  }
  return gd;
}

ImageGrid clean_observation(const ImageGrid& y, const GainOffsetMap& gd) {
  ImageGrid out(y.height(), y.width(), 0.0, false);
  for (std::size_t p = 0; p < y.size(); ++p) {
    if (!y.valid(p) || !(std::abs(gd.gain[p]) > 1e-12)) continue;
    out[p] = (y[p] - gd.offset[p]) / gd.gain[p];
    out.set_valid(p, true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linearized imaging chain

namespace {

using Eigen::VectorXd;

// A S^{H_ij} for one observation with rows outside W_ij removed.
struct ObservationSystem {
  std::size_t group = 0;
  std::size_t index = 0;
  SparseOperator b;
  SparseOperator bt;  // explicit transpose: the adjoint becomes a row gather
  VisibilityMask rows;
  const ImageGrid* y = nullptr;
};

ObservationSystem observation_system(const SolverState& state, const ObservationSet& obs,
                                     std::size_t i, std::size_t j) {
  const ImageGrid& y = obs.groups[i][j];
  const VisibilityMask domain(y.height(), y.width(), true);
  LinearImageOperator op = imaging_operator(state.h[i][j], obs.psf, domain);
  ObservationSystem sys{i, j, std::move(op.matrix), {}, op.rows & y.mask(), &y};
  const VisibilityMask& keep = sys.rows;
  sys.b.prune([&](Eigen::Index row, Eigen::Index, double) {
    return keep[static_cast<std::size_t>(row)];
  });
  sys.bt = sys.b.transpose();
  return sys;
}

VectorXd flatten(const ImageGrid& image) {
  VectorXd v(static_cast<Eigen::Index>(image.size()));
  std::copy(image.values().begin(), image.values().end(), v.data());
  return v;
}

void check_adjoint(const LinearMap& apply, const LinearMap& adjoint, Eigen::Index cols,
                   Eigen::Index rows, std::uint64_t seed, const char* what) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  VectorXd u(cols);
  VectorXd v(rows);
  for (auto& e : u) e = dist(rng);
  for (auto& e : v) e = dist(rng);
  const VectorXd au = apply(u);
  const double lhs = au.dot(v);
  const double rhs = u.dot(adjoint(v));
  const double scale = au.norm() * v.norm() + 1e-300;
  if (std::abs(lhs - rhs) > 1e-10 * scale)
    throw InternalError(std::string(what) + " operator and adjoint disagree");
}

// Stacked system of one group: rows j * n + p, columns are the pivot pixels.
class GroupOperator {
 public:
  GroupOperator(std::vector<ObservationSystem> systems, const ImageGrid& gain)
      : systems_(std::move(systems)), gain_(flatten(gain)) {
    std::erase_if(systems_, [](const ObservationSystem& s) { return s.rows.count() == 0; });
  }

  bool empty() const { return systems_.empty(); }
  Eigen::Index cols() const { return gain_.size(); }
  Eigen::Index rows() const { return cols() * static_cast<Eigen::Index>(systems_.size()); }

  VectorXd apply(const VectorXd& x) const {
    const Eigen::Index n = cols();
    VectorXd out(rows());
    for (std::size_t j = 0; j < systems_.size(); ++j)
      out.segment(static_cast<Eigen::Index>(j) * n, n) = gain_.cwiseProduct(systems_[j].b * x);
    return out;
  }

  VectorXd adjoint(const VectorXd& r) const {
    const Eigen::Index n = cols();
    VectorXd out = VectorXd::Zero(n);
    for (std::size_t j = 0; j < systems_.size(); ++j)
      out += systems_[j].bt * gain_.cwiseProduct(r.segment(static_cast<Eigen::Index>(j) * n, n));
    return out;
  }

  VectorXd rhs(const ImageGrid& offset) const {
    const Eigen::Index n = cols();
    VectorXd b = VectorXd::Zero(rows());
    for (std::size_t j = 0; j < systems_.size(); ++j)
      for (Eigen::Index p = 0; p < n; ++p)
        if (systems_[j].rows[static_cast<std::size_t>(p)])
          b(static_cast<Eigen::Index>(j) * n + p) =
              (*systems_[j].y)[static_cast<std::size_t>(p)] - offset[static_cast<std::size_t>(p)];
    return b;
  }

 private:
  std::vector<ObservationSystem> systems_;
  VectorXd gain_;
};

}  // namespace

// ---------------------------------------------------------------------------
// x stage

std::vector<GroupStatus> x_stage(SolverState& state, const ObservationSet& obs,
                                 const SolverConfig& cfg) {
  std::vector<GroupStatus> status(obs.groups.size(), GroupStatus::solved);
  detail::parallel_for(obs.groups.size(), cfg.threads, [&](std::size_t i) {
    std::vector<ObservationSystem> systems;
    for (std::size_t j = 0; j < obs.groups[i].size(); ++j)
      systems.push_back(observation_system(state, obs, i, j));
    const GroupOperator op(std::move(systems), state.gd.gain);
    if (op.empty()) {
      status[i] = GroupStatus::skipped_empty;
      return;
    }
    const LinearMap apply = [&](const VectorXd& v) { return op.apply(v); };
    const LinearMap adjoint = [&](const VectorXd& v) { return op.adjoint(v); };
    check_adjoint(apply, adjoint, op.cols(), op.rows(), 0x5eed0000u + i, "x-stage");
    ImageGrid& x = state.x[i];
    const LsqrResult res = lsqr(apply, adjoint, op.rhs(state.gd.offset), flatten(x),
                                cfg.lsqr_iterations);
    std::copy(res.x.data(), res.x.data() + res.x.size(), x.values().begin());
    x.set_all_valid(true);
  });
  return status;
}

// ---------------------------------------------------------------------------
// Joint refinement

JointStepResult joint_stage(SolverState& state, const ObservationSet& obs,
                            const SolverConfig& cfg) {
  JointStepResult result;
  if (cfg.joint_iterations == 0) return result;
  const std::size_t groups = obs.groups.size();
  const auto n = static_cast<Eigen::Index>(obs.height()) * obs.width();
  const auto nx = n * static_cast<Eigen::Index>(groups);
  const Eigen::Index cols = nx + 2 * n;

  // Per group: its observation systems, the predictions A S x_i and the row
  // masks, both zeroed outside W_ij.
  std::vector<std::vector<ObservationSystem>> systems(groups);
  std::vector<std::vector<VectorXd>> predictions(groups);
  std::vector<std::vector<VectorXd>> row_masks(groups);
  std::vector<Eigen::Index> row_offset(groups + 1, 0);
  detail::parallel_for(groups, cfg.threads, [&](std::size_t i) {
    const VectorXd x = flatten(state.x[i]);
    for (std::size_t j = 0; j < obs.groups[i].size(); ++j) {
      systems[i].push_back(observation_system(state, obs, i, j));
      VectorXd w = VectorXd::Zero(n);
      for (Eigen::Index p = 0; p < n; ++p)
        if (systems[i].back().rows[static_cast<std::size_t>(p)]) w(p) = 1.0;
      predictions[i].push_back(systems[i].back().b * x);  // pruned rows are already 0
      row_masks[i].push_back(std::move(w));
    }
  });
  for (std::size_t i = 0; i < groups; ++i)
    row_offset[i + 1] = row_offset[i] + n * static_cast<Eigen::Index>(systems[i].size());
  const Eigen::Index rows = row_offset[groups];

  // The gain column is centered per pixel, dg = da, dd = db - mean(P) da, so
  // the gain and offset unknowns of a pixel are uncorrelated.
  VectorXd pred_mean = VectorXd::Zero(n);
  VectorXd pred_count = VectorXd::Zero(n);
  for (std::size_t i = 0; i < groups; ++i)
    for (std::size_t j = 0; j < systems[i].size(); ++j) {
      pred_mean += predictions[i][j];
      pred_count += row_masks[i][j];
    }
  for (Eigen::Index p = 0; p < n; ++p)
    if (pred_count(p) > 0) pred_mean(p) /= pred_count(p);
  std::vector<std::vector<VectorXd>> centered(groups);
  for (std::size_t i = 0; i < groups; ++i)
    for (std::size_t j = 0; j < systems[i].size(); ++j)
      centered[i].push_back(predictions[i][j] - row_masks[i][j].cwiseProduct(pred_mean));

  const VectorXd gain = flatten(state.gd.gain);
  VectorXd free_gd = VectorXd::Zero(n);  // 1 where g, d may move
  for (Eigen::Index p = 0; p < n; ++p)
    if (state.gd.support[static_cast<std::size_t>(p)]) free_gd(p) = 1.0;

  // Jacobi column scaling: unknowns differ in units (x in gv, g unitless).
  VectorXd col_scale = VectorXd::Zero(cols);
  for (std::size_t i = 0; i < groups; ++i)
    for (std::size_t j = 0; j < systems[i].size(); ++j) {
      const auto& sys = systems[i][j];
      const auto xo = static_cast<Eigen::Index>(i) * n;
      for (Eigen::Index p = 0; p < n; ++p) {
        const double g2 = gain(p) * gain(p);
        for (SparseOperator::InnerIterator it(sys.b, p); it; ++it)
          col_scale(xo + it.index()) += g2 * it.value() * it.value();
      }
      col_scale.segment(nx, n) += centered[i][j].cwiseAbs2();
      col_scale.segment(nx + n, n) += row_masks[i][j];
    }
  col_scale.segment(nx, n).array() *= free_gd.array();
  col_scale.segment(nx + n, n).array() *= free_gd.array();
  for (auto& c : col_scale) c = c > 0.0 ? 1.0 / std::sqrt(c) : 0.0;

  const LinearMap apply = [&](const VectorXd& z) -> VectorXd {
    const VectorXd u = z.cwiseProduct(col_scale);
    const auto dg = u.segment(nx, n);
    const auto dd = u.segment(nx + n, n);
    VectorXd out(rows);
    detail::parallel_for(groups, cfg.threads, [&](std::size_t i) {
      const auto x = u.segment(static_cast<Eigen::Index>(i) * n, n);
      for (std::size_t j = 0; j < systems[i].size(); ++j) {
        auto seg = out.segment(row_offset[i] + static_cast<Eigen::Index>(j) * n, n);
        seg.noalias() = systems[i][j].b * x;
        seg = gain.cwiseProduct(seg) + centered[i][j].cwiseProduct(dg) +
              row_masks[i][j].cwiseProduct(dd);
      }
    });
    return out;
  };
  const LinearMap adjoint = [&](const VectorXd& r) -> VectorXd {
    VectorXd out = VectorXd::Zero(cols);
    std::vector<VectorXd> dg(groups, VectorXd::Zero(n));
    std::vector<VectorXd> dd(groups, VectorXd::Zero(n));
    detail::parallel_for(groups, cfg.threads, [&](std::size_t i) {
      auto xo = out.segment(static_cast<Eigen::Index>(i) * n, n);
      VectorXd weighted(n);
      for (std::size_t j = 0; j < systems[i].size(); ++j) {
        const auto seg = r.segment(row_offset[i] + static_cast<Eigen::Index>(j) * n, n);
        weighted = gain.cwiseProduct(seg);
        xo.noalias() += systems[i][j].bt * weighted;
        dg[i] += centered[i][j].cwiseProduct(seg);
        dd[i] += row_masks[i][j].cwiseProduct(seg);
      }
    });
    for (std::size_t i = 0; i < groups; ++i) {
      out.segment(nx, n) += dg[i];
      out.segment(nx + n, n) += dd[i];
    }
    return out.cwiseProduct(col_scale);
  };
  check_adjoint(apply, adjoint, cols, rows, 0x10157u, "joint");

  VectorXd b = VectorXd::Zero(rows);
  for (std::size_t i = 0; i < groups; ++i)
    for (std::size_t j = 0; j < systems[i].size(); ++j) {
      const auto& sys = systems[i][j];
      const Eigen::Index o = row_offset[i] + static_cast<Eigen::Index>(j) * n;
      for (Eigen::Index p = 0; p < n; ++p) {
        const auto q = static_cast<std::size_t>(p);
        if (sys.rows[q])
          b(o + p) = (*sys.y)[q] - gain(p) * predictions[i][j](p) - state.gd.offset[q];
      }
    }

  const LsqrResult ls = lsqr(apply, adjoint, b, VectorXd::Zero(cols), cfg.joint_iterations);
  result.iterations = ls.iterations;
  const VectorXd step = ls.x.cwiseProduct(col_scale);
  if (!step.allFinite()) return result;

  // Gauss-Newton step with backtracking; the state only changes on a decrease.
  const double f0 = objective(state, obs);
  double alpha = 1.0;
  for (int attempt = 0; attempt <= cfg.joint_backtracks; ++attempt, alpha *= 0.5) {
    SolverState trial = state;
    for (std::size_t i = 0; i < groups; ++i) {
      auto& x = trial.x[i];
      for (Eigen::Index p = 0; p < n; ++p)
        x[static_cast<std::size_t>(p)] += alpha * step(static_cast<Eigen::Index>(i) * n + p);
    }
    bool positive = true;
    for (Eigen::Index p = 0; p < n; ++p) {
      const auto q = static_cast<std::size_t>(p);
      trial.gd.gain[q] += alpha * step(nx + p);
      trial.gd.offset[q] += alpha * (step(nx + n + p) - pred_mean(p) * step(nx + p));
      if (free_gd(p) > 0.0 && !(trial.gd.gain[q] > 0.0)) positive = false;
    }
    if (!positive) continue;
    const double f = objective(trial, obs);
    if (std::isfinite(f) && f < f0) {
      state = std::move(trial);
      result.step = alpha;
      return result;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// g/d stage

GainOffsetMap gd_stage(const SolverState& state, const ObservationSet& obs,
                       const SolverConfig& cfg) {
  std::vector<ImageGrid> predictors;
  std::vector<ImageGrid> responses;
  std::vector<VisibilityMask> masks;
  for (std::size_t i = 0; i < obs.groups.size(); ++i)
    for (std::size_t j = 0; j < obs.groups[i].size(); ++j) {
      predictors.push_back(predict_radiance(state.x[i], state.h[i][j], obs.psf));
      responses.push_back(obs.groups[i][j]);
      masks.push_back(predictors.back().mask() & responses.back().mask());
    }
  const MomentFields mom = masked_moments(predictors, responses, masks, cfg.min_pixel_pairs);
  GainOffsetMap out = state.gd;
  for (std::size_t p = 0; p < out.gain.size(); ++p) {
    bool ok = mom.count[p] >= cfg.min_pixel_pairs && mom.var_a.valid(p) &&
              mom.var_a[p] >= state.variance_floor && mom.var_a[p] > 0.0;
    double g = 0.0;
    if (ok) {
      g = mom.cov[p] / mom.var_a[p];
      ok = std::isfinite(g) && g > 0.0;
    }
    if (!ok) {
      out.support.set(p, false);
      continue;
    }
    out.gain[p] = g;
    out.offset[p] = mom.mean_b[p] - g * mom.mean_a[p];
    out.support.set(p, true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Registration stage

int registration_stage(SolverState& state, const ObservationSet& obs, const SolverConfig& cfg) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < obs.groups.size(); ++i)
    for (std::size_t j = 1; j < obs.groups[i].size(); ++j) pairs.emplace_back(i, j);
  std::vector<char> failed(pairs.size(), 0);
  detail::parallel_for(pairs.size(), cfg.threads, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    const ImageGrid cleaned = clean_observation(obs.groups[i][j], state.gd);
    try {
      state.h[i][j] =
          register_homography(state.x[i], cleaned, state.h[i][j], cfg.registration).h;
    } catch (const Error&) {
      failed[k] = 1;
    }
  });
  int count = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    state.registration_failed[pairs[k].first][pairs[k].second] = failed[k] != 0;
    count += failed[k];
  }
  return count;
}

// ---------------------------------------------------------------------------
// Normalization

void apply_ambiguity(SolverState& state, double a, double b) {
  if (a == 0.0 || !std::isfinite(a) || !std::isfinite(b))
    throw NormalizationError("ambiguity transform needs finite a != 0");
  for (auto& x : state.x)
    for (auto& v : x.values()) v = a * v + b;
  auto& g = state.gd.gain;
  auto& d = state.gd.offset;
  for (std::size_t p = 0; p < g.size(); ++p) {
    d[p] -= (b / a) * g[p];
    g[p] /= a;
  }
}

void normalize(SolverState& state) {
  const auto& g = state.gd.gain;
  const auto& d = state.gd.offset;
  double sg = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < g.size(); ++p)
    if (state.gd.support[p]) {
      sg += g[p];
      sd += d[p];
      ++n;
    }
  if (n == 0) throw NormalizationError("cannot normalize: gain/offset support is empty");
  const double mg = sg / static_cast<double>(n);
  const double md = sd / static_cast<double>(n);
  if (!(mg > 0.0)) throw NormalizationError("mean gain is not positive; solver diverged");
  apply_ambiguity(state, mg, md);
}

// ---------------------------------------------------------------------------
// Driver

SolverState solve(const ObservationSet& obs, const std::optional<GainOffsetMap>& initial,
                  const SolverConfig& cfg, const ProgressSink& progress) {
  cfg.validate();
  obs.validate();
  const auto start = std::chrono::steady_clock::now();
  const int h = obs.height();
  const int w = obs.width();

  SolverState state;
  state.variance_floor = resolve_variance_floor(obs, cfg);
  state.gd = initial ? *initial : init_gd(obs, state.variance_floor);
  if (state.gd.gain.height() != h || state.gd.gain.width() != w)
    throw ConfigError("initial gain/offset map does not match the sensor");
  if (state.gd.support.size() == 0) state.gd.support = VisibilityMask(h, w, true);

  for (const auto& group : obs.groups) {
    ImageGrid x = clean_observation(group.front(), state.gd);
    if (x.valid_count() == 0) throw ConfigError("reference observation has no usable pixels");
    const double fill = mean(x);
    for (std::size_t p = 0; p < x.size(); ++p)
      if (!x.valid(p)) x[p] = fill;
    x.set_all_valid(true);
    state.x.push_back(std::move(x));
    state.h.emplace_back(group.size(), Homography::identity());
    state.registration_failed.emplace_back(group.size(), false);
  }
  normalize(state);

  auto record = [&](const std::string& stage) {
    const double f = objective(state, obs);
    if (!std::isfinite(f))
      throw DivergenceError(stage, "objective became non-finite after the " + stage + " stage");
    state.objective_history.push_back(f);
    state.stage_history.push_back(stage);
    state.cycle_history.push_back(state.cycle);
    if (progress) {
      const std::chrono::duration<double> el = std::chrono::steady_clock::now() - start;
      progress({state.cycle, stage, f, el.count()});
    }
    return f;
  };

  // Initial registration: integer shift, then Gauss-Newton.
  {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < obs.groups.size(); ++i)
      for (std::size_t j = 1; j < obs.groups[i].size(); ++j) pairs.emplace_back(i, j);
    std::vector<char> failed(pairs.size(), 0);
    detail::parallel_for(pairs.size(), cfg.threads, [&](std::size_t k) {
      const auto [i, j] = pairs[k];
      const ImageGrid cleaned = clean_observation(obs.groups[i][j], state.gd);
      try {
        const Homography shift =
            template_match_shift(state.x[i], cleaned, cfg.template_search_radius);
        state.h[i][j] = register_homography(state.x[i], cleaned, shift, cfg.registration).h;
      } catch (const Error&) {
        failed[k] = 1;
      }
    });
    for (std::size_t k = 0; k < pairs.size(); ++k)
      state.registration_failed[pairs[k].first][pairs[k].second] = failed[k] != 0;
  }
  double previous = record("initial_registration");

  bool joint_active = cfg.joint_iterations > 0;
  for (int c = 1; c <= cfg.outer_iterations; ++c) {
    state.cycle = c;
    registration_stage(state, obs, cfg);
    record("registration");
    state.gd = gd_stage(state, obs, cfg);
    record("gd");
    x_stage(state, obs, cfg);
    double current = record("x");
    if (joint_active) {
      joint_stage(state, obs, cfg);
      const double before = current;
      current = record("joint");
      if (before - current < cfg.joint_min_gain * before) joint_active = false;
    }
    if (cfg.normalize_each_cycle || c == cfg.outer_iterations) {
      normalize(state);
      current = record("normalize");
    }
    const bool stalled = previous - current < cfg.early_exit_rel * previous;
    previous = current;
    if (current == 0.0 || stalled) break;
  }
  if (!cfg.normalize_each_cycle && state.stage_history.back() != "normalize") {
    normalize(state);
    record("normalize");
  }
  return state;
}

}  // namespace nuc
