#include "nuc/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace nuc::cli {

namespace {

constexpr const char* kFormatVersion = "1";

std::string two(std::size_t v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

std::string obs_name(std::size_t g, std::size_t o) { return "y_g" + two(g) + "_o" + two(o) + ".nucf"; }
std::string h_name(std::size_t g, std::size_t o) { return "H_g" + two(g) + "_o" + two(o) + ".txt"; }
std::string x_name(std::size_t g, const char* ext) { return "x_g" + two(g) + ext; }

double parse_double(const io::Manifest& m, const std::string& key) {
  const std::string& v = m.get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw IoError("manifest key '" + key + "' is not a number: " + v);
}

long long parse_int(const io::Manifest& m, const std::string& key) {
  const std::string& v = m.get(key);
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw IoError("manifest key '" + key + "' is not an integer: " + v);
}

std::uint64_t parse_u64(const io::Manifest& m, const std::string& key) {
  const std::string& v = m.get(key);
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw IoError("manifest key '" + key + "' is not an unsigned integer: " + v);
}

bool parse_bool(const io::Manifest& m, const std::string& key) {
  const std::string& v = m.get(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw IoError("manifest key '" + key + "' is not a boolean: " + v);
}

void put_hover(io::Manifest& m, const HoverModel& h) {
  m.set("hover.t_z_range_m", h.t_z_range_m);
  m.set("hover.yaw_range_deg", h.yaw_range_deg);
  m.set("hover.roll_range_deg", h.roll_range_deg);
  m.set("hover.pitch_range_deg", h.pitch_range_deg);
  m.set("hover.tilt_x_range_deg", h.tilt_x_range_deg);
  m.set("hover.tilt_y_range_deg", h.tilt_y_range_deg);
  m.set("hover.max_translation_px", h.max_translation_px);
  m.set("hover.altitude_m", h.altitude_m);
  m.set("hover.fov_deg", h.fov_deg);
}

HoverModel get_hover(const io::Manifest& m) {
  HoverModel h;
  h.t_z_range_m = parse_double(m, "hover.t_z_range_m");
  h.yaw_range_deg = parse_double(m, "hover.yaw_range_deg");
  h.roll_range_deg = parse_double(m, "hover.roll_range_deg");
  h.pitch_range_deg = parse_double(m, "hover.pitch_range_deg");
  h.tilt_x_range_deg = parse_double(m, "hover.tilt_x_range_deg");
  h.tilt_y_range_deg = parse_double(m, "hover.tilt_y_range_deg");
  h.max_translation_px = parse_double(m, "hover.max_translation_px");
  h.altitude_m = parse_double(m, "hover.altitude_m");
  h.fov_deg = parse_double(m, "hover.fov_deg");
  return h;
}

void put_simulate(io::Manifest& m, const SimulateOptions& o) {
  m.set("profile", to_string(o.profile));
  m.set("fovs", o.fovs);
  m.set("k", o.k);
  m.set("size", o.size);
  m.set("snr", o.snr);
  m.set("seed", o.seed);
  m.set("scene", o.scene ? o.scene->string() : std::string("procedural"));
  m.set("init_nuc_error", o.init_nuc_error);
  m.set("psf_sigma", o.psf_sigma);
  m.set("psf_radius", o.psf_radius);
  put_hover(m, o.hover);
}

SimulateOptions get_simulate(const io::Manifest& m) {
  SimulateOptions o;
  o.profile = profile_kind_from_string(m.get("profile"));
  o.fovs = static_cast<int>(parse_int(m, "fovs"));
  o.k = static_cast<int>(parse_int(m, "k"));
  o.size = static_cast<int>(parse_int(m, "size"));
  o.snr = parse_double(m, "snr");
  o.seed = parse_u64(m, "seed");
  if (m.get("scene") != "procedural") o.scene = m.get("scene");
  o.init_nuc_error = parse_double(m, "init_nuc_error");
  o.psf_sigma = parse_double(m, "psf_sigma");
  o.psf_radius = static_cast<int>(parse_int(m, "psf_radius"));
  o.hover = get_hover(m);
  return o;
}

void put_solver(io::Manifest& m, const SolverConfig& c) {
  m.set("solver.outer_iterations", c.outer_iterations);
  m.set("solver.lsqr_iterations", c.lsqr_iterations);
  m.set("solver.min_pixel_pairs", c.min_pixel_pairs);
  m.set("solver.variance_floor_rel", c.variance_floor_rel);
  m.set("solver.variance_floor", c.variance_floor ? io::format_double(*c.variance_floor)
                                                  : std::string("auto"));
  m.set("solver.normalize_each_cycle", c.normalize_each_cycle);
  m.set("solver.early_exit_rel", c.early_exit_rel);
  m.set("solver.template_search_radius", c.template_search_radius);
  m.set("solver.joint_iterations", c.joint_iterations);
  m.set("solver.joint_min_gain", c.joint_min_gain);
  m.set("solver.joint_backtracks", c.joint_backtracks);
  m.set("solver.threads", c.threads);
  m.set("registration.max_gn_iterations", c.registration.max_gn_iterations);
  m.set("registration.boundary_margin", c.registration.boundary_margin);
  m.set("registration.damping", c.registration.damping);
  m.set("registration.step_tolerance", c.registration.step_tolerance);
  m.set("registration.max_condition", c.registration.max_condition);
  m.set("registration.min_pixels", c.registration.min_pixels);
}

SolverConfig get_solver(const io::Manifest& m) {
  SolverConfig c;
  c.outer_iterations = static_cast<int>(parse_int(m, "solver.outer_iterations"));
  c.lsqr_iterations = static_cast<int>(parse_int(m, "solver.lsqr_iterations"));
  c.min_pixel_pairs = static_cast<int>(parse_int(m, "solver.min_pixel_pairs"));
  c.variance_floor_rel = parse_double(m, "solver.variance_floor_rel");
  if (m.get("solver.variance_floor") != "auto")
    c.variance_floor = parse_double(m, "solver.variance_floor");
  c.normalize_each_cycle = parse_bool(m, "solver.normalize_each_cycle");
  c.early_exit_rel = parse_double(m, "solver.early_exit_rel");
  c.template_search_radius = static_cast<int>(parse_int(m, "solver.template_search_radius"));
  c.joint_iterations = static_cast<int>(parse_int(m, "solver.joint_iterations"));
  c.joint_min_gain = parse_double(m, "solver.joint_min_gain");
  c.joint_backtracks = static_cast<int>(parse_int(m, "solver.joint_backtracks"));
  c.threads = static_cast<int>(parse_int(m, "solver.threads"));
  c.registration.max_gn_iterations =
      static_cast<int>(parse_int(m, "registration.max_gn_iterations"));
  c.registration.boundary_margin = static_cast<int>(parse_int(m, "registration.boundary_margin"));
  c.registration.damping = parse_double(m, "registration.damping");
  c.registration.step_tolerance = parse_double(m, "registration.step_tolerance");
  c.registration.max_condition = parse_double(m, "registration.max_condition");
  c.registration.min_pixels = static_cast<int>(parse_int(m, "registration.min_pixels"));
  return c;
}

// Remembers what a command wrote so the manifest checksums exactly that set.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  fs::path operator()(const fs::path& rel) {
    written_.push_back(rel);
    return root_ / rel;
  }

  void put_checksums(io::Manifest& m) const {
    std::vector<fs::path> files = written_;
    std::sort(files.begin(), files.end());
    for (const auto& rel : files)
      m.set("sha256." + rel.generic_string(), io::sha256_file(root_ / rel));
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::vector<fs::path> written_;
};

void prepare_output(const fs::path& out, bool force, std::initializer_list<const char*> owned) {
  std::error_code ec;
  if (fs::exists(out, ec) && !fs::is_empty(out, ec)) {
    if (!force)
      throw IoError("output directory " + out.string() + " is not empty (use --force)");
    for (const char* name : owned) fs::remove_all(out / name, ec);
  }
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string());
}

Psf make_psf(double sigma, int radius) {
  if (sigma < 0) throw ConfigError("psf sigma must be >= 0");
  if (sigma == 0.0) return Psf::delta();
  return Psf::gaussian(sigma, radius);
}

std::pair<double, double> value_range(const ImageGrid& image) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < image.size(); ++i)
    if (image.valid(i)) {
      lo = std::min(lo, image[i]);
      hi = std::max(hi, image[i]);
    }
  if (!(lo <= hi)) return {0.0, 1.0};
  return {lo, hi};
}

bool all_finite(const ImageGrid& image) {
  for (std::size_t i = 0; i < image.size(); ++i)
    if (image.valid(i) && !std::isfinite(image[i])) return false;
  return true;
}

VisibilityMask read_mask_pgm(const fs::path& path) {
  const ImageGrid g = io::read_pgm(path);
  VisibilityMask m(g.height(), g.width(), false);
  for (std::size_t i = 0; i < g.size(); ++i) m.set(i, g[i] >= 128.0);
  return m;
}


}  // namespace

int resolve_threads(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("NUC_THREADS"); env && *env) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (*end != '\0' || cap < 1) throw ConfigError("NUC_THREADS must be a positive integer");
    n = std::min<long>(n, cap);
  }
  return n;
}

void SimulateOptions::validate() const {
  if (fovs < 1) throw ConfigError("--fovs must be >= 1");
  if (k < 1) throw ConfigError("--k must be >= 1");
  if (size < 3) throw ConfigError("--size must be >= 3");
  if (!(snr >= 0.0)) throw ConfigError("--snr must be >= 0 (0 disables noise)");
  if (!(init_nuc_error >= 0.0)) throw ConfigError("--init-nuc-error must be >= 0");
  if (!(psf_sigma >= 0.0)) throw ConfigError("--psf-sigma must be >= 0");
  if (psf_radius < 0) throw ConfigError("--psf-radius must be >= 0");
  if (profile == ProfileKind::custom) throw ConfigError("--profile must be radial or sine");
  hover.validate();
}

SimulatedRun simulate(const SimulateOptions& opt) {
  opt.validate();
  ImageGrid mosaic;
  if (opt.scene) {
    mosaic = io::read_pgm(*opt.scene);
  } else {
    const auto [mh, mw] = mosaic_shape_for(opt.fovs, opt.size);
    mosaic = make_scene(mh, mw, opt.seed);
  }
  DatasetOptions dopt;
  dopt.size = opt.size;
  dopt.snr = opt.snr;
  dopt.psf = make_psf(opt.psf_sigma, opt.psf_radius);
  SimulatedRun run;
  run.dataset = build_dataset(mosaic, opt.fovs, opt.k, opt.hover, opt.profile, opt.seed, dopt);
  run.calibration = initial_nuc(run.dataset.profile, opt.init_nuc_error,
                                opt.seed ^ 0x6a09e667f3bcc908ull);
  return run;
}

PipelineResult run_pipeline(const SimulateOptions& sim, const SolverConfig& solver,
                            const ProgressSink& progress) {
  const SimulatedRun run = simulate(sim);
  PipelineResult out;
  out.state = solve(run.dataset.observations, run.calibration, solver, progress);
  std::vector<ImageGrid> truth;
  for (const auto& t : run.dataset.truth) truth.push_back(t.pivot);
  out.report = evaluate(truth, out.state.x, run.dataset.profile.gain, run.dataset.profile.offset,
                        out.state.gd.gain, out.state.gd.offset, out.state.gd.support);
  return out;
}

// ---------------------------------------------------------------------------
// simulate

void cmd_simulate(const SimulateOptions& opt, const fs::path& root) {
  const SimulatedRun run = simulate(opt);
  OutputDir out(root);
  const Dataset& ds = run.dataset;

  io::Manifest info;
  info.set("format", "nuc-dataset");
  info.set("version", kFormatVersion);
  info.set("groups", static_cast<int>(ds.observations.groups.size()));
  for (std::size_t g = 0; g < ds.observations.groups.size(); ++g)
    info.set("observations_g" + two(g), static_cast<int>(ds.observations.groups[g].size()));
  info.set("height", ds.observations.height());
  info.set("width", ds.observations.width());
  info.set("psf_size", ds.observations.psf.size());
  std::string weights;
  for (int i = 0; i < ds.observations.psf.size(); ++i)
    for (int j = 0; j < ds.observations.psf.size(); ++j) {
      if (!weights.empty()) weights += ' ';
      weights += io::format_double(ds.observations.psf(i, j));
    }
  info.set("psf_weights", weights);
  info.write(out("obs/dataset.txt"));

  for (std::size_t g = 0; g < ds.observations.groups.size(); ++g)
    for (std::size_t o = 0; o < ds.observations.groups[g].size(); ++o) {
      io::write_nucf(out(fs::path("obs") / obs_name(g, o)), ds.observations.groups[g][o]);
      io::write_pgm(out(fs::path("masks") / ("W_g" + two(g) + "_o" + two(o) + ".pgm")), ds.masks[g][o]);
    }

  io::write_nucf(out("calib/gain.nucf"), run.calibration.gain);
  io::write_nucf(out("calib/offset.nucf"), run.calibration.offset);

  const fs::path truth = "truth";
  for (std::size_t g = 0; g < ds.truth.size(); ++g) {
    io::write_nucf(out(truth / x_name(g, ".nucf")), ds.truth[g].pivot);
    io::write_pgm(out(truth / x_name(g, ".pgm")), ds.truth[g].pivot, 0.0, 255.0);
    for (std::size_t o = 0; o < ds.truth[g].homographies.size(); ++o)
      io::write_homography(out(truth / h_name(g, o)), ds.truth[g].homographies[o]);
  }
  io::write_nucf(out(truth / "gain.nucf"), ds.profile.gain);
  io::write_nucf(out(truth / "offset.nucf"), ds.profile.offset);
  io::Manifest profile;
  profile.set("kind", to_string(ds.profile.kind));
  profile.set("scene_std", ds.scene_std);
  profile.set("noise_snr", ds.profile.noise_snr);
  for (std::size_t g = 0; g < ds.truth.size(); ++g) {
    profile.set("origin_row_g" + two(g), ds.truth[g].origin_row);
    profile.set("origin_col_g" + two(g), ds.truth[g].origin_col);
  }
  profile.write(out(truth / "profile.txt"));

  io::Manifest m;
  m.set("command", "simulate");
  m.set("format_version", kFormatVersion);
  put_simulate(m, opt);
  out.put_checksums(m);
  m.write(root / "manifest.txt");
}

ObservationSet read_observations(const fs::path& dataset) {
  const io::Manifest info = io::Manifest::read(dataset / "obs" / "dataset.txt");
  if (info.get("format") != "nuc-dataset") throw IoError("obs/dataset.txt: not a nuc dataset");
  ObservationSet obs;
  const int psf_size = static_cast<int>(parse_int(info, "psf_size"));
  std::vector<double> weights;
  std::istringstream ws(info.get("psf_weights"));
  for (double v; ws >> v;) weights.push_back(v);
  obs.psf = psf_size == 1 ? Psf::delta() : Psf::from_weights(psf_size, weights);
  const long long groups = parse_int(info, "groups");
  if (groups < 1) throw IoError("obs/dataset.txt: no groups");
  for (long long g = 0; g < groups; ++g) {
    const long long k = parse_int(info, "observations_g" + two(static_cast<std::size_t>(g)));
    std::vector<ImageGrid> group;
    for (long long o = 0; o < k; ++o)
      group.push_back(io::read_nucf(dataset / "obs" /
                                    obs_name(static_cast<std::size_t>(g), static_cast<std::size_t>(o))));
    obs.groups.push_back(std::move(group));
  }
  obs.validate();
  return obs;
}

std::vector<ImageGrid> read_truth_pivots(const fs::path& truth) {
  std::vector<ImageGrid> out;
  for (std::size_t g = 0; fs::exists(truth / x_name(g, ".nucf")); ++g)
    out.push_back(io::read_nucf(truth / x_name(g, ".nucf")));
  if (out.empty()) throw IoError("no ground-truth images under " + truth.string());
  return out;
}

// ---------------------------------------------------------------------------
// restore

namespace {

void restore_into(const RestoreOptions& opt, const fs::path& root, std::ostream& log) {
  OutputDir out(root);
  const ObservationSet obs = read_observations(opt.in);
  std::optional<GainOffsetMap> init;
  const bool have_calib = fs::exists(opt.in / "calib" / "gain.nucf");
  if (opt.init == "calib" || (opt.init == "auto" && have_calib)) {
    const ImageGrid g = io::read_nucf(opt.in / "calib" / "gain.nucf");
    const ImageGrid d = io::read_nucf(opt.in / "calib" / "offset.nucf");
    init = GainOffsetMap{g, d, g.mask() & d.mask()};
  } else if (opt.init != "stats" && opt.init != "auto") {
    throw ConfigError("--init must be auto, calib or stats");
  }

  SolverConfig cfg = opt.solver;
  cfg.threads = resolve_threads(cfg.threads);
  std::vector<ProgressRecord> timeline;
  const SolverState st = solve(obs, init, cfg, [&](const ProgressRecord& r) {
    nlohmann::ordered_json j;
    j["event"] = "progress";
    j["cycle"] = r.cycle;
    j["stage"] = r.stage;
    j["objective"] = r.objective;
    j["wall_seconds"] = r.wall_seconds;
    log << j.dump() << '\n';
    log.flush();
    timeline.push_back(r);
  });

  bool finite = all_finite(st.gd.gain) && all_finite(st.gd.offset);
  for (const auto& x : st.x) finite = finite && all_finite(x);
  if (!finite) throw DivergenceError("output", "restoration produced non-finite values");

  for (std::size_t g = 0; g < st.x.size(); ++g) {
    io::write_nucf(out(x_name(g, ".nucf")), st.x[g]);
    const auto [lo, hi] = value_range(st.x[g]);
    io::write_pgm(out(x_name(g, ".pgm")), st.x[g], lo, hi);
    for (std::size_t o = 0; o < st.h[g].size(); ++o)
      io::write_homography(out(h_name(g, o)), st.h[g][o]);
  }
  io::write_nucf(out("gain.nucf"), st.gd.gain);
  io::write_nucf(out("offset.nucf"), st.gd.offset);
  io::write_pgm(out("support.pgm"), st.gd.support);

  std::string history;
  for (std::size_t e = 0; e < st.objective_history.size(); ++e)
    history += std::to_string(st.cycle_history[e]) + ' ' + st.stage_history[e] + ' ' +
               io::format_double(st.objective_history[e]) + '\n';
  io::write_text(out("objective.txt"), history);

  std::string failed;
  for (std::size_t g = 0; g < st.registration_failed.size(); ++g)
    for (std::size_t o = 0; o < st.registration_failed[g].size(); ++o)
      if (st.registration_failed[g][o]) failed += two(g) + ' ' + two(o) + '\n';
  io::write_text(out("registration_failures.txt"), failed);

  io::Manifest m;
  m.set("command", "restore");
  m.set("format_version", kFormatVersion);
  m.set("input", opt.in.generic_string());
  m.set("init", init ? "calib" : "stats");
  m.set("init_requested", opt.init);
  put_solver(m, opt.solver);
  m.set("cycles_run", st.cycle);
  m.set("variance_floor_used", st.variance_floor);
  m.set("final_objective", st.objective_history.back());
  if (opt.record_timings) {
    double prev = 0.0;
    for (std::size_t e = 0; e < timeline.size(); ++e) {
      m.set("time.c" + std::to_string(timeline[e].cycle) + "." + timeline[e].stage,
            timeline[e].wall_seconds - prev);
      prev = timeline[e].wall_seconds;
    }
    m.set("time.total", prev);
  }
  out.put_checksums(m);
  m.write(root / "manifest.txt");
}

}  // namespace

void cmd_restore(const RestoreOptions& opt, std::ostream& log) {
  const fs::path out = opt.out ? *opt.out : opt.in / "results";
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string());
  restore_into(opt, out, log);
}

// ---------------------------------------------------------------------------
// evaluate

EvalReport cmd_evaluate(const EvaluateOptions& opt) {
  const std::vector<ImageGrid> truth = read_truth_pivots(opt.truth);
  std::vector<ImageGrid> est;
  for (std::size_t g = 0; g < truth.size(); ++g) {
    const fs::path p = opt.results / x_name(g, ".nucf");
    if (!fs::exists(p)) throw EvaluationError("results lack " + p.string());
    est.push_back(io::read_nucf(p));
    if (!est.back().same_shape(truth[g]))
      throw EvaluationError("dimension mismatch between truth and " + p.string());
  }
  const ImageGrid tg = io::read_nucf(opt.truth / "gain.nucf");
  const ImageGrid td = io::read_nucf(opt.truth / "offset.nucf");
  const ImageGrid eg = io::read_nucf(opt.results / "gain.nucf");
  const ImageGrid ed = io::read_nucf(opt.results / "offset.nucf");
  const VisibilityMask support = read_mask_pgm(opt.results / "support.pgm");
  if (!tg.same_shape(eg) || support.height() != eg.height() || support.width() != eg.width())
    throw EvaluationError("dimension mismatch between true and estimated gain maps");
  const EvalReport rep = evaluate(truth, est, tg, td, eg, ed, support, opt.margin);

  OutputDir out(opt.out ? *opt.out : opt.results);
  io::Manifest txt;
  txt.set("groups", static_cast<int>(truth.size()));
  txt.set("margin", opt.margin);
  for (std::size_t g = 0; g < truth.size(); ++g) {
    txt.set("rmse_g" + two(g), rep.group_rmse[g]);
    txt.set("raw_rmse_g" + two(g), rep.group_raw_rmse[g]);
    txt.set("pearson_g" + two(g), rep.group_pearson[g]);
  }
  txt.set("mean_rmse_gv", rep.mean_rmse);
  txt.set("mean_rmse_celsius", gv_to_celsius(rep.mean_rmse));
  txt.set("mean_raw_rmse_gv", rep.mean_raw_rmse);
  txt.set("mean_pearson", rep.mean_pearson);
  txt.set("gain_rmse_percent", rep.gain_rmse_pct);
  txt.set("offset_rmse_gv", rep.offset_rmse);
  txt.set("evaluated_pixels", static_cast<std::uint64_t>(rep.evaluated_pixels));
  txt.write(out("report.txt"));

  nlohmann::ordered_json j;
  j["groups"] = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < truth.size(); ++g)
    j["groups"].push_back({{"group", g},
                           {"rmse_gv", rep.group_rmse[g]},
                           {"raw_rmse_gv", rep.group_raw_rmse[g]},
                           {"pearson", rep.group_pearson[g]}});
  j["mean_rmse_gv"] = rep.mean_rmse;
  j["mean_rmse_celsius"] = gv_to_celsius(rep.mean_rmse);
  j["mean_raw_rmse_gv"] = rep.mean_raw_rmse;
  j["mean_pearson"] = rep.mean_pearson;
  j["gain_rmse_percent"] = rep.gain_rmse_pct;
  j["offset_rmse_gv"] = rep.offset_rmse;
  j["evaluated_pixels"] = rep.evaluated_pixels;
  io::write_text(out("report.json"), j.dump(2) + "\n");

  for (std::size_t g = 0; g < truth.size(); ++g) {
    const ImageGrid diff = difference_map(interior(truth[g], opt.margin), est[g]);
    const double hi = value_range(diff).second;
    io::write_pgm(out("diff_g" + two(g) + ".pgm"), diff, 0.0, hi > 0.0 ? hi : 1.0);
  }

  io::Manifest m;
  m.set("command", "evaluate");
  m.set("format_version", kFormatVersion);
  m.set("truth", opt.truth.generic_string());
  m.set("results", opt.results.generic_string());
  m.set("margin", opt.margin);
  out.put_checksums(m);
  m.write(out.root() / "evaluate_manifest.txt");
  return rep;
}

// ---------------------------------------------------------------------------
// sweep

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::string out = "k repeats mean_pc mean_rmse_gv min_pc max_rmse_gv\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d %d %.10f %.6f %.10f %.6f\n", r.k, r.repeats,
                  r.mean_pearson, r.mean_rmse, r.min_pearson, r.max_rmse);
    out += buf;
  }
  return out;
}

std::vector<SweepRow> cmd_sweep_k(const SweepOptions& opt, std::ostream& table, std::ostream& log,
                                  const SweepObserver& observer) {
  if (opt.k_list.empty()) throw ConfigError("--k-list is empty");
  if (opt.repeats < 1) throw ConfigError("--repeats must be >= 1");
  for (int k : opt.k_list)
    if (k < 2) throw ConfigError("--k-list entries must be >= 2");
  SolverConfig cfg = opt.solver;
  cfg.threads = resolve_threads(cfg.threads);
  std::vector<SweepRow> rows;
  for (int k : opt.k_list) {
    SweepRow row;
    row.k = k;
    row.repeats = opt.repeats;
    row.min_pearson = 1.0;
    for (int r = 0; r < opt.repeats; ++r) {
      SimulateOptions sim = opt.sim;
      sim.k = k;
      sim.seed = opt.seed + static_cast<std::uint64_t>(r);
      const PipelineResult res = run_pipeline(sim, cfg);
      if (observer) observer(k, r, res);
      row.mean_pearson += res.report.mean_pearson / opt.repeats;
      row.mean_rmse += res.report.mean_rmse / opt.repeats;
      row.min_pearson = std::min(row.min_pearson, res.report.mean_pearson);
      row.max_rmse = std::max(row.max_rmse, res.report.mean_rmse);
      nlohmann::ordered_json j;
      j["event"] = "sweep_run";
      j["k"] = k;
      j["repeat"] = r;
      j["seed"] = sim.seed;
      j["mean_pearson"] = res.report.mean_pearson;
      j["mean_rmse_gv"] = res.report.mean_rmse;
      j["cycles"] = res.state.cycle;
      log << j.dump() << '\n';
      log.flush();
    }
    rows.push_back(row);
  }
  const std::string text = format_sweep_table(rows);
  table << text;
  if (opt.out) io::write_text(*opt.out, text);
  return rows;
}

// ---------------------------------------------------------------------------
// replay

void replay(const fs::path& manifest, const fs::path& out, std::ostream& log) {
  const io::Manifest m = io::Manifest::read(manifest);
  const std::string& command = m.get("command");
  if (command == "simulate") {
    prepare_output(out, false, {});
    cmd_simulate(get_simulate(m), out);
  } else if (command == "restore") {
    RestoreOptions opt;
    opt.in = m.get("input");
    opt.out = out;
    opt.init = m.get("init_requested");
    opt.solver = get_solver(m);
    opt.record_timings = m.has("time.total");
    cmd_restore(opt, log);
  } else if (command == "evaluate") {
    EvaluateOptions opt;
    opt.truth = m.get("truth");
    opt.results = m.get("results");
    opt.margin = static_cast<int>(parse_int(m, "margin"));
    opt.out = out;
    fs::create_directories(out);
    cmd_evaluate(opt);
  } else {
    throw ConfigError("cannot replay command '" + command + "'");
  }
}

void prepare_simulate_output(const fs::path& out, bool force) {
  prepare_output(out, force, {"obs", "calib", "truth", "masks", "manifest.txt"});
}

}  // namespace nuc::cli
