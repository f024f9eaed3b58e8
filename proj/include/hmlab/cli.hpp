#pragma once
// Run configuration, pipeline stages and the commands behind the hmlab executable.
#include <cstdint>
#include <filesystem>
#include <iostream>

#include "hmlab/diagnostics.hpp"

namespace hmlab {

enum ExitCode { exit_ok = 0, exit_invalid = 2, exit_nonconverged = 3, exit_numerical = 4 };

struct RunConfig {
  std::vector<IdealPoint> vertices;  // polygon by vertices, or
  std::vector<cplx> params;          // by fan shear-bend parameters (n = size + 3)
  bool q_auto = true;
  std::vector<cplx> q;  // coefficients, lowest degree first
  double q_scale = 0.3;
  double eps = 0.5;      // metric smoothing radius
  double radius = 3.5;   // truncation half-width
  int nodes = 64;        // nodes per axis
  int profile = 5;       // theta profile degree: 5 quintic, 7 septic
  double tube_beta = 0.3;
  double bump = 0.5;     // in-plane bump of the n = 2 initial map
  double c_cfl = 0.2, z_floor = 1e-8;
  double planar_tol = 1e-4, flow_tol = 1e-4;
  long max_steps = 2000000;  // per stage
  long record_every = 500, checkpoint_every = 20000;
  bool diag_psi = true, diag_gauge = true, diag_hopf = true, diag_sides = true;
  double flag_eps = 0.05;
  std::string out;
  long seed = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InvalidInput("config: bad number for " + key + ": '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw InvalidInput("config: bad number for " + key + ": '" + s + "'");
  return v;
}

inline long parse_long(const std::string& s, const std::string& key) {
  double v = parse_double(s, key);
  if (v != std::floor(v)) throw InvalidInput("config: expected an integer for " + key);
  return long(v);
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw InvalidInput("config: expected true/false for " + key);
}

// Accepts a, bi, a+bi, a-bi, i, -i and inf.
inline IdealPoint parse_ideal(std::string s, const std::string& key) {
  s = trim(s);
  if (s == "inf") return IdealPoint::infinity();
  if (s.empty()) throw InvalidInput("config: empty value in " + key);
  if (s.back() != 'i') return IdealPoint(parse_double(s, key));
  std::string body = s.substr(0, s.size() - 1);
  std::size_t split = std::string::npos;
  for (std::size_t k = body.size(); k-- > 1;)
    if ((body[k] == '+' || body[k] == '-') && body[k - 1] != 'e' && body[k - 1] != 'E') {
      split = k;
      break;
    }
  std::string re = split == std::string::npos ? "0" : body.substr(0, split);
  std::string im = split == std::string::npos ? body : body.substr(split);
  if (im.empty() || im == "+") im = "1";
  if (im == "-") im = "-1";
  return IdealPoint(cplx(parse_double(re, key), parse_double(im, key)));
}

inline cplx parse_complex(const std::string& s, const std::string& key) {
  IdealPoint p = parse_ideal(s, key);
  if (p.inf) throw InvalidInput("config: inf not allowed in " + key);
  return p.value;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

inline std::string fmt(const IdealPoint& p) {
  if (p.inf) return "inf";
  if (p.value.imag() == 0) return fmt(p.value.real());
  return fmt(p.value.real()) + (p.value.imag() < 0 ? "-" : "+") + fmt(std::abs(p.value.imag())) + "i";
}

// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char b[17];
  std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(h));
  return b;
}

}  // namespace detail

// Key-value config: one "key = value" per line, '#' starts a comment.
inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  std::map<std::string, std::string> kv;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput("config line " + std::to_string(lineno) + ": expected key = value");
    std::string k = detail::trim(line.substr(0, eq)), v = detail::trim(line.substr(eq + 1));
    if (kv.count(k)) throw InvalidInput("config: duplicate key " + k);
    kv[k] = v;
  }
  using namespace detail;
  for (auto& [k, v] : kv) {
    if (k == "polygon.vertices") {
      for (auto& s : split_list(v)) c.vertices.push_back(parse_ideal(s, k));
    } else if (k == "polygon.params") {
      for (auto& s : split_list(v)) c.params.push_back(parse_complex(s, k));
    } else if (k == "q") {
      c.q_auto = v == "auto";
      if (!c.q_auto)
        for (auto& s : split_list(v)) c.q.push_back(parse_complex(s, k));
    } else if (k == "q.scale") c.q_scale = parse_double(v, k);
    else if (k == "metric.eps") c.eps = parse_double(v, k);
    else if (k == "grid.radius") c.radius = parse_double(v, k);
    else if (k == "grid.nodes") c.nodes = int(parse_long(v, k));
    else if (k == "init.profile") {
      if (v == "quintic") c.profile = 5;
      else if (v == "septic") c.profile = 7;
      else throw InvalidInput("config: init.profile must be quintic or septic");
    } else if (k == "init.tube_beta") c.tube_beta = parse_double(v, k);
    else if (k == "init.bump") c.bump = parse_double(v, k);
    else if (k == "flow.c_cfl") c.c_cfl = parse_double(v, k);
    else if (k == "flow.z_floor") c.z_floor = parse_double(v, k);
    else if (k == "planar.tol_tau") c.planar_tol = parse_double(v, k);
    else if (k == "flow.tol_tau") c.flow_tol = parse_double(v, k);
    else if (k == "flow.max_steps") c.max_steps = parse_long(v, k);
    else if (k == "flow.record_every") c.record_every = parse_long(v, k);
    else if (k == "flow.checkpoint_every") c.checkpoint_every = parse_long(v, k);
    else if (k == "diag.psi") c.diag_psi = parse_bool(v, k);
    else if (k == "diag.gauge") c.diag_gauge = parse_bool(v, k);
    else if (k == "diag.hopf") c.diag_hopf = parse_bool(v, k);
    else if (k == "diag.sides") c.diag_sides = parse_bool(v, k);
    else if (k == "diag.flag_eps") c.flag_eps = parse_double(v, k);
    else if (k == "output.dir") c.out = v;
    else if (k == "seed") c.seed = parse_long(v, k);
    else throw InvalidInput("config: unknown key " + k);
  }
  if (c.vertices.empty() == c.params.empty())
    throw InvalidInput("config: give exactly one of polygon.vertices and polygon.params");
  if (!c.q_auto && c.q.empty()) throw InvalidInput("config: q needs coefficients or auto");
  for (double t : {c.q_scale, c.eps, c.radius, c.c_cfl, c.z_floor, c.planar_tol, c.flow_tol, c.tube_beta, c.flag_eps})
    if (!(t > 0)) throw InvalidInput("config: scales and tolerances must be positive");
  if (c.nodes < 9) throw InvalidInput("config: grid.nodes must be at least 9");
  if (c.max_steps < 0 || c.record_every < 1 || c.checkpoint_every < 0)
    throw InvalidInput("config: step counts must be nonnegative (record_every >= 1)");
  if (c.bump < 0) throw InvalidInput("config: init.bump must be nonnegative");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

// Canonical text of every setting that influences the computed states (budgets, cadences of
// checkpoints, diagnostics toggles and the output location are excluded).
inline std::string canonical_config(const RunConfig& c) {
  using detail::fmt;
  std::ostringstream o;
  auto list = [&](auto& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + fmt(IdealPoint(v[k]));
    return s;
  };
  if (!c.vertices.empty()) o << "polygon.vertices = " << list(c.vertices) << "\n";
  if (!c.params.empty()) o << "polygon.params = " << list(c.params) << "\n";
  o << "q = " << (c.q_auto ? std::string("auto") : list(c.q)) << "\n";
  o << "q.scale = " << fmt(c.q_scale) << "\nmetric.eps = " << fmt(c.eps) << "\ngrid.radius = " << fmt(c.radius)
    << "\ngrid.nodes = " << c.nodes << "\ninit.profile = " << (c.profile == 7 ? "septic" : "quintic")
    << "\ninit.tube_beta = " << fmt(c.tube_beta) << "\ninit.bump = " << fmt(c.bump) << "\nflow.c_cfl = "
    << fmt(c.c_cfl) << "\nflow.z_floor = " << fmt(c.z_floor) << "\nplanar.tol_tau = " << fmt(c.planar_tol)
    << "\nflow.tol_tau = " << fmt(c.flow_tol) << "\nflow.record_every = " << c.record_every << "\nseed = " << c.seed
    << "\n";
  return o.str();
}

inline std::string config_hash(const RunConfig& c) { return detail::fnv1a(canonical_config(c)); }

// Auto q: scale (z^{n-2} - rho^{n-2}) with zeros on |z| = rho, rho = min(1, 0.3 R), so the
// decomposition radius max(1, 2 rho) stays within 60% of R.
inline PolyQD auto_q(int n, double scale, double radius) {
  if (n < 2) throw InvalidInput("auto_q: n must be at least 2");
  if (n == 2) return PolyQD({cplx(scale)});
  double rho = std::min(1.0, 0.3 * radius);
  if (std::max(1.0, 2 * rho) > 0.6 * radius) throw InvalidInput("auto_q: truncation radius too small");
  std::vector<cplx> c(n - 1, 0.0);
  c[0] = -scale * std::pow(rho, n - 2);
  c[n - 2] = scale;
  return PolyQD(c);
}

// Everything derived from a config before any flow runs.
struct Pipeline {
  RunConfig cfg;
  std::string hash;
  int n = 0;
  TwistedIdealPolygon P;  // target polygon, in the frame of the straightened one
  Straightened st;        // n >= 3
  PolyQD q;
  Grid grid;
  PlanarInitial init;
  std::optional<Pleating> pleating;  // n >= 3
  std::vector<GeodesicPlane> faces;  // n >= 3

  FlowConfig flow_config(double tol) const {
    FlowConfig f;
    f.c_cfl = cfg.c_cfl;
    f.z_floor = cfg.z_floor;
    f.tol_tau = tol;
    f.record_every = cfg.record_every;
    f.checkpoint_every = cfg.checkpoint_every;
    f.config_hash = hash;
    return f;
  }
  // Pleated image of a planar map (identity for n = 2).
  PleatedField pleated(const DiscreteMap& h) const {
    if (pleating) return pleated_field(h, *pleating, cfg.flag_eps);
    PleatedField pf;
    pf.xi = h.u;
    pf.region.assign(h.u.size(), 0);
    pf.flagged.assign(h.u.size(), 0);
    return pf;
  }
  DiscreteMap initial_map(const DiscreteMap& h) const {
    if (!pleating) return h;
    return build_initial_map(h, *pleating).map;
  }
  double gauge(const DiscreteMap& m) const {
    if (!faces.empty()) return gauge_sup(m, grid, faces);
    double s = 0;  // n = 2: the hull is the geodesic itself
    for (int j = 1; j < grid.ny - 1; ++j)
      for (int i = 1; i < grid.nx - 1; ++i) s = std::max(s, dist_to_line(m.u[grid.idx(i, j)], P.side(0)));
    return s;
  }
};

inline Pipeline make_pipeline(const RunConfig& cfg) {
  Pipeline p;
  p.cfg = cfg;
  p.hash = config_hash(cfg);
  TwistedIdealPolygon P;
  if (!cfg.vertices.empty()) {
    P.vertices = cfg.vertices;
  } else {
    ShearBendParams sp;
    sp.n = int(cfg.params.size()) + 3;
    sp.triangulation = fan_triangulation(sp.n);
    sp.values = cfg.params;
    P = from_params(sp);
  }
  p.n = P.size();
  if (p.n < 2) throw InvalidInput("polygon needs at least 2 vertices");
  if (p.n == 2) {
    if (chordal(P[0], P[1]) < 1e-12) throw InvalidInput("polygon: the two vertices coincide");
  } else {
    auto rep = validate(P);
    if (!rep.ok) throw InvalidInput("polygon: " + rep.violations.front());
  }
  p.q = cfg.q_auto ? auto_q(p.n, cfg.q_scale, cfg.radius) : PolyQD(cfg.q);
  if (p.q.degree() != p.n - 2)
    throw InvalidInput("q has degree " + std::to_string(p.q.degree()) + ", expected " + std::to_string(p.n - 2));
  DomainMetric met = smooth_metric(p.q, cfg.eps);
  p.grid = Grid::square(cfg.radius, cfg.nodes, [met](cplx z) { return met(z); });
  if (p.n == 2) {
    p.P = P;
    p.init = build_collapse_initial(p.q, p.grid, P[0], P[1], cfg.bump);
  } else {
    p.st = straighten(P);
    p.P = bend(p.st.P0, p.st.bending);
    p.init = build_planar_initial(p.st.P0, p.q, p.grid);
    p.pleating = make_pleating(p.st.P0, p.st.bending, cfg.profile, cfg.tube_beta);
    p.faces = hull_faces(p.P.vertices);
  }
  return p;
}

// ---------- artifacts ----------

namespace fs = std::filesystem;

struct RunFiles {
  fs::path dir;
  fs::path config() const { return dir / "config.txt"; }
  fs::path polygon() const { return dir / "polygon.json"; }
  fs::path planar() const { return dir / "planar.ckpt"; }
  fs::path planar_series() const { return dir / "planar_series.csv"; }
  fs::path flow_t0() const { return dir / "flow_t0.ckpt"; }
  fs::path flow() const { return dir / "flow.ckpt"; }
  fs::path series() const { return dir / "series.csv"; }
  fs::path state() const { return dir / "state.json"; }
  fs::path report() const { return dir / "report.json"; }
  fs::path fields() const { return dir / "fields.csv"; }
  fs::path mesh_u() const { return dir / "u.ply"; }
  fs::path mesh_xi() const { return dir / "xi.ply"; }
  std::vector<fs::path> all() const {
    return {config(), polygon(), planar(), planar_series(), flow_t0(), flow(), series(), state(), report(), fields(),
            mesh_u(), mesh_xi()};
  }
};

inline nlohmann::json ideal_json(const IdealPoint& v) {
  if (v.inf) return "inf";
  return nlohmann::json::array({v.value.real(), v.value.imag()});
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw InvalidInput("cannot write " + path.string());
  f << text;
}

inline std::vector<TimeSample> read_series_csv(const fs::path& path) {
  std::vector<TimeSample> out;
  std::ifstream f(path);
  if (!f) return out;
  std::string line;
  std::getline(f, line);
  while (std::getline(f, line)) {
    TimeSample s{};
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &s.t, &s.energy, &s.sup_tau, &s.sup_psi, &s.sup_gauge) == 5)
      out.push_back(s);
  }
  return out;
}

inline FlowState state_from_checkpoint(const Checkpoint& c, const Grid& g, const std::string& hash,
                                       const std::string& what) {
  if (c.hash != hash) throw InvalidInput(what + ": config hash " + c.hash + " does not match " + hash);
  if (c.nx != g.nx || c.ny != g.ny) throw InvalidInput(what + ": grid mismatch");
  FlowState s;
  s.map.u = c.u;
  s.map.t = c.t;
  s.step = c.step;
  return s;
}

inline nlohmann::json polygon_json(const Pipeline& p) {
  nlohmann::json j;
  j["config_hash"] = p.hash;
  j["n"] = p.n;
  for (auto& v : p.P.vertices) j["vertices"].push_back(ideal_json(v));
  if (p.n >= 3) {
    for (std::size_t d = 0; d < p.st.params.values.size(); ++d) {
      auto c = p.st.params.values[d];
      j["params"].push_back({{"diagonal", {p.st.params.triangulation[d].first, p.st.params.triangulation[d].second}},
                             {"value", {c.real(), c.imag()}}});
    }
    for (auto& v : p.st.P0.vertices) j["planar_vertices"].push_back(ideal_json(v));
    for (std::size_t d = 0; d < p.st.bending.angles.size(); ++d)
      j["bending"].push_back({{"diagonal", {p.st.bending.diagonals[d].first, p.st.bending.diagonals[d].second}},
                              {"angle", p.st.bending.angles[d]}});
  }
  return j;
}

// ---------- commands ----------

struct CommandOptions {
  std::string out;
  bool resume = false, force = false;
  bool history = false;  // keep every 3D checkpoint as flow.ckpt.<step>
  int threads = 1;
  std::string checkpoint;  // diag/export: explicit checkpoint instead of the run's latest
};

inline int cmd_polygon(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log = std::cerr) {
  try {
    Pipeline p = make_pipeline(cfg);
    RunFiles files{opt.out};
    fs::create_directories(files.dir);
    write_text(files.polygon(), polygon_json(p).dump(2) + "\n");
    log << "polygon: n = " << p.n << ", written " << files.polygon().string() << "\n";
    return exit_ok;
  } catch (const InvalidInput& e) {
    log << "invalid input: " << e.what() << "\n";
    return exit_invalid;
  }
}

inline int cmd_flow(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log = std::cerr) {
  RunFiles files{opt.out};
  try {
    if (opt.out.empty()) throw InvalidInput("no output directory");
    Pipeline p = make_pipeline(cfg);
    bool existing = fs::exists(files.state()) || fs::exists(files.planar()) || fs::exists(files.flow());
    nlohmann::json prev;
    if (opt.resume) {
      if (!fs::exists(files.state())) throw InvalidInput("--resume: no previous run in " + opt.out);
      std::ifstream f(files.state());
      prev = nlohmann::json::parse(f);
      if (prev.at("config_hash") != p.hash) throw InvalidInput("--resume: config hash differs from the previous run");
    } else if (existing) {
      if (!opt.force) throw InvalidInput("output directory " + opt.out + " holds a run; use --force or --resume");
      for (auto& f : files.all()) fs::remove(f);
      for (auto& e : fs::directory_iterator(files.dir))
        if (e.path().filename().string().rfind("flow.ckpt.", 0) == 0) fs::remove(e.path());
    }
    fs::create_directories(files.dir);
    write_text(files.config(), canonical_config(cfg) + "# hash " + p.hash + "\n");
    write_text(files.polygon(), polygon_json(p).dump(2) + "\n");

    nlohmann::json state;
    state["config_hash"] = p.hash;
    auto save_state = [&] { write_text(files.state(), state.dump(2) + "\n"); };

    // the initial map approaches finite vertices exponentially; a deep corner can already breach the floor
    auto low = std::min_element(p.init.map.u.begin(), p.init.map.u.end(),
                                [](const PointH3& a, const PointH3& b) { return a.z < b.z; });
    if (!(low->z > cfg.z_floor)) {
      cplx at = p.grid.pos(std::size_t(low - p.init.map.u.begin()));
      char msg[160];
      std::snprintf(msg, sizeof msg, "initial map reaches z = %.3g at (%.3g, %.3g), below flow.z_floor = %.3g", low->z,
                    at.real(), at.imag(), cfg.z_floor);
      throw NumericalFailure(std::string(msg) + "; lower flow.z_floor or grid.radius");
    }

    // planar stage
    FlowConfig pc = p.flow_config(cfg.planar_tol);
    pc.threads = opt.threads;
    pc.checkpoint_path = files.planar().string();
    bool planar_done = opt.resume && prev.value("planar_converged", false);
    FlowState h;
    if (opt.resume && fs::exists(files.planar()))
      h = state_from_checkpoint(read_checkpoint(files.planar().string()), p.grid, p.hash, "planar checkpoint");
    if (!planar_done) {
      bool resumed = opt.resume && fs::exists(files.planar());
      if (resumed) h.series = read_series_csv(files.planar_series());
      pc.max_steps = std::max(0L, cfg.max_steps - (resumed ? h.step : 0));
      if (p.n == 2) {
        if (!resumed) h.map = p.init.map;
        run(h, p.grid, pc);
      } else {
        h = solve_planar_harmonic(p.init, pc, {}, resumed ? &h : nullptr).state;
      }
      write_checkpoint(files.planar().string(), p.grid, h, p.hash);
      write_series_csv(files.planar_series().string(), h.series);
      planar_done = h.converged;
      log << "planar stage: " << h.stop_reason << " after " << h.step << " steps\n";
    }
    state["planar_converged"] = planar_done;
    state["planar_step"] = h.step;
    save_state();

    // 3D stage
    PleatedField pf = p.pleated(h.map);
    FlowConfig fc = p.flow_config(cfg.flow_tol);
    fc.threads = opt.threads;
    fc.checkpoint_path = files.flow().string();
    fc.keep_history = opt.history;
    Observers obs;
    obs.psi = [&](const DiscreteMap& m) { return psi_sup(m, p.grid, pf); };
    obs.gauge = [&](const DiscreteMap& m) { return p.gauge(m); };
    FlowState u;
    bool resumed = opt.resume && prev.value("planar_converged", false) && fs::exists(files.flow());
    if (resumed) {
      u = state_from_checkpoint(read_checkpoint(files.flow().string()), p.grid, p.hash, "flow checkpoint");
      for (auto& r : read_series_csv(files.series()))
        if (r.t <= u.map.t) u.series.push_back(r);
    } else {
      u.map = p.initial_map(h.map);
      write_checkpoint(files.flow_t0().string(), p.grid, u, p.hash);
    }
    fc.max_steps = std::max(0L, cfg.max_steps - u.step);
    run(u, p.grid, fc, obs);
    write_checkpoint(files.flow().string(), p.grid, u, p.hash);
    write_series_csv(files.series().string(), u.series);
    log << "flow stage: " << u.stop_reason << " after " << u.step << " steps, t = " << u.map.t << "\n";
    bool ok = planar_done && u.converged;
    state["flow_converged"] = u.converged;
    state["flow_step"] = u.step;
    state["stop_reason"] = u.stop_reason;
    state["exit_code"] = ok ? exit_ok : exit_nonconverged;
    save_state();
    return ok ? exit_ok : exit_nonconverged;
  } catch (const InvalidInput& e) {
    log << "invalid input: " << e.what() << "\n";
    return exit_invalid;
  } catch (const NumericalFailure& e) {
    log << "numerical failure: " << e.what() << "\n";
    return exit_numerical;
  }
}

// State, planar map and series of a finished (or interrupted) run, checked against the config.
struct LoadedRun {
  Pipeline p;
  FlowState u, h;
  std::vector<TimeSample> series;
};

inline LoadedRun load_run(const RunConfig& cfg, const CommandOptions& opt) {
  RunFiles files{opt.out};
  LoadedRun r{make_pipeline(cfg), {}, {}, {}};
  fs::path ck = opt.checkpoint.empty() ? files.flow() : fs::path(opt.checkpoint);
  if (!fs::exists(ck)) throw InvalidInput("missing checkpoint " + ck.string());
  if (!fs::exists(files.planar())) throw InvalidInput("missing planar checkpoint " + files.planar().string());
  r.u = state_from_checkpoint(read_checkpoint(ck.string()), r.p.grid, r.p.hash, ck.string());
  r.h = state_from_checkpoint(read_checkpoint(files.planar().string()), r.p.grid, r.p.hash, "planar checkpoint");
  for (auto& s : read_series_csv(files.series()))
    if (s.t <= r.u.map.t) r.series.push_back(s);
  return r;
}

inline void write_exports(const LoadedRun& r, const PleatedField& pf, const RunFiles& files) {
  const Grid& g = r.p.grid;
  auto e = energy_density(r.u.map, g);
  auto tf = tension_field(r.u.map, g);
  auto phi = hopf_values(r.u.map, g);
  std::vector<double> tau(g.size()), psi(g.size()), gauge(g.size(), 0.0), pre(g.size()), pim(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    tau[k] = tf.tau[k].norm() / r.u.map.u[k].z;
    psi[k] = dist(r.u.map.u[k], pf.xi[k]);
    if (!r.p.faces.empty()) gauge[k] = hull_gauge(r.u.map.u[k], r.p.faces);
    pre[k] = phi[k].real();
    pim[k] = phi[k].imag();
  }
  write_field_csv(files.fields().string(), g,
                  {{"energy_density", e}, {"tension", tau}, {"psi", psi}, {"gauge", gauge}, {"hopf_re", pre},
                   {"hopf_im", pim}});
  write_ply(files.mesh_u().string(), g, r.u.map.u);
  write_ply(files.mesh_xi().string(), g, pf.xi);
}

// All checks on a loaded run; `mandatory` receives the names of the enabled ones.
inline std::vector<CheckEntry> run_checks(const LoadedRun& r, const PleatedField& pf,
                                          std::vector<std::string>& mandatory) {
  const Pipeline& p = r.p;
  const Grid& g = p.grid;
  std::vector<CheckEntry> out;
  DiscreteMap u0 = p.initial_map(r.h.map);
  {
    auto tf = tension_field(r.u.map, g);
    auto [v, d] = tension_profile(r.u.map, g, p.q, 0.15);
    double dmax = *std::max_element(d.begin(), d.end());
    auto b = bin_maxima(v, d, 0, dmax, 20);
    CheckEntry c{"tension", false, {{"sup", tf.sup}, {"t", r.u.map.t}, {"step", double(r.u.step)}}, {}, ""};
    try {
      auto f = decay_fit(b.maxima, b.centers);
      c.measured["spatial_slope"] = f.slope;
      c.measured["spatial_correlation"] = f.correlation;
    } catch (const InvalidInput& e) {
      c.note = e.what();
    }
    c.tolerance["tol_tau"] = p.cfg.flow_tol;
    c.pass = tf.sup <= p.cfg.flow_tol;
    out.push_back(c);
    mandatory.push_back("tension");
  }
  if (p.cfg.diag_psi) {
    double M0 = psi_sup(u0, g, pf), now = psi_sup(r.u.map, g, pf), worst = now;
    for (auto& s : r.series) worst = std::max(worst, s.sup_psi);
    double eps = 5e-3 * M0;
    CheckEntry c{"psi",
                 worst <= M0 + eps,
                 {{"M0", M0}, {"sup", now}, {"series_max", worst}, {"flagged", double(pf.flagged_count)}},
                 {{"eps_mp", eps}},
                 "sup Psi over the run may exceed M0 by at most eps_mp"};
    out.push_back(c);
    mandatory.push_back("psi");
  }
  if (p.cfg.diag_gauge) {
    double G0 = p.gauge(u0), now = p.gauge(r.u.map), worst = now;
    for (auto& s : r.series) worst = std::max(worst, s.sup_gauge);
    double d = G0, tol = 5e-3 * d;
    out.push_back({"gauge",
                   worst <= G0 + tol,
                   {{"G0", G0}, {"sup", now}, {"series_max", worst}},
                   {{"tol", tol}, {"d", d}},
                   "d is the radius of the smallest neighbourhood of the hull containing u0"});
    mandatory.push_back("gauge");
  }
  if (p.cfg.diag_hopf) {
    FitRegion reg;
    reg.eps = p.cfg.eps;
    reg.zeros = zeros(p.q);
    CheckEntry c{"hopf", false, {}, {{"fit_residual", 0.05}}, ""};
    try {
      auto hf = hopf_field(r.u.map, g, p.n, reg);
      c.measured["fit_residual"] = hf.fit_residual;
      c.measured["dbar_rms"] = hf.dbar_rms;
      c.measured["dbar_rel"] = hf.dbar_rel;
      for (std::size_t k = 0; k < hf.fit.size(); ++k) {
        c.measured["fit_re_" + std::to_string(k)] = hf.fit[k].real();
        c.measured["fit_im_" + std::to_string(k)] = hf.fit[k].imag();
      }
      double ppd = pp_compare(pp_of_fit(hf), principal_part(p.q));
      c.measured["pp_distance_to_q"] = ppd;
      c.pass = hf.fit_residual < 0.05;
    } catch (const std::exception& e) {
      c.note = e.what();
    }
    out.push_back(c);
    mandatory.push_back("hopf");
  }
  if (p.cfg.diag_sides && p.n >= 3) {
    double r_max = p.cfg.radius;
    std::vector<double> heights;
    for (int k = 0; k < 10; ++k) heights.push_back(0.5 + 0.5 * k);
    auto reps = side_asymptotics(r.u.map, g, p.P, p.init.charts, heights);
    CheckEntry c{"sides", true, {}, {{"curvature", 0.1}}, ""};
    for (auto& s : reps) {
      if (s.leaves.empty()) {
        c.pass = false;
        c.note += "side " + std::to_string(s.side) + " has no leaf inside the grid; ";
        continue;
      }
      auto& far = s.leaves.back();
      std::string k = std::to_string(s.side);
      c.measured["side" + k + "_height"] = far.height;
      c.measured["side" + k + "_curvature"] = far.curvature_max;
      c.measured["side" + k + "_residual"] = far.fit_residual;
      c.measured["side" + k + "_distance"] = far.side_distance;
      if (std::isfinite(s.distance_rate)) c.measured["side" + k + "_distance_rate"] = s.distance_rate;
      c.pass = c.pass && far.curvature_max < 0.1;
    }
    (void)r_max;
    out.push_back(c);
    mandatory.push_back("sides");
  }
  return out;
}

inline int cmd_diag(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log = std::cerr) {
  try {
    LoadedRun r = load_run(cfg, opt);
    RunFiles files{opt.out};
    PleatedField pf = r.p.pleated(r.h.map);
    std::vector<std::string> mandatory;
    auto checks = run_checks(r, pf, mandatory);
    std::map<std::string, std::string> series;
    if (fs::exists(files.series())) series["flow"] = files.series().filename().string();
    if (fs::exists(files.planar_series())) series["planar"] = files.planar_series().filename().string();
    Report rep = assemble_report(r.p.hash, checks, mandatory, series);
    write_text(files.report(), report_text(rep));
    write_exports(r, pf, files);
    log << "diag: status " << rep.status << ", report " << files.report().string() << "\n";
    return exit_ok;
  } catch (const InvalidInput& e) {
    log << "invalid input: " << e.what() << "\n";
    return exit_invalid;
  } catch (const NumericalFailure& e) {
    log << "numerical failure: " << e.what() << "\n";
    return exit_numerical;
  }
}

inline int cmd_export(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log = std::cerr) {
  try {
    LoadedRun r = load_run(cfg, opt);
    RunFiles files{opt.out};
    write_exports(r, r.p.pleated(r.h.map), files);
    log << "export: fields, meshes written to " << files.dir.string() << "\n";
    return exit_ok;
  } catch (const InvalidInput& e) {
    log << "invalid input: " << e.what() << "\n";
    return exit_invalid;
  } catch (const NumericalFailure& e) {
    log << "numerical failure: " << e.what() << "\n";
    return exit_numerical;
  }
}

}  // namespace hmlab
