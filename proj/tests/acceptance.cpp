// Acceptance suite: `acceptance --criterion N` prints one PASS/FAIL line for criterion N (1-10).
// Heavy runs go through the hmlab pipeline and are cached per config hash under
// $HMLAB_ACCEPT_DIR (default ./acceptance_runs), so criteria sharing a run reuse it.
#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <random>

#include "hmlab/cli.hpp"

using namespace hmlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string kv(const std::string& k, double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%s=%.4g", k.c_str(), v);
  return b;
}

std::string join(std::initializer_list<std::string> parts) {
  std::string s;
  for (auto& p : parts) s += (s.empty() ? "" : " ") + p;
  return s;
}

// ---------- cached pipeline runs ----------

fs::path cache_root() {
  const char* env = std::getenv("HMLAB_ACCEPT_DIR");
  return env ? fs::path(env) : fs::path("acceptance_runs");
}

std::string run_config(const std::string& polygon, const std::string& q, double radius, int nodes,
                       const std::string& extra = "") {
  std::ostringstream o;
  o << polygon << "\nq = " << q << "\nmetric.eps = 0.5\ngrid.radius = " << radius << "\ngrid.nodes = " << nodes
    << "\nplanar.tol_tau = 1e-4\nflow.tol_tau = 1e-4\nflow.record_every = 250\nflow.checkpoint_every = 20000\n"
    << extra;
  return o.str();
}

const std::string triangle = "polygon.vertices = 0, 1, inf";
const std::string square_i = "polygon.params = i";  // one bend of pi/2

struct CachedRun {
  LoadedRun run;
  fs::path dir;
  std::vector<TimeSample> planar_series;
  std::vector<fs::path> history;  // 3D checkpoints in step order, t = 0 first
};

CachedRun cached_run(const std::string& name, const std::string& text) {
  RunConfig cfg = parse_config(text);
  std::string hash = config_hash(cfg);
  CommandOptions opt;
  opt.out = (cache_root() / (name + "_" + hash)).string();
  opt.history = true;
  RunFiles files{opt.out};
  bool reuse = false;
  if (fs::exists(files.state())) {
    std::ifstream f(files.state());
    auto st = nlohmann::json::parse(f);
    reuse = st.value("config_hash", "") == hash && st.value("exit_code", -1) == exit_ok;
  }
  if (!reuse) {
    opt.force = true;
    fs::create_directories(opt.out);
    std::fprintf(stderr, "running %s (%s)\n", name.c_str(), hash.c_str());
    int rc = cmd_flow(cfg, opt);
    if (rc != exit_ok && rc != exit_nonconverged) throw std::runtime_error(name + ": flow exited with " + std::to_string(rc));
  } else {
    std::fprintf(stderr, "reusing %s (%s)\n", name.c_str(), hash.c_str());
  }
  CachedRun c{load_run(cfg, opt), files.dir, read_series_csv(files.planar_series()), {}};
  std::vector<std::pair<long, fs::path>> hist;
  for (auto& e : fs::directory_iterator(files.dir)) {
    std::string f = e.path().filename().string();
    if (f.rfind("flow.ckpt.", 0) == 0) hist.push_back({std::stol(f.substr(10)), e.path()});
  }
  std::sort(hist.begin(), hist.end());
  c.history.push_back(files.flow_t0());
  for (auto& h : hist) c.history.push_back(h.second);
  c.history.push_back(files.flow());
  return c;
}

double interior_sup_dist(const Grid& g, const DiscreteMap& a, const DiscreteMap& b) {
  double d = 0;
  for (int j = 1; j < g.ny - 1; ++j)
    for (int i = 1; i < g.nx - 1; ++i) d = std::max(d, dist(a.u[g.idx(i, j)], b.u[g.idx(i, j)]));
  return d;
}

bool energy_monotone(const std::vector<TimeSample>& s) {
  for (std::size_t k = 1; k < s.size(); ++k)
    if (s[k].energy > s[k - 1].energy * (1 + 1e-12)) return false;
  return true;
}

// Spatial decay of |tau| against natural distance from the zeros: slope of the worst value per bin.
LineFit spatial_tension_decay(const DiscreteMap& m, const Grid& g, const PolyQD& q) {
  auto [v, d] = tension_profile(m, g, q, 0.15);
  double dmax = *std::max_element(d.begin(), d.end());
  auto b = bin_maxima(v, d, 0, dmax, 20);
  return decay_fit(b.maxima, b.centers);
}

double p_radius(const Grid& g) { return std::min({-g.x0, g.x1, -g.y0, g.y1}); }

FitRegion fit_region(const Pipeline& p) {
  FitRegion r;
  r.eps = p.cfg.eps;
  r.zeros = zeros(p.q);
  return r;
}

// ---------- random helpers ----------

std::mt19937_64 rng(20261016);
double U(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
cplx CU(double r) { return {U(-r, r), U(-r, r)}; }
PointH3 rand_point() { return {U(-2, 2), U(-2, 2), std::exp(U(-1.5, 1.5))}; }
Mobius rand_mobius() {
  for (;;) {
    Mobius g{CU(2), CU(2), CU(2), CU(2)};
    if (std::abs(g.a * g.d - g.b * g.c) > 0.3) return g.normalized();
  }
}

// ---------- criteria ----------

Outcome criterion1() {
  // u = (x, y, f(t)), f = sqrt(4t + 1), with Dirichlet data following the exact solution
  Grid g = Grid::square(1, 64);
  FlowState s;
  s.map = sample_map(g, [](cplx w) { return PointH3{w.real(), w.imag(), 1}; });
  FlowConfig cfg;
  double dt = g.cfl_bound(cfg.c_cfl), worst = 0;
  while (s.map.t < 1) {
    step(s, g, std::min(dt, 1 - s.map.t), cfg);
    double f = std::sqrt(4 * s.map.t + 1);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        double& z = s.map.u[g.idx(i, j)].z;
        if (g.boundary(i, j)) z = f;
        else worst = std::max(worst, std::abs(z / f - 1));
      }
  }
  // static tension of the plane at height c against (0, 0, 2/c)
  double c = 1.7;
  auto err = [&](double h) {
    Grid gh(-h, h, -h, h, 3, 3);
    auto m = sample_map(gh, [&](cplx w) { return PointH3{w.real(), w.imag(), c}; });
    Vec3 t = tension_field(m, gh).tau[gh.idx(1, 1)];
    return (t - Vec3{0, 0, 2 / c}).norm();
  };
  double e1 = err(0.2), e2 = err(0.1), ratio = e1 / e2;
  bool exact = e1 < 1e-13 && e2 < 1e-13;  // no truncation error to resolve
  // the plane is reproduced exactly, so the O(h^2) rate is also measured on a curved map
  auto map = [](double x, double y) {
    return PointH3{std::sin(x) + 0.3 * y, 0.5 * x * std::cos(y), 1.5 * std::exp(0.3 * x + 0.2 * y)};
  };
  auto exact_tau = [](double x, double y) {
    double u1x = std::cos(x), u1y = 0.3, u1xx = -std::sin(x);
    double u2x = 0.5 * std::cos(y), u2y = -0.5 * x * std::sin(y), u2yy = -0.5 * x * std::cos(y);
    double z = 1.5 * std::exp(0.3 * x + 0.2 * y), zx = 0.3 * z, zy = 0.2 * z;
    return Vec3{u1xx - 2 / z * (u1x * zx + u1y * zy), u2yy - 2 / z * (u2x * zx + u2y * zy),
                0.13 * z + (u1x * u1x + u1y * u1y + u2x * u2x + u2y * u2y - zx * zx - zy * zy) / z};
  };
  auto curved_err = [&](double h) {
    double x = 0.3, y = 0.2;
    Grid gh(x - h, x + h, y - h, y + h, 3, 3);
    auto m = sample_map(gh, [&](cplx w) { return map(w.real(), w.imag()); });
    return (tension_field(m, gh).tau[gh.idx(1, 1)] - exact_tau(x, y)).norm();
  };
  double curved_ratio = curved_err(0.04) / curved_err(0.02);
  bool pass = worst < 0.01 && (ratio >= 3.5 || exact) && curved_ratio >= 3.5;
  return {pass, join({kv("height_rel_err", worst), kv("tension_err_h", e1), kv("tension_err_h/2", e2),
                      exact ? "plane tension exact to roundoff" : kv("ratio", ratio),
                      kv("curved_map_ratio", curved_ratio)})};
}

Outcome criterion2() {
  double dmax = 0, crmax = 0, elmax = 0;
  for (int k = 0; k < 1000; ++k) {
    Mobius g = rand_mobius();
    PointH3 p = rand_point(), q = rand_point();
    dmax = std::max(dmax, std::abs(dist(g(p), g(q)) - dist(p, q)));
    IdealPoint a(CU(3)), b(CU(3)), c(CU(3)), d(CU(3));
    cplx before = cross_ratio(a, b, c, d), after = cross_ratio(g(a), g(b), g(c), g(d));
    crmax = std::max(crmax, std::abs(after - before) / std::max(1.0, std::abs(before)));
    GeodesicLine axis{IdealPoint(CU(3)), IdealPoint(CU(3))};
    double th = U(-M_PI, M_PI);
    Mobius e = elliptic_about_axis(axis, th) * elliptic_about_axis(axis, -th);
    elmax = std::max({elmax, e.dist_to_identity(), dist(e(p), p)});
  }
  return {dmax < 1e-9 && crmax < 1e-10 && elmax < 1e-10,
          join({kv("distance", dmax), kv("cross_ratio", crmax), kv("elliptic", elmax)})};
}

Outcome criterion3() {
  double params = 0, bendrt = 0, positivity = 0;
  for (int t = 0; t < 100; ++t) {
    int n = 4 + t % 5;
    TwistedIdealPolygon P;
    for (int i = 0; i < n; ++i) P.vertices.push_back(IdealPoint(CU(3)));
    params = std::max(params, polygon_distance(from_params(to_params(P)), normalized(P)));
    auto s = straighten(P);
    bendrt = std::max(bendrt, polygon_distance(normalized(bend(s.P0, s.bending)), normalized(P)));
    for (auto c : to_params(s.P0).values)
      positivity = std::max(positivity, c.real() > 0 ? std::abs(c.imag()) / std::abs(c) : 1.0);
  }
  return {params < 1e-8 && bendrt < 1e-8 && positivity < 1e-8,
          join({kv("params_roundtrip", params), kv("bend_roundtrip", bendrt), kv("imag_part", positivity)})};
}

Outcome criterion4() {
  auto c = cached_run("triangle_129", run_config(triangle, "auto", 3.5, 129));
  const auto& r = c.run;
  const Grid& g = r.p.grid;
  double sup = tension_field(r.h.map, g).sup;
  bool converged = sup < 1e-4;
  bool mono = energy_monotone(c.planar_series);
  // |2e - 2| for the q-normalized energy density, sampled on the nodes shared with the 65-node run.
  // Its far tail flattens at the discretization floor, so the fit keeps the leading bins where the
  // value exceeds twice the grid-halving error |v_h - v_2h|; the all-bin fit is reported alongside.
  auto coarse = cached_run("triangle_65", run_config(triangle, "auto", 3.5, 65));
  const Grid& gc = coarse.run.p.grid;
  auto e = energy_density(r.h.map, g), ec = energy_density(coarse.run.h.map, gc);
  double R = 0.85 * p_radius(g);
  std::vector<double> v, err, d;
  for (int j = 1; j < gc.ny - 1; ++j)
    for (int i = 1; i < gc.nx - 1; ++i) {
      cplx z = gc.pos(i, j);
      if (std::abs(z.real()) > R || std::abs(z.imag()) > R) continue;
      double fine = std::abs(2 * e[g.idx(2 * i, 2 * j)] - 2), crude = std::abs(2 * ec[gc.idx(i, j)] - 2);
      v.push_back(fine);
      err.push_back(std::abs(fine - crude));
      d.push_back(natural_distance_from_zeros(r.p.q, z));
    }
  double dmax = *std::max_element(d.begin(), d.end());
  auto coarse_bins = bin_maxima(v, d, 0, dmax, 20);
  auto all = decay_fit(coarse_bins.maxima, coarse_bins.centers);
  const int nb = 40;
  std::vector<double> vmax(nb, 0), emax(nb, 0);
  for (std::size_t k = 0; k < v.size(); ++k) {
    int b = std::min(nb - 1, int(d[k] / dmax * nb));
    vmax[b] = std::max(vmax[b], v[k]);
    emax[b] = std::max(emax[b], err[k]);
  }
  std::vector<double> xs, ys;
  for (int b = 0; b < nb && vmax[b] > 2 * emax[b]; ++b) {
    xs.push_back((b + 0.5) * dmax / nb);
    ys.push_back(std::log(vmax[b]));
  }
  LineFit fit;
  if (xs.size() >= 5) fit = linear_fit(xs, ys);
  double resolved_to = xs.empty() ? 0 : xs.back();
  // far leaves: curvature and geodesic residual against the canoeing constant
  std::vector<double> heights;
  for (int k = 0; k < 10; ++k) heights.push_back(0.5 + 0.5 * k);
  auto sides = side_asymptotics(r.h.map, g, r.p.P, r.p.init.charts, heights);
  double C = measure_canoe_constant();
  double kmax = 0, slack = 0;
  bool leaves = true;
  for (auto& s : sides) {
    if (s.leaves.empty()) {
      leaves = false;
      continue;
    }
    auto& far = s.leaves.back();
    kmax = std::max(kmax, far.curvature_max);
    slack = std::max(slack, far.fit_residual - C * far.curvature_max);
    leaves = leaves && far.curvature_max < 0.1 && far.fit_residual <= C * far.curvature_max;
  }
  bool pass = converged && mono && fit.slope < 0 && fit.correlation < -0.9 && leaves;
  return {pass, join({kv("sup_tau", sup), mono ? "energy_monotone" : "energy_NOT_monotone", kv("e_slope", fit.slope),
                      kv("e_corr", fit.correlation),
                      kv("e_bins", double(xs.size())), kv("e_resolved_to", resolved_to), kv("e_corr_all_bins", all.correlation),
                      kv("far_curvature", kmax), kv("canoe_C", C),
                      kv("residual_minus_Ck", slack)})};
}

// Twisted-run summary shared by criteria 5 and 10.
struct TwistedSummary {
  double M0 = 0, psi_max = 0, psi_excess = 0, G0 = 0, G_max = 0;
};

TwistedSummary summarize(const std::vector<TimeSample>& s) {
  TwistedSummary t;
  t.M0 = s.front().sup_psi;
  t.G0 = s.front().sup_gauge;
  double running_min = s.front().sup_psi;
  for (auto& x : s) {
    t.psi_max = std::max(t.psi_max, x.sup_psi);
    t.G_max = std::max(t.G_max, x.sup_gauge);
    t.psi_excess = std::max(t.psi_excess, x.sup_psi - running_min);
    running_min = std::min(running_min, x.sup_psi);
  }
  return t;
}

Outcome criterion5() {
  auto c = cached_run("square_129", run_config(square_i, "auto", 3.5, 129));
  const auto& r = c.run;
  const auto& s = r.series;
  auto t = summarize(s);
  double eps = 5e-3 * t.M0;
  bool a = t.psi_excess <= eps;
  double d = t.G0;  // smallest d with u0 inside N_d(hull)
  bool b = t.G_max <= t.G0 + 5e-3 * d;
  std::vector<double> ts, taus;
  for (auto& x : s)
    if (x.t > 0) ts.push_back(x.t), taus.push_back(x.sup_tau);
  auto decade = middle_decade_slope(ts, taus);
  bool cc = decade.slope <= -0.4;
  double worst_slope = -1e300;
  for (auto& path : c.history) {
    auto ck = read_checkpoint(path.string());
    DiscreteMap m;
    m.u = ck.u;
    worst_slope = std::max(worst_slope, spatial_tension_decay(m, r.p.grid, r.p.q).slope);
  }
  bool dd = worst_slope < 0;
  bool conv = r.u.converged || tension_field(r.u.map, r.p.grid).sup < 1e-4;
  return {a && b && cc && dd && conv,
          join({std::string("(a)") + (a ? "ok" : "FAIL"), kv("M0", t.M0), kv("psi_excess", t.psi_excess),
                kv("eps_mp", eps), std::string("(b)") + (b ? "ok" : "FAIL"), kv("G0", t.G0), kv("G_max", t.G_max),
                std::string("(c)") + (cc ? "ok" : "FAIL"), kv("tau_slope", decade.slope),
                std::string("(d)") + (dd ? "ok" : "FAIL"), kv("worst_spatial_slope", worst_slope),
                kv("checkpoints", double(c.history.size())), conv ? "converged" : "NOT_converged"})};
}

Outcome criterion6() {
  auto coarse = cached_run("square_65", run_config(square_i, "auto", 3.5, 65));
  auto fine = cached_run("square_129", run_config(square_i, "auto", 3.5, 129));
  const Pipeline& p = fine.run.p;
  auto hc = hopf_field(coarse.run.u.map, coarse.run.p.grid, p.n, fit_region(p));
  auto hf = hopf_field(fine.run.u.map, p.grid, p.n, fit_region(p));
  double drop = hc.dbar_rms / hf.dbar_rms;
  // degree-n fit: coefficients beyond n - 2 against the leading retained one
  double res_n;
  auto mask = trusted_mask(p.grid, fit_region(p));
  auto cn = fit_polynomial(p.grid, hf.phi, mask, p.n, &res_n);
  double R = p_radius(p.grid) * (1 - fit_region(p).margin_frac);
  double excess = excess_degree_ratio(cn, p.n - 2, R);
  bool pass = drop >= 3 && hf.fit_residual < 0.05 && excess < 0.01;
  // informational: unscaled coefficient ratio, and the same scaled ratio on the x1.5 truncation run
  auto wide = cached_run("square_97_wide", run_config(square_i, "auto", 5.25, 97));
  FitRegion wr = fit_region(wide.run.p);
  wr.margin_frac = 1 - R / p_radius(wide.run.p.grid);
  double res_w;
  auto cw = fit_polynomial(wide.run.p.grid, hopf_field(wide.run.u.map, wide.run.p.grid, p.n, wr).phi,
                           trusted_mask(wide.run.p.grid, wr), p.n, &res_w);
  return {pass, join({kv("dbar_coarse", hc.dbar_rms), kv("dbar_fine", hf.dbar_rms), kv("drop", drop),
                      kv("fit_residual", hf.fit_residual), kv("excess_ratio", excess),
                      kv("unscaled_excess", excess_degree_ratio(cn, p.n - 2)),
                      kv("excess_ratio_wide_domain", excess_degree_ratio(cw, p.n - 2, R))})};
}

Outcome criterion7() {
  auto a = cached_run("square_65", run_config(square_i, "auto", 3.5, 65));
  auto b = cached_run("square_65_septic", run_config(square_i, "auto", 3.5, 65, "init.profile = septic\n"));
  const Pipeline& p = a.run.p;
  double planar = interior_sup_dist(p.grid, a.run.h.map, b.run.h.map);
  double d = interior_sup_dist(p.grid, a.run.u.map, b.run.u.map);
  auto ha = hopf_field(a.run.u.map, p.grid, p.n, fit_region(p));
  auto hb = hopf_field(b.run.u.map, p.grid, p.n, fit_region(p));
  double pp = pp_compare(pp_of_fit(ha), pp_of_fit(hb));
  double tol = p.cfg.flow_tol;
  bool pass = planar == 0 && d < 10 * tol && pp < 0.05;
  return {pass, join({kv("sup_dist", d), kv("limit", 10 * tol), kv("pp_distance", pp), kv("planar_dist", planar)})};
}

Outcome criterion8() {
  // constant q, collapse onto (0, inf) with in-plane and out-of-plane bumps
  PolyQD q({cplx(1.0)});
  Grid g = Grid::square(2, 65, [](cplx) { return 4.0; });
  GeodesicLine axis{IdealPoint(0.0), IdealPoint::infinity()};
  auto init = build_collapse_initial(q, g, axis.p, axis.q, 0.5);
  FlowState s;
  s.map = init.map;
  for (std::size_t k = 0; k < g.size(); ++k) {
    cplx z = g.pos(k);
    double bump = 0.8 * (1 - smoothstep5(std::abs(z) / 1.4));
    s.map.u[k] = exp_map(s.map.u[k], Vec3{0, s.map.u[k].z * bump, 0});
  }
  double before = 0;
  for (auto& u : s.map.u) before = std::max(before, dist_to_line(u, axis));
  FlowConfig cfg;
  cfg.tol_tau = 1e-6;
  run(s, g, cfg);
  std::vector<PointH3> pts;
  for (int j = 1; j < g.ny - 1; ++j)
    for (int i = 1; i < g.nx - 1; ++i) pts.push_back(s.map.u[g.idx(i, j)]);
  double residual = fit_geodesic(pts).residual;
  double cell = std::sqrt(4.0) * g.hx();
  return {s.converged && residual < 2 * cell,
          join({kv("initial_offset", before), kv("fit_residual", residual), kv("limit", 2 * cell),
                kv("steps", double(s.step)), s.converged ? "converged" : "NOT_converged"})};
}

Outcome criterion9() {
  // q = 0.3 (z - 1) and its shift q(z + 1) = 0.3 z at three radii with equal spacing
  std::vector<std::pair<double, int>> grids = {{3.5, 43}, {5.25, 64}, {7.0, 85}};
  std::vector<double> dists;
  double pp = 0;
  for (auto [R, N] : grids) {
    std::string tag = "_" + std::to_string(N);
    // at 2R the initial map reaches z ~ 2e-10 near the vertex at 1, below the default floor
    const std::string floor = "flow.z_floor = 1e-13\n";
    auto a = cached_run("triangle_q" + tag, run_config(triangle, "-0.3, 0.3", R, N, floor));
    auto b = cached_run("triangle_shift" + tag, run_config(triangle, "0, 0.3", R, N, floor));
    dists.push_back(interior_sup_dist(a.run.p.grid, a.run.u.map, b.run.u.map));
    pp = pp_compare(principal_part(a.run.p.q), principal_part(b.run.p.q));
  }
  bool increasing = dists[0] < dists[1] && dists[1] < dists[2];
  return {increasing && pp > 0.05,
          join({kv("dist_R", dists[0]), kv("dist_1.5R", dists[1]), kv("dist_2R", dists[2]), kv("pp_distance", pp)})};
}

Outcome criterion10() {
  auto base = cached_run("square_65", run_config(square_i, "auto", 3.5, 65));
  auto wide = cached_run("square_97_wide", run_config(square_i, "auto", 5.25, 97));
  auto a = summarize(base.run.series), b = summarize(wide.run.series);
  auto rel = [](double x, double y) { return std::abs(y - x) / std::max(std::abs(x), 1e-300); };
  double dM0 = rel(a.M0, b.M0), dpsi = rel(a.psi_max, b.psi_max), dG0 = rel(a.G0, b.G0), dG = rel(a.G_max, b.G_max);
  bool pass = std::max({dM0, dpsi, dG0, dG}) < 0.1;
  return {pass, join({kv("M0", a.M0), kv("M0_wide", b.M0), kv("psi_max", a.psi_max), kv("psi_max_wide", b.psi_max),
                      kv("G0", a.G0), kv("G0_wide", b.G0), kv("G_max", a.G_max), kv("G_max_wide", b.G_max),
                      kv("worst_rel_change", std::max({dM0, dpsi, dG0, dG}))})};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hmlab acceptance criteria"};
  int criterion = 0;
  app.add_option("--criterion", criterion, "criterion number (1-10)")->required()->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  std::vector<Outcome (*)()> all = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                     criterion6, criterion7, criterion8, criterion9, criterion10};
  auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = all[criterion - 1]();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("criterion %d: %s  %s  [%.1fs]\n", criterion, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
  return o.pass ? 0 : 1;
}
