#pragma once
// Measurements on flow states: Hopf differential and polynomial fit, principal parts, pleated map and
// the distance Psi, hull gauge, side asymptotics, decay fits, reports and field exports.
#include <Eigen/Dense>
#include <map>
#include <optional>
#include <random>

#include "hmlab/initmap.hpp"
#include "json.hpp"

namespace hmlab {

// ---------- least-squares helpers ----------

struct LineFit {
  double slope = 0, intercept = 0, correlation = 0;
  std::size_t samples = 0;
};

inline LineFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("linear_fit: need matching samples");
  double n = double(x.size()), mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0) throw InvalidInput("linear_fit: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.correlation = syy > 0 ? sxy / std::sqrt(sxx * syy) : 0;
  f.samples = x.size();
  return f;
}

// Fit log|value| = intercept + rate * distance; nonpositive or non-finite values are dropped.
inline LineFit decay_fit(const std::vector<double>& values, const std::vector<double>& distances) {
  if (values.size() != distances.size()) throw InvalidInput("decay_fit: size mismatch");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] > 0 && std::isfinite(values[i]) && std::isfinite(distances[i])) {
      x.push_back(distances[i]);
      y.push_back(std::log(values[i]));
    }
  if (x.size() < 10) throw InvalidInput("decay_fit: fewer than 10 positive samples");
  return linear_fit(x, y);
}

// Per-bin maxima of values against distance; empty bins are skipped.
struct Binned {
  std::vector<double> centers, maxima;
};

inline Binned bin_maxima(const std::vector<double>& values, const std::vector<double>& distances, double d0,
                         double d1, int bins) {
  std::vector<double> mx(bins, -1);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || !(distances[i] >= d0) || !(distances[i] < d1)) continue;
    int b = std::min(bins - 1, int((distances[i] - d0) / (d1 - d0) * bins));
    mx[b] = std::max(mx[b], values[i]);
  }
  Binned r;
  for (int b = 0; b < bins; ++b)
    if (mx[b] > 0) {
      r.centers.push_back(d0 + (b + 0.5) * (d1 - d0) / bins);
      r.maxima.push_back(mx[b]);
    }
  return r;
}

// Slope of log y against log t over the decade centred geometrically in (t_first, t_last].
inline LineFit middle_decade_slope(const std::vector<double>& t, const std::vector<double>& y) {
  std::vector<double> tp, yp;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] > 0 && y[i] > 0) tp.push_back(t[i]), yp.push_back(y[i]);
  if (tp.size() < 3) throw InvalidInput("middle_decade_slope: too few samples");
  double mid = std::sqrt(tp.front() * tp.back()), lo = mid / std::sqrt(10.0), hi = mid * std::sqrt(10.0);
  if (tp.back() / tp.front() < 10) throw InvalidInput("middle_decade_slope: run spans less than a decade");
  std::vector<double> x, v;
  for (std::size_t i = 0; i < tp.size(); ++i)
    if (tp[i] >= lo && tp[i] <= hi) x.push_back(std::log(tp[i])), v.push_back(std::log(yp[i]));
  return linear_fit(x, v);
}

// ---------- Hopf differential ----------

struct FitRegion {
  double margin_frac = 0.15;  // boundary margin as a fraction of the truncation radius
  double zero_mult = 2;       // excluded disk radius around zeros, in units of eps
  double eps = 0.3;
  std::vector<cplx> zeros;
};

struct HopfField {
  std::vector<cplx> phi;        // interior nodes; zero on the boundary
  std::vector<double> dbar;     // |d phi / d zbar|; NaN where no central stencil
  std::vector<char> trusted;    // fit region mask
  std::vector<cplx> fit;        // coefficients of the degree n-2 fit, lowest first
  double fit_residual = 0;      // relative L2 residual of the fit on the trusted nodes
  double dbar_rms = 0;          // RMS of dbar over trusted nodes
  double dbar_rel = 0;          // dbar_rms relative to the RMS of |phi'| over trusted nodes
};

inline std::vector<char> trusted_mask(const Grid& g, const FitRegion& r) {
  double R = std::min({-g.x0, g.x1, -g.y0, g.y1});
  double lim = R * (1 - r.margin_frac);
  std::vector<char> m(g.size(), 0);
  for (int j = 2; j < g.ny - 2; ++j)
    for (int i = 2; i < g.nx - 2; ++i) {
      cplx z = g.pos(i, j);
      if (std::abs(z.real()) > lim || std::abs(z.imag()) > lim) continue;
      bool near = false;
      for (auto c : r.zeros) near = near || std::abs(z - c) < r.zero_mult * r.eps;
      m[g.idx(i, j)] = !near;
    }
  return m;
}

// Least-squares polynomial of the given degree through phi on the masked nodes.
inline std::vector<cplx> fit_polynomial(const Grid& g, const std::vector<cplx>& phi, const std::vector<char>& mask, int degree,
                             double* rel_residual = nullptr) {
  if (degree < 0) throw InvalidInput("fit_polynomial: negative degree");
  std::vector<std::size_t> ks;
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (mask[k]) ks.push_back(k);
  if (ks.size() < std::size_t(degree + 1)) throw InvalidInput("fit_polynomial: fit region empty");
  double s = 0;
  for (auto k : ks) s = std::max(s, std::abs(g.pos(k)));
  Eigen::MatrixXcd A(ks.size(), degree + 1);
  Eigen::VectorXcd b(ks.size());
  for (std::size_t r = 0; r < ks.size(); ++r) {
    cplx w = g.pos(ks[r]) / s, p = 1;
    for (int c = 0; c <= degree; ++c, p *= w) A(r, c) = p;
    b(r) = phi[ks[r]];
  }
  Eigen::VectorXcd x = A.colPivHouseholderQr().solve(b);
  if (rel_residual) *rel_residual = (A * x - b).norm() / std::max(b.norm(), 1e-300);
  std::vector<cplx> coeffs(degree + 1);
  for (int c = 0; c <= degree; ++c) coeffs[c] = x(c) / std::pow(s, c);
  return coeffs;
}

inline HopfField hopf_field(const DiscreteMap& m, const Grid& g, int n, const FitRegion& region) {
  if (n < 2) throw InvalidInput("hopf_field: polygon size must be at least 2");
  HopfField hf;
  hf.phi = hopf_values(m, g);
  hf.trusted = trusted_mask(g, region);
  hf.dbar.assign(g.size(), std::nan(""));
  double sd = 0, sp = 0;
  std::size_t cnt = 0;
  for (int j = 2; j < g.ny - 2; ++j)
    for (int i = 2; i < g.nx - 2; ++i) {
      std::size_t k = g.idx(i, j);
      cplx px = (hf.phi[k + 1] - hf.phi[k - 1]) / (2 * g.hx());
      cplx py = (hf.phi[k + g.nx] - hf.phi[k - g.nx]) / (2 * g.hy());
      hf.dbar[k] = std::abs(0.5 * (px + cplx(0, 1) * py));
      if (hf.trusted[k]) {
        sd += hf.dbar[k] * hf.dbar[k];
        sp += std::norm(0.5 * (px - cplx(0, 1) * py));
        ++cnt;
      }
    }
  if (cnt == 0) throw InvalidInput("hopf_field: fit region empty");
  hf.dbar_rms = std::sqrt(sd / cnt);
  hf.dbar_rel = std::sqrt(sd / std::max(sp, 1e-300));
  hf.fit = fit_polynomial(g, hf.phi, hf.trusted, n - 2, &hf.fit_residual);
  return hf;
}

// Largest |c_k| R^k above degree `kept` relative to |c_kept| R^kept, for an over-degree fit on radius R.
inline double excess_degree_ratio(const std::vector<cplx>& coeffs, int kept, double R = 1) {
  int deg = int(coeffs.size()) - 1;
  if (deg <= kept) return 0;
  double ex = 0;
  for (int c = kept + 1; c <= deg; ++c) ex = std::max(ex, std::abs(coeffs[c]) * std::pow(R, c - kept));
  return ex / std::max(std::abs(coeffs[kept]), 1e-300);
}

inline PrincipalPart pp_of_fit(const HopfField& hf) { return principal_part(PolyQD(hf.fit)); }
inline double pp_compare(const PrincipalPart& a, const PrincipalPart& b) { return pp_distance(a, b); }

// ---------- pleated plane map and Psi ----------

struct PleatedField {
  std::vector<PointH3> xi;
  std::vector<int> region;    // triangle index of h(node)
  std::vector<char> flagged;  // h(node) within flag_eps of a diagonal
  std::size_t flagged_count = 0;
};

inline PleatedField pleated_field(const DiscreteMap& h, const Pleating& pl, double flag_eps = 0.05) {
  for (auto& ax : pl.bending.axes)
    if (dist_to_line(pl.bending.base_point, ax) < 1e-9) throw InvalidInput("pleated_field: base point on a diagonal");
  PleatedField pf;
  std::size_t N = h.u.size();
  pf.xi.resize(N);
  pf.region.resize(N);
  pf.flagged.assign(N, 0);
  for (std::size_t k = 0; k < N; ++k) {
    if (std::abs(h.u[k].y) > 1e-9) throw InvalidInput("pleated_field: h is not planar");
    pf.xi[k] = pl.sharp(h.u[k], &pf.region[k]);
    for (auto& ax : pl.bending.axes)
      if (dist_to_line(h.u[k], ax) < flag_eps) pf.flagged[k] = 1;
    pf.flagged_count += pf.flagged[k];
  }
  return pf;
}

// sup over interior, unflagged nodes of dist(u(x), Xi(x)).
inline double psi_sup(const DiscreteMap& m, const Grid& g, const PleatedField& pf) {
  if (m.u.size() != pf.xi.size()) throw InvalidInput("psi_sup: grid mismatch");
  double s = 0;
  for (int j = 1; j < g.ny - 1; ++j)
    for (int i = 1; i < g.nx - 1; ++i) {
      std::size_t k = g.idx(i, j);
      if (!pf.flagged[k]) s = std::max(s, dist(m.u[k], pf.xi[k]));
    }
  return s;
}

inline double gauge_sup(const DiscreteMap& m, const Grid& g, const std::vector<GeodesicPlane>& faces) {
  double s = 0;
  for (int j = 1; j < g.ny - 1; ++j)
    for (int i = 1; i < g.nx - 1; ++i) s = std::max(s, hull_gauge(m.u[g.idx(i, j)], faces));
  return s;
}

// |tau| in the target metric per node, and the matching natural distance from the zeros of q.
inline std::pair<std::vector<double>, std::vector<double>> tension_profile(const DiscreteMap& m, const Grid& g,
                                                                           const PolyQD& q, double margin_frac) {
  auto tf = tension_field(m, g);
  double R = std::min({-g.x0, g.x1, -g.y0, g.y1}) * (1 - margin_frac);
  std::vector<double> v, d;
  for (int j = 1; j < g.ny - 1; ++j)
    for (int i = 1; i < g.nx - 1; ++i) {
      cplx z = g.pos(i, j);
      if (std::abs(z.real()) > R || std::abs(z.imag()) > R) continue;
      std::size_t k = g.idx(i, j);
      v.push_back(tf.tau[k].norm() / m.u[k].z);
      d.push_back(natural_distance_from_zeros(q, z));
    }
  return {v, d};
}

// ---------- side asymptotics ----------

// Catmull-Rom interpolation of the coordinates of u at z; nullopt outside the interior.
inline std::optional<PointH3> interpolate(const DiscreteMap& m, const Grid& g, cplx z) {
  double fx = (z.real() - g.x0) / g.hx(), fy = (z.imag() - g.y0) / g.hy();
  int i = int(std::floor(fx)), j = int(std::floor(fy));
  if (i < 1 || j < 1 || i > g.nx - 3 || j > g.ny - 3) return std::nullopt;
  double tx = fx - i, ty = fy - j;
  auto w = [](double t) {
    return std::array<double, 4>{0.5 * (-t + 2 * t * t - t * t * t), 0.5 * (2 - 5 * t * t + 3 * t * t * t),
                                 0.5 * (t + 4 * t * t - 3 * t * t * t), 0.5 * (-t * t + t * t * t)};
  };
  auto wx = w(tx), wy = w(ty);
  PointH3 p{0, 0, 0};
  for (int b = 0; b < 4; ++b)
    for (int a = 0; a < 4; ++a) {
      const PointH3& u = m.u[g.idx(i - 1 + a, j - 1 + b)];
      double c = wx[a] * wy[b];
      p.x += c * u.x, p.y += c * u.y, p.z += c * u.z;
    }
  if (!(p.z > 0)) return std::nullopt;
  return p;
}

struct LeafReport {
  double height = 0;
  std::size_t samples = 0;
  bool partial = false;
  double curvature_max = 0, fit_residual = 0, side_distance = 0;
};

struct SideReport {
  int side = 0;
  std::vector<LeafReport> leaves;
  double distance_rate = std::nan("");  // decay_fit slope of side distance vs height, if enough leaves
};

// Images of horizontal leaves {Im = -height} of each side chart over x in [-half, half].
inline std::vector<SideReport> side_asymptotics(const DiscreteMap& m, const Grid& g, const TwistedIdealPolygon& P,
                                                const std::vector<NaturalCoordinate>& charts,
                                                const std::vector<double>& heights, double half = 1.5,
                                                double spacing = 0.25, double margin_frac = 0.05) {
  double R = std::min({-g.x0, g.x1, -g.y0, g.y1}) * (1 - margin_frac);
  std::vector<SideReport> out;
  for (int s = 0; s < int(charts.size()); ++s) {
    HalfPlaneChart H;
    H.kind = HalfPlaneChart::horizontal;
    H.nat = charts[s];
    SideReport sr;
    sr.side = s;
    for (double y : heights) {
      LeafReport lr;
      lr.height = y;
      int K = int(std::lround(2 * half / spacing));
      std::vector<std::vector<PointH3>> runs(1);
      for (int k = 0; k <= K; ++k) {
        cplx z = H.point(-half + k * spacing, y);
        std::optional<PointH3> p;
        if (std::abs(z.real()) <= R && std::abs(z.imag()) <= R) p = interpolate(m, g, z);
        if (p) {
          runs.back().push_back(*p);
        } else {
          lr.partial = true;
          if (!runs.back().empty()) runs.emplace_back();
        }
      }
      auto best = std::max_element(runs.begin(), runs.end(), [](auto& a, auto& b) { return a.size() < b.size(); });
      lr.samples = best->size();
      if (lr.samples >= 3) {
        auto k = polyline_curvature(*best);
        lr.curvature_max = *std::max_element(k.begin(), k.end());
        lr.fit_residual = fit_geodesic(*best).residual;
        for (auto& p : *best) lr.side_distance = std::max(lr.side_distance, dist_to_line(p, P.side(s)));
        sr.leaves.push_back(lr);
      }
    }
    std::vector<double> v, d;
    for (auto& l : sr.leaves)
      if (l.side_distance > 0) v.push_back(l.side_distance), d.push_back(l.height);
    if (v.size() >= 10) sr.distance_rate = decay_fit(v, d).slope;
    out.push_back(sr);
  }
  return out;
}

// Worst ratio fit residual / max curvature over random curves in Fermi tubes with curvature < 1.
inline double measure_canoe_constant(unsigned seed = 3, int trials = 30) {
  std::mt19937_64 gen(seed);
  double worst = 0;
  for (int trial = 0; trial < trials; ++trial) {
    double a = std::uniform_real_distribution<double>(0.02, 0.3)(gen);
    double w = std::uniform_real_distribution<double>(0.2, 1.0)(gen);
    std::vector<PointH3> c;
    for (int i = 0; i <= 200; ++i) {
      double u = -4 + 0.04 * i;
      double v = a * std::sin(w * u) * std::sin(M_PI * i / 200.0);
      double ph = 0.3 * std::cos(0.5 * u);
      double r = std::exp(u);
      c.push_back({r * std::tanh(v) * std::cos(ph), r * std::tanh(v) * std::sin(ph), r / std::cosh(v)});
    }
    auto k = polyline_curvature(c);
    double kmax = *std::max_element(k.begin(), k.end());
    if (kmax >= 1 || kmax <= 0) continue;
    worst = std::max(worst, fit_geodesic(c).residual / kmax);
  }
  return worst;
}

// ---------- reports ----------

struct CheckEntry {
  std::string name;
  bool pass = false;
  std::map<std::string, double> measured;
  std::map<std::string, double> tolerance;
  std::string note;
};

struct Report {
  std::string config_hash;
  std::string status;  // "ok" or "fail"
  std::vector<CheckEntry> checks;
  std::map<std::string, std::string> series;  // named references to time-series files
};

inline void to_json(nlohmann::json& j, const CheckEntry& e) {
  j = {{"name", e.name}, {"pass", e.pass}, {"measured", e.measured}, {"tolerance", e.tolerance}, {"note", e.note}};
}
inline void from_json(const nlohmann::json& j, CheckEntry& e) {
  j.at("name").get_to(e.name);
  j.at("pass").get_to(e.pass);
  j.at("measured").get_to(e.measured);
  j.at("tolerance").get_to(e.tolerance);
  j.at("note").get_to(e.note);
}
inline void to_json(nlohmann::json& j, const Report& r) {
  j = {{"config_hash", r.config_hash}, {"status", r.status}, {"checks", r.checks}, {"series", r.series}};
}
inline void from_json(const nlohmann::json& j, Report& r) {
  j.at("config_hash").get_to(r.config_hash);
  j.at("status").get_to(r.status);
  j.at("checks").get_to(r.checks);
  j.at("series").get_to(r.series);
}

inline bool operator==(const CheckEntry& a, const CheckEntry& b) {
  return a.name == b.name && a.pass == b.pass && a.measured == b.measured && a.tolerance == b.tolerance &&
         a.note == b.note;
}
inline bool operator==(const Report& a, const Report& b) {
  return a.config_hash == b.config_hash && a.status == b.status && a.checks == b.checks && a.series == b.series;
}

// Status is "ok" iff every check passes; throws if a mandatory check is missing.
inline Report assemble_report(const std::string& config_hash, std::vector<CheckEntry> checks,
                              const std::vector<std::string>& mandatory = {},
                              std::map<std::string, std::string> series = {}) {
  for (auto& name : mandatory)
    if (std::none_of(checks.begin(), checks.end(), [&](auto& c) { return c.name == name; }))
      throw InvalidInput("assemble_report: missing check " + name);
  Report r;
  r.config_hash = config_hash;
  r.checks = std::move(checks);
  r.series = std::move(series);
  r.status = std::all_of(r.checks.begin(), r.checks.end(), [](auto& c) { return c.pass; }) ? "ok" : "fail";
  return r;
}

inline std::string report_text(const Report& r) { return nlohmann::json(r).dump(2) + "\n"; }
inline Report parse_report(const std::string& text) { return nlohmann::json::parse(text).get<Report>(); }

// ---------- exports ----------

// CSV with columns i,j,x,y followed by the named per-node fields.
inline void write_field_csv(const std::string& path, const Grid& g,
                            const std::vector<std::pair<std::string, std::vector<double>>>& fields) {
  std::ofstream f(path);
  if (!f) throw InvalidInput("cannot write " + path);
  f << std::setprecision(12) << "i,j,x,y";
  for (auto& [name, v] : fields) {
    if (v.size() != g.size()) throw InvalidInput("write_field_csv: field size mismatch for " + name);
    f << ',' << name;
  }
  f << "\n";
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      cplx z = g.pos(i, j);
      f << i << ',' << j << ',' << z.real() << ',' << z.imag();
      for (auto& fld : fields) f << ',' << fld.second[g.idx(i, j)];
      f << "\n";
    }
}

// ASCII PLY: one vertex per node (upper half-space coordinates), one quad per grid cell.
inline void write_ply(const std::string& path, const Grid& g, const std::vector<PointH3>& pts) {
  if (pts.size() != g.size()) throw InvalidInput("write_ply: size mismatch");
  std::ofstream f(path);
  if (!f) throw InvalidInput("cannot write " + path);
  f << std::setprecision(12);
  f << "ply\nformat ascii 1.0\nelement vertex " << pts.size() << "\nproperty double x\nproperty double y\n"
    << "property double z\nelement face " << (g.nx - 1) * (g.ny - 1) << "\nproperty list uchar int vertex_indices\n"
    << "end_header\n";
  for (auto& p : pts) f << p.x << ' ' << p.y << ' ' << p.z << "\n";
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i)
      f << "4 " << g.idx(i, j) << ' ' << g.idx(i + 1, j) << ' ' << g.idx(i + 1, j + 1) << ' ' << g.idx(i, j + 1)
        << "\n";
}

}  // namespace hmlab
