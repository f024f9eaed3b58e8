#pragma once
// Planar harmonic map h: C -> H^2 (the plane y=0) asymptotic to a planar ideal polygon.
#include <Eigen/Dense>

#include "hmlab/flow.hpp"
#include "hmlab/polygon.hpp"
#include "hmlab/qd.hpp"

namespace hmlab {

inline double smoothstep5(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * t * (10 - 15 * t + 6 * t * t);
}

// Frame of side s: 0 -> v_s, inf -> v_{s+1}, real coefficients.
inline Mobius side_frame(const TwistedIdealPolygon& P, int s) {
  if (P.size() >= 3) return mobius_from_images(P[s], P[s + 2], P[s + 1]);
  // two vertices: any further real point fixes the frame
  double a = P[s].inf ? 0 : P[s].value.real(), b = P[s + 1].inf ? 0 : P[s + 1].value.real();
  return mobius_from_images(P[s], IdealPoint(std::max(a, b) + 1 + std::abs(a - b)), P[s + 1]);
}

// Karcher mean of points by fixed-point iteration on the log map.
inline PointH3 karcher_mean(const std::vector<PointH3>& pts) {
  PointH3 c = pts.front();
  for (int it = 0; it < 100; ++it) {
    Vec3 acc;
    for (auto& p : pts) acc = acc + log_map(c, p);
    acc = acc * (1.0 / pts.size());
    c = exp_map(c, acc);
    if (hnorm(c, acc) < 1e-14) break;
  }
  return c;
}

struct PlanarOptions {
  double r_in = -1;   // anchor radius of the side charts; default twice the zero radius, at least 1
  double blend = 0.5; // half-width of the vertex blends as a fraction of pi/n
};

// Collapse-style initial guess g0 and its chart bookkeeping.
struct PlanarInitial {
  enum Region { side = 0, vertex = 1, core = 2 };
  TwistedIdealPolygon P0;
  PolyQD q;
  Grid grid;
  DiscreteMap map;
  std::vector<int> region;  // Region per node
  std::vector<int> chart;   // side or vertex index per node, -1 in the core
  double r_in = 1, delta = 0;
  std::vector<double> vertex_dirs;        // direction of vertex s at infinity
  std::vector<NaturalCoordinate> charts;  // natural coordinate of side s
  std::vector<Mobius> frames;
  std::vector<double> offsets;
  double closure_defect = 0;  // residual of the vertex-matching system
  PointH3 center;

  int n() const { return P0.size(); }
  // Collapse value of side s: gamma_s(Re xi_s(z) + c_s).
  PointH3 side_point(int s, cplx z) const {
    double t = charts[s](z).real() + offsets[s];
    return frames[s](PointH3{0, 0, std::exp(t)});
  }
  PointH3 outer(cplx z, int* reg = nullptr, int* idx = nullptr) const {
    int N = n();
    double phi = std::arg(z);
    for (int s = 0; s < N; ++s) {
      double a = std::remainder(phi - vertex_dirs[s], 2 * M_PI);
      if (std::abs(a) < delta) {
        if (reg) *reg = vertex, *idx = s;
        int sp = (s + N - 1) % N;
        double w = smoothstep5((a + delta) / (2 * delta));
        return geodesic_point(side_point(sp, z), side_point(s, z), w);
      }
    }
    for (int s = 0; s < N; ++s) {
      double a = std::remainder(phi - vertex_dirs[s], 2 * M_PI);
      double span = std::remainder(vertex_dirs[(s + 1) % N] - vertex_dirs[s], 2 * M_PI);
      if (span <= 0) span += 2 * M_PI;
      if (a < 0) a += 2 * M_PI;
      if (a < span) {
        if (reg) *reg = side, *idx = s;
        return side_point(s, z);
      }
    }
    throw NumericalFailure("planar initial: direction not covered");
  }
  PointH3 eval(cplx z, int* reg = nullptr, int* idx = nullptr) const {
    double r = std::abs(z);
    if (r >= r_in) return outer(z, reg, idx);
    if (reg) *reg = core, *idx = -1;
    if (r == 0) return center;
    return geodesic_point(center, outer(z * (r_in / r)), smoothstep5(r / r_in));
  }
};

namespace detail {
inline void flatten_checked(PointH3& p, double tol = 1e-9) {
  if (std::abs(p.y) > tol) throw NumericalFailure("planarity drift " + std::to_string(p.y));
  p.y = 0;
}
// Busemann function of the cusp chart at v (v -> inf): -log of the height.
inline double busemann(const Mobius& chart, const PointH3& p) { return -std::log(chart(p).z); }
}  // namespace detail

// Offsets from the vertex-matching condition at each vertex: the horoball heights of the two
// adjacent collapse maps agree along the vertex ray. Least squares for even n.
inline void solve_offsets(PlanarInitial& g) {
  int N = g.n();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd r(N);
  const double T = 18;
  for (int s = 0; s < N; ++s) {
    int sp = (s + N - 1) % N;
    Mobius chart = normalize_triple(g.P0[s - 1], g.P0[s + 1], g.P0[s]);
    double b1 = detail::busemann(chart, g.frames[sp](PointH3{0, 0, std::exp(T)})) + T;
    double b2 = detail::busemann(chart, g.frames[s](PointH3{0, 0, std::exp(-T)})) + T;
    cplx zs = std::polar(2 * g.r_in, g.vertex_dirs[s]);
    double sum = g.charts[sp](zs).real() + g.charts[s](zs).real();
    A(s, sp) += 1;
    A(s, s) += 1;
    r(s) = b1 - b2 - sum;
  }
  Eigen::VectorXd c = A.completeOrthogonalDecomposition().solve(r);
  g.closure_defect = (A * c - r).norm();
  g.offsets.assign(c.data(), c.data() + N);
}

inline PlanarInitial build_planar_initial(const TwistedIdealPolygon& P0, const PolyQD& q, const Grid& grid,
                                          const PlanarOptions& opt = {}) {
  int N = P0.size();
  if (N < 3) throw InvalidInput("build_planar_initial: need n >= 3 (use build_collapse_initial)");
  if (!is_planar(P0)) throw InvalidInput("build_planar_initial: polygon is not planar");
  for (auto& v : P0.vertices)
    if (!v.inf && std::abs(v.value.imag()) > 1e-12) throw InvalidInput("build_planar_initial: vertices must be real");
  if (q.degree() != N - 2) throw InvalidInput("build_planar_initial: deg q must equal n - 2");
  PlanarInitial g;
  g.P0 = P0;
  g.q = q;
  g.grid = grid;
  double rz = zero_radius(q);
  g.r_in = opt.r_in > 0 ? opt.r_in : std::max(1.0, 2 * rz);
  if (g.r_in <= 1.05 * rz) throw InvalidInput("build_planar_initial: anchor circle meets the zeros");
  g.delta = opt.blend * M_PI / N;
  double h = std::max(grid.hx(), grid.hy());
  if (g.delta * g.r_in < 2 * h || g.r_in < 3 * h) throw InvalidInput("build_planar_initial: grid too coarse for the chart seams");
  double half = std::min({-grid.x0, grid.x1, -grid.y0, grid.y1});
  if (half <= 1.2 * g.r_in) throw InvalidInput("build_planar_initial: grid does not cover the decomposition radius");
  g.vertex_dirs = horizontal_directions(q);
  for (int s = 0; s < N; ++s) {
    double mid = g.vertex_dirs[s] + M_PI / N;
    g.charts.emplace_back(q, mid, g.r_in);
    g.frames.push_back(side_frame(P0, s));
  }
  solve_offsets(g);
  std::vector<PointH3> ring;
  for (int k = 0; k < 64; ++k) ring.push_back(g.outer(std::polar(g.r_in, 2 * M_PI * k / 64)));
  g.center = karcher_mean(ring);
  g.center.y = 0;
  g.map.u.resize(grid.size());
  g.region.resize(grid.size());
  g.chart.resize(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    g.map.u[k] = g.eval(grid.pos(k), &g.region[k], &g.chart[k]);
    detail::flatten_checked(g.map.u[k]);
  }
  return g;
}

// Degree-zero case: collapse onto the geodesic (v0, v1) along Re(sqrt(4q) z), plus an in-plane
// bump of hyperbolic size `bump` supported in |z| < 0.7 of the half-width.
inline PlanarInitial build_collapse_initial(const PolyQD& q, const Grid& grid, IdealPoint v0, IdealPoint v1,
                                            double bump = 0) {
  if (q.degree() != 0) throw InvalidInput("build_collapse_initial: q must be constant");
  PlanarInitial g;
  g.P0.vertices = {v0, v1};
  g.q = q;
  g.grid = grid;
  g.frames = {side_frame(g.P0, 0), side_frame(g.P0, 1)};
  cplx root = std::sqrt(q.scale() * q.coeffs[0]);
  double half = std::min({-grid.x0, grid.x1, -grid.y0, grid.y1});
  g.map.u.resize(grid.size());
  g.region.assign(grid.size(), PlanarInitial::side);
  g.chart.assign(grid.size(), 0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    cplx z = grid.pos(k);
    double t = (root * z).real();
    double b = bump * (1 - smoothstep5(std::abs(z) / (0.7 * half)));
    PointH3 p = exp_map(PointH3{0, 0, std::exp(t)}, Vec3{std::exp(t) * b, 0, 0});
    g.map.u[k] = g.frames[0](p);
    detail::flatten_checked(g.map.u[k]);
  }
  return g;
}

struct PlanarResult {
  FlowState state;
  double max_planarity_drift = 0;
};

// Flows the initial guess (or a resumed state) to stationarity with Dirichlet data from the guess,
// projecting onto y=0.
inline PlanarResult solve_planar_harmonic(const PlanarInitial& init, FlowConfig cfg, Observers obs = {},
                                          const FlowState* resume = nullptr) {
  PlanarResult res;
  if (resume) {
    if (resume->map.u.size() != init.map.u.size()) throw InvalidInput("solve_planar_harmonic: resume size mismatch");
    res.state = *resume;
  } else {
    res.state.map = init.map;
  }
  auto prev = obs.post_step;
  obs.post_step = [&res, prev](DiscreteMap& m) {
    for (auto& p : m.u) {
      res.max_planarity_drift = std::max(res.max_planarity_drift, std::abs(p.y));
      detail::flatten_checked(p);
    }
    if (prev) prev(m);
  };
  run(res.state, init.grid, cfg, obs);
  return res;
}

// Hopf differential phi = <u_z, u_z> in the H^3 metric on interior nodes.
inline std::vector<cplx> hopf_values(const DiscreteMap& m, const Grid& g) {
  std::vector<cplx> phi(g.size(), 0.0);
  for (int j = 1; j < g.ny - 1; ++j)
    for (int i = 1; i < g.nx - 1; ++i) {
      std::size_t k = g.idx(i, j);
      auto [dx, dy] = tangent_derivs(m, g, i, j);
      cplx ux = 0.5 * cplx(dx.x, -dy.x), uy = 0.5 * cplx(dx.y, -dy.y), uz = 0.5 * cplx(dx.z, -dy.z);
      double z = m.u[k].z;
      phi[k] = (ux * ux + uy * uy + uz * uz) / (z * z);
    }
  return phi;
}

struct VortexResidual {
  std::vector<double> residual;  // NaN where undefined or degenerate
  std::size_t degenerate = 0;
  double median = 0;
};

// With w = (1/2) log(4 H) and Phi = 4 phi, a harmonic map into H^2 satisfies
// Delta w = (1/4)(e^{2w} - |Phi|^2 e^{-2w}); the residual is the pointwise defect.
inline VortexResidual vortex_residual(const DiscreteMap& m, const Grid& g, double degenerate_tol = 1e-10) {
  VortexResidual vr;
  std::vector<double> w(g.size(), std::nan("")), rhs(g.size(), std::nan(""));
  auto phi = hopf_values(m, g);
  for (int j = 1; j < g.ny - 1; ++j)
    for (int i = 1; i < g.nx - 1; ++i) {
      std::size_t k = g.idx(i, j);
      auto [dx, dy] = tangent_derivs(m, g, i, j);
      cplx Wz = 0.5 * (cplx(dx.x, dx.z) - cplx(0, 1) * cplx(dy.x, dy.z));
      double H = std::norm(Wz) / (m.u[k].z * m.u[k].z);
      if (H < degenerate_tol) {
        ++vr.degenerate;
        continue;
      }
      w[k] = 0.5 * std::log(4 * H);
      double P2 = 16 * std::norm(phi[k]);
      rhs[k] = 0.25 * (std::exp(2 * w[k]) - P2 * std::exp(-2 * w[k]));
    }
  vr.residual.assign(g.size(), std::nan(""));
  std::vector<double> vals;
  for (int j = 2; j < g.ny - 2; ++j)
    for (int i = 2; i < g.nx - 2; ++i) {
      std::size_t k = g.idx(i, j);
      double c = w[k], a = w[k - 1], b = w[k + 1], d = w[k - g.nx], e = w[k + g.nx];
      if (std::isnan(c) || std::isnan(a) || std::isnan(b) || std::isnan(d) || std::isnan(e)) continue;
      double lap = (a + b - 2 * c) / (g.hx() * g.hx()) + (d + e - 2 * c) / (g.hy() * g.hy());
      vr.residual[k] = std::abs(lap - rhs[k]);
      vals.push_back(vr.residual[k]);
    }
  if (!vals.empty()) {
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    vr.median = vals[vals.size() / 2];
  }
  return vr;
}

// q-metric length of the straight segment from the nearest zero of q to z (origin if none).
inline double natural_distance_from_zeros(const PolyQD& q, cplx z) {
  auto zs = zeros(q);
  if (zs.empty()) zs.push_back(0);
  cplx z0 = zs.front();
  for (auto c : zs)
    if (std::abs(z - c) < std::abs(z - z0)) z0 = c;
  double L = std::abs(z - z0);
  int nseg = std::max(1, int(std::ceil(L / 0.1)));
  const auto& X = detail::gl_x();
  const auto& W = detail::gl_w();
  double total = 0;
  for (int s = 0; s < nseg; ++s)
    for (int i = 0; i < 10; ++i) {
      double t = (s + 0.5 + 0.5 * X[i]) / nseg;
      total += 0.5 / nseg * W[i] * std::sqrt(q.scale() * std::abs(q(z0 + t * (z - z0)))) * L;
    }
  return total;
}

}  // namespace hmlab
