#include <gtest/gtest.h>

#include "hmlab/planar.hpp"

using namespace hmlab;

namespace {

TwistedIdealPolygon triangle() {
  TwistedIdealPolygon P;
  P.vertices = {IdealPoint(0.0), IdealPoint(1.0), IdealPoint::infinity()};
  return P;
}

Grid metric_grid(const PolyQD& q, double L, int n, double eps = 0.3) {
  auto met = smooth_metric(q, eps);
  return Grid::square(L, n, [met](cplx z) { return met(z); });
}

// Converged n=3 planar map, shared by several tests.
struct Converged {
  PolyQD q{{-0.3, 0.3}};
  Grid grid = metric_grid(q, 3.5, 41);
  PlanarInitial init = build_planar_initial(triangle(), q, grid);
  PlanarResult res;
  Converged() {
    FlowConfig cfg;
    cfg.tol_tau = 1e-5;
    cfg.record_every = 200;
    res = solve_planar_harmonic(init, cfg);
  }
};
const Converged& converged() {
  static Converged c;
  return c;
}

}  // namespace

TEST(Planar, RejectsDegreeMismatch) {
  PolyQD q({1.0, 0.0, 1.0});
  Grid g = metric_grid(q, 4, 33);
  EXPECT_THROW(build_planar_initial(triangle(), q, g), InvalidInput);
}

TEST(Planar, RejectsCoarseGrid) {
  PolyQD q({-1.0, 1.0});
  Grid g = metric_grid(q, 4, 9);
  EXPECT_THROW(build_planar_initial(triangle(), q, g), InvalidInput);
}

TEST(Planar, InitialIsPlanarAndOnSidesFarOut) {
  PolyQD q({-1.0, 1.0});
  Grid g = metric_grid(q, 5, 61);
  auto init = build_planar_initial(triangle(), q, g);
  EXPECT_LT(init.closure_defect, 1e-10);  // odd n: the vertex system is uniquely solvable
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_EQ(init.map.u[k].y, 0.0);
    if (init.region[k] == PlanarInitial::side) {
      int s = init.chart[k];
      EXPECT_LT(dist_to_line(init.map.u[k], init.P0.side(s)), 1e-8);
    }
  }
}

TEST(Planar, FarHorizontalLeafStaysInSideTube) {
  PolyQD q({-1.0, 1.0});
  Grid g = metric_grid(q, 5, 61);
  auto init = build_planar_initial(triangle(), q, g);
  for (int s = 0; s < 3; ++s) {
    HalfPlaneChart H;
    H.kind = HalfPlaneChart::horizontal;
    H.nat = init.charts[s];
    H.leaf = 0;
    for (double x = -1.5; x <= 1.5; x += 0.25) {
      cplx z = H.point(x, 4.0);
      EXPECT_LT(dist_to_line(init.eval(z), init.P0.side(s)), 1e-6) << "side " << s << " x " << x;
    }
  }
}

TEST(Planar, InitialIsContinuousAtGridScale) {
  PolyQD q({-1.0, 1.0});
  for (int n : {41, 81}) {
    Grid g = metric_grid(q, 4, n);
    auto init = build_planar_initial(triangle(), q, g);
    double worst = 0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i + 1 < n; ++i) {
        std::size_t a = g.idx(i, j), b = g.idx(i + 1, j);
        double metric = std::sqrt(std::max(g.sigma[a], g.sigma[b])) * g.hx();
        worst = std::max(worst, dist(init.map.u[a], init.map.u[b]) / metric);
      }
    EXPECT_LT(worst, 3.0) << n;
  }
}

TEST(Planar, VertexMatchingHeightsAgree) {
  // along each vertex ray the two adjacent collapse values approach the same horosphere
  PolyQD q({-1.0, 1.0});
  Grid g = metric_grid(q, 5, 61);
  auto init = build_planar_initial(triangle(), q, g);
  for (int s = 0; s < 3; ++s) {
    Mobius chart = normalize_triple(init.P0[s - 1], init.P0[s + 1], init.P0[s]);
    cplx z = std::polar(6.0, init.vertex_dirs[s]);
    double h1 = chart(init.side_point((s + 2) % 3, z)).z, h2 = chart(init.side_point(s, z)).z;
    EXPECT_NEAR(std::log(h1 / h2), 0, 1e-6);
  }
}

TEST(Planar, CollapseHopfAndVortexModel) {
  // (0, e^x) on sigma = 1: phi = 1/4, w = 0 under 4|phi| = 1 and the residual vanishes to O(h^2)
  Grid g = Grid::square(1, 41);
  auto m = sample_map(g, [](cplx z) { return PointH3{0, 0, std::exp(z.real())}; });
  auto phi = hopf_values(m, g);
  for (int j = 1; j < 40; ++j)
    for (int i = 1; i < 40; ++i) EXPECT_NEAR(std::abs(phi[g.idx(i, j)] - 0.25), 0, 1e-3);
  auto vr = vortex_residual(m, g);
  EXPECT_EQ(vr.degenerate, 0u);
  EXPECT_LT(vr.median, 1e-3);
  auto c = sample_map(g, [](cplx) { return PointH3{0, 0, 1}; });
  auto pc = hopf_values(c, g);
  for (auto v : pc) EXPECT_EQ(std::abs(v), 0.0);
}

TEST(Planar, ConstantQLimitIsGeodesic) {
  PolyQD q({cplx(1.0)});
  Grid g = Grid::square(2, 33, [&](cplx) { return 4.0; });
  auto init = build_collapse_initial(q, g, IdealPoint(0.0), IdealPoint::infinity(), 0.5);
  auto before = fit_geodesic(init.map.u);
  EXPECT_GT(before.residual, 0.3);
  FlowConfig cfg;
  cfg.tol_tau = 1e-7;
  auto r = solve_planar_harmonic(init, cfg);
  ASSERT_TRUE(r.state.converged);
  double res = 0;
  for (auto& p : r.state.map.u) res = std::max(res, dist_to_line(p, {IdealPoint(0.0), IdealPoint::infinity()}));
  EXPECT_LT(res, 1e-5);
}

TEST(Planar, FlowConvergesAndStaysPlanar) {
  const auto& c = converged();
  ASSERT_TRUE(c.res.state.converged) << c.res.state.stop_reason;
  EXPECT_LT(c.res.max_planarity_drift, 1e-9);
  const auto& ts = c.res.state.series;
  for (std::size_t k = 1; k < ts.size(); ++k) EXPECT_LE(ts[k].energy, ts[k - 1].energy * (1 + 1e-12));
}

TEST(Planar, LimitHopfMatchesInputFarOut) {
  const auto& c = converged();
  auto phi = hopf_values(c.res.state.map, c.grid);
  double worst = 0;
  for (int j = 1; j < c.grid.ny - 1; ++j)
    for (int i = 1; i < c.grid.nx - 1; ++i) {
      cplx z = c.grid.pos(i, j);
      double r = std::abs(z);
      if (r < 2.0 || r > 2.6) continue;
      worst = std::max(worst, std::abs(phi[c.grid.idx(i, j)] / c.q(z) - 1.0));
    }
  EXPECT_LT(worst, 0.1);
}

TEST(Planar, EnergyDensityApproachesTwo) {
  // worst |e - 2| per half-unit bin of natural distance from the zero decreases outward
  const auto& c = converged();
  auto e = energy_density(c.res.state.map, c.grid);
  std::vector<double> worst(12, 0.0);
  for (int j = 2; j < c.grid.ny - 2; ++j)
    for (int i = 2; i < c.grid.nx - 2; ++i) {
      double d = natural_distance_from_zeros(c.q, c.grid.pos(i, j));
      int b = int(2 * d);
      if (b < 1 || b >= 10) continue;
      worst[b] = std::max(worst[b], std::abs(2 * e[c.grid.idx(i, j)] - 2));
    }
  EXPECT_LT(worst[9], worst[1] / 20);
  EXPECT_LT(worst[5], worst[1] / 5);
}

TEST(Planar, VortexResidualShrinksWithRefinement) {
  PolyQD q({-0.3, 0.3});
  std::vector<double> med;
  for (int n : {21, 41}) {
    Grid g = metric_grid(q, 3.5, n);
    auto init = build_planar_initial(triangle(), q, g);
    FlowConfig cfg;
    cfg.tol_tau = 1e-6;
    auto r = solve_planar_harmonic(init, cfg);
    auto vr = vortex_residual(r.state.map, g);
    med.push_back(vr.median);
  }
  EXPECT_LT(med[1], med[0] / 3);
}
