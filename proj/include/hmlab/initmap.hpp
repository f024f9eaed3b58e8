#pragma once
// Initial map u0 = smoothed pleating of the planar harmonic map, and the closed-form tension
// of rotation-interpolated maps.
#include "hmlab/planar.hpp"

namespace hmlab {

// Smoothstep profile from 0 to theta0 over [a, b]; degree 5 (C^2) or 7 (C^3).
struct ThetaProfile {
  double a = 0, b = 1, theta0 = 0;
  int degree = 5;

  double t(double x) const { return std::clamp((x - a) / (b - a), 0.0, 1.0); }
  bool inside(double x) const { return x > a && x < b; }
  double operator()(double x) const {
    double s = t(x);
    if (degree == 7) return theta0 * s * s * s * s * (35 - 84 * s + 70 * s * s - 20 * s * s * s);
    return theta0 * s * s * s * (10 - 15 * s + 6 * s * s);
  }
  double d1(double x) const {
    if (!inside(x)) return 0;
    double s = t(x), k = theta0 / (b - a);
    if (degree == 7) return k * 140 * s * s * s * (1 - s) * (1 - s) * (1 - s);
    return k * 30 * s * s * (1 - s) * (1 - s);
  }
  double d2(double x) const {
    if (!inside(x)) return 0;
    double s = t(x), k = theta0 / ((b - a) * (b - a));
    if (degree == 7) return k * 420 * s * s * (1 - s) * (1 - s) * (1 - 2 * s);
    return k * 60 * s * (1 - s) * (1 - 2 * s);
  }
};

inline ThetaProfile theta_profile(double a, double b, double theta0, int degree = 5) {
  if (!(b > a)) throw InvalidInput("theta_profile: empty interval");
  if (degree != 5 && degree != 7) throw InvalidInput("theta_profile: degree must be 5 or 7");
  return {a, b, theta0, degree};
}

// Tension of u = (f cos th(x), f sin th(x), g) for a harmonic (f, 0, g), flat domain metric.
inline Vec3 interp_tension_closed_form(double f, double g, double f_x, double g_x, const ThetaProfile& p, double x) {
  if (x < p.a || x > p.b) throw InvalidInput("interp_tension_closed_form: point outside the strip");
  double th = p(x), t1 = p.d1(x), t2 = p.d2(x);
  double c = std::cos(th), s = std::sin(th);
  double common = 2 * f * g_x / g - 2 * f_x;
  return {-f * (c * t1 * t1 + t2 * s) + common * s * t1, f * (c * t2 - s * t1 * t1) - common * c * t1,
          f * f * t1 * t1 / g};
}

// Piecewise-isometric bending of the plane y=0 and its smoothing near the diagonals.
struct Pleating {
  BendingData bending;
  TwistedIdealPolygon P0;
  detail::RegionTree tree;
  std::vector<std::vector<double>> tri_signs;  // side of each triangle w.r.t. each diagonal
  std::vector<int> near_tri;                   // triangle on the base side of each diagonal
  std::vector<Mobius> normalizers;             // diagonal -> (0, inf)
  std::vector<Mobius> cusp;                    // per vertex: v -> inf, neighbours -> -1, +1
  std::vector<double> delta;                   // tube half-width per diagonal
  std::vector<ThetaProfile> profiles;          // over [-delta, delta] in the tube coordinate

  int triangles() const { return int(tree.tris.size()); }

  // sinh of the signed distance to diagonal d, positive on the far side from the base.
  double far_sinh(int d, const PointH3& p) const {
    PointH3 r = normalizers[d](p);
    double s = std::copysign(std::hypot(r.x, r.y), r.x) / r.z;
    return bending.base_side[d] > 0 ? -s : s;
  }
  // Transverse coordinate: the cusp-chart offset from the diagonal near either endpoint.
  double chi(int d, const PointH3& p) const {
    auto [i, j] = bending.diagonals[d];
    return far_sinh(d, p) * (cusp[i](p).z + cusp[j](p).z);
  }
  int locate(const PointH3& p) const {
    std::vector<double> sg(bending.diagonals.size());
    for (size_t d = 0; d < sg.size(); ++d) sg[d] = detail::diag_side(p, bending.axes[d]);
    for (int t = 0; t < triangles(); ++t) {
      bool ok = true;
      for (size_t d = 0; d < sg.size() && ok; ++d) ok = (sg[d] > 0) == (tri_signs[t][d] > 0);
      if (ok) return t;
    }
    throw NumericalFailure("pleating: point not in any triangle");
  }
  // Exact pleating map Phi.
  PointH3 sharp(const PointH3& p, int* tri = nullptr) const {
    int t = locate(p);
    if (tri) *tri = t;
    return tree.iso[t](p);
  }
  // Smoothed pleating; label is the triangle index, or triangles() + d inside the tube of d.
  PointH3 smooth(const PointH3& p, int* label = nullptr) const {
    for (size_t d = 0; d < delta.size(); ++d) {
      if (std::abs(far_sinh(int(d), p)) >= 1) continue;  // away from the diagonal
      double c = chi(int(d), p);
      if (std::abs(c) < delta[d]) {
        if (label) *label = triangles() + int(d);
        double th = profiles[d](c);
        Mobius e = bending_rotation(bending.axes[d], th, bending.diagonals[d].first == 0);
        return (tree.iso[near_tri[d]] * e)(p);
      }
    }
    return sharp(p, label);
  }
};

// Tube half-widths default to `beta` times the smallest cusp-chart gap at the diagonal's ends.
inline Pleating make_pleating(const TwistedIdealPolygon& P0, const BendingData& b, int degree = 5,
                              double beta = 0.3) {
  Pleating pl;
  pl.bending = b;
  pl.P0 = P0;
  pl.tree = detail::region_tree(b);
  int n = P0.size();
  size_t D = b.diagonals.size();
  for (int v = 0; v < n; ++v) pl.cusp.push_back(cusp_chart(P0, v).m);
  for (size_t d = 0; d < D; ++d) pl.normalizers.push_back(axis_normalizer(b.axes[d]));
  for (auto& tri : pl.tree.tris) {
    PointH3 c = triangle_center(P0[tri[0]], P0[tri[1]], P0[tri[2]]);
    c.y = 0;
    std::vector<double> sg;
    for (size_t d = 0; d < D; ++d) sg.push_back(detail::diag_side(c, b.axes[d]));
    pl.tri_signs.push_back(sg);
  }
  for (size_t d = 0; d < D; ++d) {
    auto [i, j] = b.diagonals[d];
    int best = -1;
    for (int t = 0; t < pl.triangles(); ++t) {
      auto& tr = pl.tree.tris[t];
      bool has = std::count(tr.begin(), tr.end(), i) && std::count(tr.begin(), tr.end(), j);
      if (has && (best < 0 || t < best)) best = t;
    }
    pl.near_tri.push_back(best);
    // positions of all chords from each endpoint in that endpoint's cusp chart
    double gap = 2;
    for (int v : {i, j}) {
      std::vector<double> xs = {-1, 1};
      for (size_t e = 0; e < D; ++e) {
        auto [a, c] = b.diagonals[e];
        if (a != v && c != v) continue;
        IdealPoint w = pl.cusp[v](P0[a == v ? c : a]);
        xs.push_back(w.value.real());
      }
      IdealPoint self = pl.cusp[v](P0[i == v ? j : i]);
      for (double x : xs)
        if (std::abs(x - self.value.real()) > 1e-12) gap = std::min(gap, std::abs(x - self.value.real()));
    }
    pl.delta.push_back(beta * gap);
    pl.profiles.push_back(theta_profile(-pl.delta.back(), pl.delta.back(), b.angles[d], degree));
  }
  return pl;
}

struct InitialMap {
  DiscreteMap map;
  std::vector<int> label;  // Pleating::smooth label per node
  int tube_nodes = 0;
};

// u0 = smoothed pleating of h, node by node; boundary nodes included (Dirichlet data).
inline InitialMap build_initial_map(const DiscreteMap& h, const Pleating& pl) {
  InitialMap im;
  im.map.u.resize(h.u.size());
  im.label.resize(h.u.size());
  for (std::size_t k = 0; k < h.u.size(); ++k) {
    if (std::abs(h.u[k].y) > 1e-9) throw InvalidInput("build_initial_map: h is not planar");
    im.map.u[k] = pl.smooth(h.u[k], &im.label[k]);
    if (im.label[k] >= pl.triangles()) ++im.tube_nodes;
  }
  return im;
}

}  // namespace hmlab
