#pragma once

#include <map>
#include <optional>
#include <set>

#include "hmlab/hyp3.hpp"

namespace hmlab {

struct TwistedIdealPolygon {
  std::vector<IdealPoint> vertices;

  int size() const { return int(vertices.size()); }
  const IdealPoint& operator[](int i) const {
    int n = size();
    return vertices[((i % n) + n) % n];
  }
  GeodesicLine side(int i) const { return {(*this)[i], (*this)[i + 1]}; }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;
};

inline ValidationReport validate(const TwistedIdealPolygon& P) {
  ValidationReport r;
  int n = P.size();
  std::vector<IdealPoint> distinct;
  for (auto& v : P.vertices) {
    if (!v.valid()) {
      r.ok = false;
      r.violations.push_back("invalid vertex (non-finite)");
      return r;
    }
    bool seen = false;
    for (auto& u : distinct) seen = seen || chordal(u, v) < 1e-12;
    if (!seen) distinct.push_back(v);
  }
  if (distinct.size() < 3) {
    r.ok = false;
    r.violations.push_back("condition (i): fewer than three distinct vertices");
  }
  for (int i = 0; i < n; ++i)
    if (chordal(P[i], P[i + 1]) < 1e-12) {
      r.ok = false;
      r.violations.push_back("condition (ii): vertices " + std::to_string(i) + " and " +
                             std::to_string((i + 1) % n) + " coincide");
    }
  return r;
}

using Diagonal = std::pair<int, int>;

inline std::vector<Diagonal> fan_triangulation(int n) {
  std::vector<Diagonal> d;
  for (int j = 2; j <= n - 2; ++j) d.push_back({0, j});
  return d;
}

namespace detail {
inline bool crosses(Diagonal a, Diagonal b) {
  auto [p, q] = a;
  auto [r, s] = b;
  return (p < r && r < q && q < s) || (r < p && p < s && s < q);
}

struct Triangulation {
  int n = 0;
  std::vector<Diagonal> diags;
  std::set<Diagonal> edges;  // sides and diagonals, normalized (lo, hi)

  bool edge(int a, int b) const { return edges.count({std::min(a, b), std::max(a, b)}) > 0; }

  Triangulation(int nn, std::vector<Diagonal> d) : n(nn) {
    if (int(d.size()) != n - 3) throw InvalidInput("triangulation: need n-3 diagonals");
    for (auto& x : d) {
      if (x.first > x.second) std::swap(x.first, x.second);
      if (x.first < 0 || x.second >= n || x.second - x.first < 2 || (x.first == 0 && x.second == n - 1))
        throw InvalidInput("triangulation: invalid diagonal");
    }
    for (size_t i = 0; i < d.size(); ++i)
      for (size_t j = i + 1; j < d.size(); ++j) {
        if (d[i] == d[j]) throw InvalidInput("triangulation: repeated diagonal");
        if (crosses(d[i], d[j])) throw InvalidInput("triangulation: crossing diagonals");
      }
    diags = d;
    for (int i = 0; i < n; ++i) edges.insert({std::min(i, (i + 1) % n), std::max(i, (i + 1) % n)});
    for (auto& x : d) edges.insert(x);
  }

  // apexes of the two triangles on a diagonal (i<j): k inside (i,j), l outside
  std::pair<int, int> apexes(Diagonal dg) const {
    auto [i, j] = dg;
    int k = -1, l = -1;
    for (int t = 0; t < n; ++t) {
      if (t == i || t == j || !edge(i, t) || !edge(t, j)) continue;
      if (t > i && t < j) k = t;
      else l = t;
    }
    if (k < 0 || l < 0) throw InvalidInput("triangulation: diagonal without two triangles");
    return {k, l};
  }

  // triangle containing side (0,1): apex index
  int base_apex() const {
    for (int t = 2; t < n; ++t)
      if (edge(0, t) && edge(1, t)) return t;
    throw InvalidInput("triangulation: no base triangle");
  }
};

// Shear-bend parameter of a diagonal (i,j) with apexes k, l: c = -cr(v_l, v_k, v_i, v_j),
// which is -l/k once v_i -> 0 and v_j -> inf. Planar quadrilaterals give c > 0, and rotating
// the l-side about the diagonal by theta multiplies c by e^{i theta}.
inline cplx shear_bend(const IdealPoint& vi, const IdealPoint& vk, const IdealPoint& vj, const IdealPoint& vl) {
  return -cross_ratio(vl, vk, vi, vj);
}

inline void check_param(cplx c) {
  if (std::abs(c) == 0 || !std::isfinite(std::abs(c))) throw InvalidInput("shear-bend parameter is 0 or infinite");
  if (std::abs(c + 1.0) < 1e-14) throw InvalidInput("shear-bend parameter -1 gives coincident apexes");
}

// l from (i, k, j) and c
inline IdealPoint solve_outer(const IdealPoint& vi, const IdealPoint& vk, const IdealPoint& vj, cplx c) {
  check_param(c);
  return normalize_triple(vi, vk, vj).inverse()(IdealPoint(-c));
}

// k from (i, l, j) and c
inline IdealPoint solve_inner(const IdealPoint& vi, const IdealPoint& vl, const IdealPoint& vj, cplx c) {
  check_param(c);
  return normalize_triple(vi, vl, vj).inverse()(IdealPoint(-1.0 / c));
}
}  // namespace detail

struct ShearBendParams {
  std::vector<Diagonal> triangulation;
  std::vector<cplx> values;
  int n = 0;
};

inline ShearBendParams to_params(const TwistedIdealPolygon& P, std::vector<Diagonal> tri = {}) {
  int n = P.size();
  auto rep = validate(P);
  if (!rep.ok) throw InvalidInput("to_params: " + rep.violations.front());
  if (tri.empty() && n > 3) tri = fan_triangulation(n);
  detail::Triangulation T(n, tri);
  ShearBendParams s;
  s.n = n;
  s.triangulation = T.diags;
  for (auto& dg : T.diags) {
    auto [k, l] = T.apexes(dg);
    s.values.push_back(detail::shear_bend(P[dg.first], P[k], P[dg.second], P[l]));
  }
  return s;
}

// Polygon from parameters, normalized so that vertices 0,1,2 sit at 0,1,inf.
inline TwistedIdealPolygon from_params(const ShearBendParams& s) {
  int n = s.n;
  if (n < 3) throw InvalidInput("from_params: n < 3");
  detail::Triangulation T(n, s.triangulation);
  std::vector<std::optional<IdealPoint>> v(n);
  int t = T.base_apex();
  v[0] = IdealPoint(0.0);
  v[1] = IdealPoint(1.0);
  v[t] = IdealPoint::infinity();
  bool progress = true;
  while (progress) {
    progress = false;
    for (size_t d = 0; d < T.diags.size(); ++d) {
      auto [i, j] = T.diags[d];
      auto [k, l] = T.apexes(T.diags[d]);
      if (!v[i] || !v[j]) continue;
      if (v[k] && !v[l]) {
        v[l] = detail::solve_outer(*v[i], *v[k], *v[j], s.values[d]);
        progress = true;
      } else if (!v[k] && v[l]) {
        v[k] = detail::solve_inner(*v[i], *v[l], *v[j], s.values[d]);
        progress = true;
      }
    }
  }
  TwistedIdealPolygon P;
  for (auto& x : v) {
    if (!x) throw InvalidInput("from_params: triangulation does not reach all vertices");
    P.vertices.push_back(*x);
  }
  Mobius g = normalize_triple(P[0], P[1], P[2]);
  for (auto& x : P.vertices) x = g(x);
  P.vertices[2] = IdealPoint::infinity();
  return P;
}

inline TwistedIdealPolygon normalized(const TwistedIdealPolygon& P) {
  Mobius g = normalize_triple(P[0], P[1], P[2]);
  TwistedIdealPolygon Q;
  for (auto& x : P.vertices) Q.vertices.push_back(g(x));
  return Q;
}

inline double polygon_distance(const TwistedIdealPolygon& a, const TwistedIdealPolygon& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double d = 0;
  for (int i = 0; i < a.size(); ++i) d = std::max(d, chordal(a[i], b[i]));
  return d;
}

struct BendingData {
  int n = 0;
  std::vector<Diagonal> diagonals;
  std::vector<double> angles;      // in (-pi, pi]
  std::vector<Mobius> rotations;   // about the diagonals of the planar polygon
  std::vector<GeodesicLine> axes;  // oriented from the lower to the higher vertex index
  std::vector<double> base_side;   // sign of the base triangle relative to each axis
  int base_apex = 2;
  PointH3 base_point;              // center of the base triangle
};

// Center of the ideal triangle (a,b,c).
inline PointH3 triangle_center(const IdealPoint& a, const IdealPoint& b, const IdealPoint& c) {
  Mobius g = normalize_triple(a, b, c).inverse();
  return g(PointH3{0.5, 0, std::sqrt(3.0) / 2});
}

inline double wrap_angle(double a) {
  double r = std::remainder(a, 2 * M_PI);
  if (r <= -M_PI) r += 2 * M_PI;
  return r;
}

// Rotation applied to the side of diagonal (i,j) away from the base triangle, chosen so that
// bending by +theta multiplies the diagonal's parameter by e^{i theta}. The base triangle holds
// vertices 0 and 1, so for i = 0 the far side is the outer apex side and otherwise the inner one.
inline Mobius bending_rotation(const GeodesicLine& axis, double theta, bool far_is_outer = true) {
  return elliptic_about_axis(axis, far_is_outer ? theta : -theta);
}

inline BendingData make_bending(const TwistedIdealPolygon& P0, std::vector<Diagonal> diags,
                                std::vector<double> angles) {
  BendingData b;
  b.n = P0.size();
  detail::Triangulation T(b.n, diags);
  b.diagonals = T.diags;
  b.base_apex = T.base_apex();
  b.base_point = triangle_center(P0[0], P0[1], P0[b.base_apex]);
  b.base_point.y = 0;
  for (size_t d = 0; d < T.diags.size(); ++d) {
    double th = wrap_angle(angles[d]);
    b.angles.push_back(th);
    GeodesicLine ax{P0[T.diags[d].first], P0[T.diags[d].second]};
    b.axes.push_back(ax);
    b.rotations.push_back(bending_rotation(ax, th, T.diags[d].first == 0));
    b.base_side.push_back(axis_normalizer(ax)(b.base_point).x);
  }
  return b;
}

struct Straightened {
  TwistedIdealPolygon P0;
  BendingData bending;
  ShearBendParams params;
};

inline Straightened straighten(const TwistedIdealPolygon& P, std::vector<Diagonal> tri = {}) {
  Straightened s;
  s.params = to_params(P, tri);
  ShearBendParams planar = s.params;
  std::vector<double> ang;
  for (auto& c : planar.values) {
    ang.push_back(std::arg(c));
    c = std::abs(c);
  }
  s.P0 = from_params(planar);
  // all vertices real or infinite: drop round-off imaginary parts
  for (auto& v : s.P0.vertices)
    if (!v.inf) v.value = cplx(v.value.real(), 0);
  s.bending = make_bending(s.P0, planar.triangulation, ang);
  return s;
}

inline bool is_planar(const TwistedIdealPolygon& P, double tol = 1e-9) {
  Mobius g = normalize_triple(P[0], P[1], P[2]);
  for (auto& v : P.vertices) {
    IdealPoint w = g(v);
    if (!w.inf && std::abs(w.value.imag()) > tol * (1 + std::abs(w.value))) return false;
  }
  return true;
}

namespace detail {
// Side of a planar point relative to a diagonal: sign of the real part after sending the axis to (0, inf).
inline double diag_side(const PointH3& p, const GeodesicLine& axis) {
  PointH3 r = axis_normalizer(axis)(p);
  return r.x / r.z;
}
inline double diag_side(const IdealPoint& v, const GeodesicLine& axis) {
  IdealPoint r = axis_normalizer(axis)(v);
  if (r.inf) return 0;
  return r.value.real();
}

// triangle isometries: B(T) for each triangle, triangles keyed by sorted vertex triple
struct RegionTree {
  std::vector<std::array<int, 3>> tris;
  std::vector<Mobius> iso;
};

inline RegionTree region_tree(const BendingData& b) {
  Triangulation T(b.n, b.diagonals);
  RegionTree rt;
  std::array<int, 3> base{0, 1, b.base_apex};
  std::sort(base.begin(), base.end());
  rt.tris.push_back(base);
  rt.iso.push_back(Mobius::identity());
  for (size_t q = 0; q < rt.tris.size(); ++q) {
    auto tri = rt.tris[q];
    for (size_t d = 0; d < b.diagonals.size(); ++d) {
      auto [i, j] = b.diagonals[d];
      auto [k, l] = T.apexes(b.diagonals[d]);
      std::array<int, 3> t1{i, j, k}, t2{i, j, l};
      std::sort(t1.begin(), t1.end());
      std::sort(t2.begin(), t2.end());
      std::array<int, 3> other;
      if (tri == t1) other = t2;
      else if (tri == t2) other = t1;
      else continue;
      if (std::find(rt.tris.begin(), rt.tris.end(), other) != rt.tris.end()) continue;
      rt.tris.push_back(other);
      rt.iso.push_back(rt.iso[q] * b.rotations[d]);
    }
  }
  return rt;
}
}  // namespace detail

inline TwistedIdealPolygon bend(const TwistedIdealPolygon& P0, const BendingData& data) {
  if (!is_planar(P0)) throw InvalidInput("bend: polygon is not planar");
  auto rt = detail::region_tree(data);
  TwistedIdealPolygon P = P0;
  std::vector<bool> done(P0.size(), false);
  for (size_t t = 0; t < rt.tris.size(); ++t)
    for (int v : rt.tris[t])
      if (!done[v]) {
        P.vertices[v] = rt.iso[t](P0[v]);
        done[v] = true;
      }
  return P;
}

// Ordered product of rotations for the diagonals crossed by the segment [x0, x];
// crossing away from the base triangle contributes e_j, crossing back contributes its inverse.
inline Mobius bending_cocycle(const BendingData& data, const PointH3& x0, const PointH3& x) {
  std::vector<std::pair<double, Mobius>> hits;
  for (size_t d = 0; d < data.diagonals.size(); ++d) {
    const auto& ax = data.axes[d];
    double s0 = detail::diag_side(x0, ax), s1 = detail::diag_side(x, ax);
    if (std::abs(s0) < 1e-12 || std::abs(s1) < 1e-12) throw InvalidInput("bending_cocycle: endpoint on a diagonal");
    if ((s0 > 0) == (s1 > 0)) continue;
    double lo = 0, hi = 1;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      double sm = detail::diag_side(geodesic_point(x0, x, mid), ax);
      if ((sm > 0) == (s0 > 0)) lo = mid;
      else hi = mid;
    }
    bool away = (s0 > 0) == (data.base_side[d] > 0);
    hits.push_back({0.5 * (lo + hi), away ? data.rotations[d] : data.rotations[d].inverse()});
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Mobius B = Mobius::identity();
  for (auto& h : hits) B = B * h.second;
  return B;
}

struct CuspChart {
  int index = 0;
  Mobius m;  // vertex -> inf, previous vertex -> -1, next vertex -> +1
  double t0 = 1;
};

inline CuspChart cusp_chart(const TwistedIdealPolygon& P, int i, double t0 = 1) {
  CuspChart c;
  c.index = i;
  c.t0 = t0;
  Mobius A{2, -1, 0, 1};
  c.m = A.normalized() * normalize_triple(P[i - 1], P[i + 1], P[i]);
  return c;
}

}  // namespace hmlab
