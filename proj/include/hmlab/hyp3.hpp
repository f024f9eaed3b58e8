#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmlab {

using cplx = std::complex<double>;

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Point of upper half-space, metric (dx^2+dy^2+dz^2)/z^2.
struct PointH3 {
  double x = 0, y = 0, z = 1;
  cplx w() const { return {x, y}; }
  static PointH3 from(cplx w, double z) { return {w.real(), w.imag(), z}; }
  bool valid() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && z > 0; }
};

// Euclidean components of a tangent vector at some point.
struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

// Point of CP^1: finite complex value or infinity.
struct IdealPoint {
  cplx value{0, 0};
  bool inf = false;

  IdealPoint() = default;
  IdealPoint(cplx v) : value(v) {}
  IdealPoint(double v) : value(v, 0) {}
  static IdealPoint infinity() {
    IdealPoint p;
    p.inf = true;
    return p;
  }
  bool valid() const { return inf || (std::isfinite(value.real()) && std::isfinite(value.imag())); }
};

inline bool same_ideal(const IdealPoint& a, const IdealPoint& b, double tol = 1e-12) {
  if (a.inf || b.inf) return a.inf == b.inf;
  return std::abs(a.value - b.value) <= tol * (1 + std::abs(a.value) + std::abs(b.value));
}

// Chordal distance on the Riemann sphere, used to compare ideal points including infinity.
inline double chordal(const IdealPoint& a, const IdealPoint& b) {
  if (a.inf && b.inf) return 0;
  if (a.inf) return 2 / std::sqrt(1 + std::norm(b.value));
  if (b.inf) return 2 / std::sqrt(1 + std::norm(a.value));
  return 2 * std::abs(a.value - b.value) /
         std::sqrt((1 + std::norm(a.value)) * (1 + std::norm(b.value)));
}

struct Mobius {
  cplx a{1, 0}, b{0, 0}, c{0, 0}, d{1, 0};

  static Mobius identity() { return {}; }

  Mobius normalized() const {
    cplx det = a * d - b * c;
    if (std::abs(det) == 0 || !std::isfinite(std::abs(det))) throw InvalidInput("singular Mobius");
    cplx s = std::sqrt(det);
    return {a / s, b / s, c / s, d / s};
  }
  Mobius operator*(const Mobius& o) const {
    return Mobius{a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d}.normalized();
  }
  Mobius inverse() const { return Mobius{d, -b, -c, a}.normalized(); }

  IdealPoint operator()(const IdealPoint& p) const {
    if (p.inf) {
      if (std::abs(c) == 0) return IdealPoint::infinity();
      return IdealPoint(a / c);
    }
    cplx den = c * p.value + d;
    if (std::abs(den) == 0) return IdealPoint::infinity();
    return IdealPoint((a * p.value + b) / den);
  }

  // Poincare extension (quaternion form); assumes ad-bc = 1.
  PointH3 operator()(const PointH3& p) const {
    cplx w = p.w();
    double z2 = p.z * p.z;
    cplx cw = c * w + d;
    double den = std::norm(cw) + std::norm(c) * z2;
    cplx num = (a * w + b) * std::conj(cw) + a * std::conj(c) * z2;
    return PointH3::from(num / den, p.z / den);
  }

  double dist_to_identity() const {
    Mobius n = normalized();
    double e1 = std::abs(n.a - 1.0) + std::abs(n.b) + std::abs(n.c) + std::abs(n.d - 1.0);
    double e2 = std::abs(n.a + 1.0) + std::abs(n.b) + std::abs(n.c) + std::abs(n.d + 1.0);
    return std::min(e1, e2);
  }
};

// Build a Mobius from its action: the unique map with m(0)=p0, m(inf)=pinf, m(1)=p1.
inline Mobius mobius_from_images(const IdealPoint& p0, const IdealPoint& p1, const IdealPoint& pinf) {
  // z -> (A z + B)/(C z + D) with columns (A,C) ~ pinf and (B,D) ~ p0 in homogeneous form.
  auto hom = [](const IdealPoint& p) -> std::array<cplx, 2> {
    if (p.inf) return {cplx(1), cplx(0)};
    return {p.value, cplx(1)};
  };
  auto u = hom(pinf), v = hom(p0), t = hom(p1);
  // scale columns so that u*s + v*r ~ t
  cplx det = u[0] * v[1] - u[1] * v[0];
  if (std::abs(det) == 0) throw InvalidInput("coincident ideal points");
  cplx s = (t[0] * v[1] - t[1] * v[0]) / det;
  cplx r = (u[0] * t[1] - u[1] * t[0]) / det;
  if (std::abs(s) == 0 || std::abs(r) == 0) throw InvalidInput("coincident ideal points");
  return Mobius{u[0] * s, v[0] * r, u[1] * s, v[1] * r}.normalized();
}

// g with g(p1)=0, g(p2)=1, g(p3)=inf.
inline Mobius normalize_triple(const IdealPoint& p1, const IdealPoint& p2, const IdealPoint& p3) {
  if (!p1.valid() || !p2.valid() || !p3.valid()) throw InvalidInput("invalid ideal point");
  if (same_ideal(p1, p2, 0) || same_ideal(p2, p3, 0) || same_ideal(p1, p3, 0))
    throw InvalidInput("normalize_triple: coincident points");
  return mobius_from_images(p1, p2, p3).inverse();
}

// cr = ((p1-p3)(p2-p4)) / ((p1-p4)(p2-p3)); cr(0,1,inf,l) = (l-1)/l.
inline cplx cross_ratio(const IdealPoint& p1, const IdealPoint& p2, const IdealPoint& p3,
                        const IdealPoint& p4) {
  const IdealPoint* p[4] = {&p1, &p2, &p3, &p4};
  for (auto* q : p)
    if (!q->valid()) throw InvalidInput("invalid ideal point");
  // factor (pi - pj); a factor containing infinity cancels against its partner
  auto f = [&](int i, int j) -> cplx {
    if (p[i]->inf || p[j]->inf) return 1.0;
    return p[i]->value - p[j]->value;
  };
  int ninf = 0;
  for (auto* q : p) ninf += q->inf;
  if (ninf > 1) throw InvalidInput("cross_ratio: degenerate quadruple");
  cplx num = f(0, 2) * f(1, 3), den = f(0, 3) * f(1, 2);
  if (std::abs(den) == 0) throw InvalidInput("cross_ratio: degenerate quadruple");
  return num / den;
}

// Hyperbolic distance, stable for nearby points.
inline double dist(const PointH3& p, const PointH3& q) {
  if (!p.valid() || !q.valid()) throw InvalidInput("dist: invalid point");
  double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
  double e = std::sqrt(dx * dx + dy * dy + dz * dz);
  return 2 * std::asinh(e / (2 * std::sqrt(p.z * q.z)));
}

// Hyperbolic norm of a tangent vector at p.
inline double hnorm(const PointH3& p, const Vec3& v) { return v.norm() / p.z; }

// Exponential map; v in Euclidean coordinates at p.
inline PointH3 exp_map(const PointH3& p, const Vec3& v) {
  double s = v.norm() / p.z;
  if (s == 0) return p;
  double ca = v.z / v.norm();
  double ep = std::exp(s), em = 1 / ep;
  double sh = s < 1e-3 ? s * (1 + s * s / 6) : 0.5 * (ep - em);
  // D = cosh s - sinh s cos(alpha), written without cancellation
  double D = em * 0.5 * (1 + ca) + ep * 0.5 * (1 - ca);
  double k = sh / (s * p.z);
  double qx = k * v.x, qy = k * v.y;
  return {p.x + p.z * qx / D, p.y + p.z * qy / D, p.z / D};
}

// Inverse of exp_map.
inline Vec3 log_map(const PointH3& p, const PointH3& q) {
  double wx = (q.x - p.x) / p.z, wy = (q.y - p.y) / p.z, zq = q.z / p.z;
  double r2 = wx * wx + wy * wy;
  double Q1 = (r2 + (zq - 1) * (zq + 1)) / (2 * zq);
  double Q2 = wx / zq, Q3 = wy / zq;
  double d = dist(p, q);
  if (d == 0) return {};
  double f = d / std::sinh(d);
  return Vec3{Q2, Q3, Q1} * (f * p.z);
}

// Point at fraction s along the geodesic from p to q.
inline PointH3 geodesic_point(const PointH3& p, const PointH3& q, double s) {
  if (s == 0) return p;
  if (s == 1) return q;
  return exp_map(p, log_map(p, q) * s);
}

struct GeodesicLine {
  IdealPoint p, q;
};

// Mobius sending the endpoints of the line to 0 and infinity.
inline Mobius axis_normalizer(const GeodesicLine& l) {
  if (!l.p.valid() || !l.q.valid()) throw InvalidInput("invalid axis");
  if (chordal(l.p, l.q) == 0) throw InvalidInput("degenerate axis: equal endpoints");
  if (l.q.inf) return Mobius{1, -l.p.value, 0, 1}.normalized();
  if (l.p.inf) return Mobius{0, 1, 1, -l.q.value}.normalized();
  return Mobius{1, -l.p.value, 1, -l.q.value}.normalized();
}

inline double dist_to_line(const PointH3& p, const GeodesicLine& l) {
  PointH3 r = axis_normalizer(l)(p);
  return std::asinh(std::abs(r.w()) / r.z);
}

// Loxodromic along the axis with complex length (translation + i rotation).
inline Mobius loxodromic_about_axis(const GeodesicLine& axis, cplx length) {
  Mobius n = axis_normalizer(axis);
  cplx h = std::exp(length / 2.0);
  return n.inverse() * Mobius{h, 0, 0, 1.0 / h} * n;
}

inline Mobius elliptic_about_axis(const GeodesicLine& axis, double angle) {
  return loxodromic_about_axis(axis, cplx(0, angle));
}

// Complex length of a Mobius fixing both endpoints of the axis.
inline cplx complex_length(const Mobius& g, const GeodesicLine& axis) {
  Mobius n = axis_normalizer(axis);
  Mobius c = n * g * n.inverse();
  cplx l = 2.0 * std::log(c.a);
  double im = std::remainder(l.imag(), 2 * M_PI);
  if (im <= -M_PI) im += 2 * M_PI;
  return {l.real(), im};
}

// Geodesic plane: hemisphere over a circle, or vertical plane over a line.
// inside_selected chooses the half-space H: for a hemisphere, the region under it (true)
// or above it; for a vertical plane, the side where cross(dir, w-point) > 0 (true).
struct GeodesicPlane {
  bool vertical = false;
  cplx center{0, 0};
  double radius = 1;
  cplx point{0, 0};
  cplx dir{1, 0};
  bool inside_selected = true;
};

// Signed distance from p to the selected half-space (positive outside it).
inline double signed_plane_dist(const PointH3& p, const GeodesicPlane& pl) {
  double s;
  if (!pl.vertical) {
    double r2 = std::norm(p.w() - pl.center) + p.z * p.z;
    s = std::asinh((r2 - pl.radius * pl.radius) / (2 * pl.radius * p.z));
    return pl.inside_selected ? s : -s;
  }
  double delta = std::imag(std::conj(pl.dir) * (p.w() - pl.point));
  s = std::asinh(-delta / p.z);
  return pl.inside_selected ? s : -s;
}

// Signed side of an ideal point relative to the plane's boundary circle (negative: selected side).
inline double ideal_side(const IdealPoint& v, const GeodesicPlane& pl) {
  if (!pl.vertical) {
    if (v.inf) return pl.inside_selected ? 1.0 : -1.0;
    double s = std::norm(v.value - pl.center) - pl.radius * pl.radius;
    return pl.inside_selected ? s : -s;
  }
  if (v.inf) return 0.0;
  double delta = std::imag(std::conj(pl.dir) * (v.value - pl.point));
  return pl.inside_selected ? -delta : delta;
}

inline std::array<double, 3> to_sphere(const IdealPoint& v) {
  if (v.inf) return {0, 0, 1};
  double n = std::norm(v.value);
  return {2 * v.value.real() / (n + 1), 2 * v.value.imag() / (n + 1), (n - 1) / (n + 1)};
}

namespace detail {
inline std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Plane n.X = h through sphere points, converted to a geodesic plane; selected side n.X <= h.
inline GeodesicPlane plane_from_klein(std::array<double, 3> n, double h) {
  GeodesicPlane g;
  double k = n[2] - h;
  if (std::abs(k) < 1e-12) {
    // line 2 n1 u + 2 n2 v = 2h; selected side: n1 u + n2 v <= h
    cplx nn(n[0], n[1]);
    double len = std::abs(nn);
    g.vertical = true;
    g.point = nn * (h / (len * len));
    g.dir = cplx(0, 1) * nn / len;  // rotate normal by +90 degrees
    // cross(dir, w - point) = Im(conj(dir)(w-point)); with dir = i n/|n| this equals -n.(w-point)/|n|
    g.inside_selected = true;
    return g;
  }
  cplx c = -cplx(n[0], n[1]) / k;
  double r2 = (n[2] + h) / k + std::norm(c);
  g.center = c;
  g.radius = std::sqrt(std::max(r2, 0.0));
  // n.S(w) - h has the sign of k (|w|^2 - ...) = k (|w-c|^2 - r^2)
  g.inside_selected = k > 0;
  return g;
}
}  // namespace detail

// Supporting half-spaces of the convex hull of ideal points (Klein-model reduction).
inline std::vector<GeodesicPlane> hull_faces(const std::vector<IdealPoint>& verts) {
  std::vector<IdealPoint> pts;
  for (auto& v : verts) {
    if (!v.valid()) throw InvalidInput("hull_faces: invalid point");
    bool dup = false;
    for (auto& u : pts) dup = dup || chordal(u, v) < 1e-12;
    if (!dup) pts.push_back(v);
  }
  if (pts.size() < 3) throw InvalidInput("hull_faces: fewer than 3 distinct points");
  std::vector<std::array<double, 3>> s;
  for (auto& p : pts) s.push_back(to_sphere(p));
  const double eps = 1e-10;
  std::vector<std::pair<std::array<double, 3>, double>> found;
  size_t m = s.size();
  bool coplanar = true;
  std::array<double, 3> n0{};
  double h0 = 0;
  {
    auto nn = detail::cross({s[1][0] - s[0][0], s[1][1] - s[0][1], s[1][2] - s[0][2]},
                            {s[2][0] - s[0][0], s[2][1] - s[0][1], s[2][2] - s[0][2]});
    double l = std::sqrt(detail::dot(nn, nn));
    for (auto& x : nn) x /= l;
    n0 = nn;
    h0 = detail::dot(nn, s[0]);
    for (size_t i = 3; i < m; ++i) coplanar = coplanar && std::abs(detail::dot(nn, s[i]) - h0) < eps;
  }
  std::vector<GeodesicPlane> out;
  if (coplanar) {
    auto a = detail::plane_from_klein(n0, h0);
    auto b = a;
    b.inside_selected = !a.inside_selected;
    out.push_back(a);
    out.push_back(b);
    return out;
  }
  for (size_t i = 0; i < m; ++i)
    for (size_t j = i + 1; j < m; ++j)
      for (size_t k = j + 1; k < m; ++k) {
        auto nn = detail::cross({s[j][0] - s[i][0], s[j][1] - s[i][1], s[j][2] - s[i][2]},
                                {s[k][0] - s[i][0], s[k][1] - s[i][1], s[k][2] - s[i][2]});
        double l = std::sqrt(detail::dot(nn, nn));
        if (l < 1e-14) continue;
        for (auto& x : nn) x /= l;
        double h = detail::dot(nn, s[i]);
        int pos = 0, neg = 0;
        for (size_t t = 0; t < m; ++t) {
          double d = detail::dot(nn, s[t]) - h;
          pos += d > eps;
          neg += d < -eps;
        }
        if (pos && neg) continue;
        if (pos) {
          for (auto& x : nn) x = -x;
          h = -h;
        }
        bool dup = false;
        for (auto& f : found)
          dup = dup || (std::abs(f.second - h) < 1e-9 && std::abs(detail::dot(f.first, nn) - 1) < 1e-9);
        if (dup) continue;
        found.push_back({nn, h});
        out.push_back(detail::plane_from_klein(nn, h));
      }
  return out;
}

inline double hull_gauge(const PointH3& p, const std::vector<GeodesicPlane>& faces) {
  if (faces.empty()) throw InvalidInput("hull_gauge: empty face list");
  double g = 0;
  for (auto& f : faces) g = std::max(g, signed_plane_dist(p, f));
  return g;
}

// Discrete geodesic curvature at interior samples (three-point covariant differencing).
inline std::vector<double> polyline_curvature(const std::vector<PointH3>& pts) {
  if (pts.size() < 3) throw InvalidInput("polyline_curvature: need at least 3 points");
  for (size_t i = 0; i + 1 < pts.size(); ++i)
    if (dist(pts[i], pts[i + 1]) == 0) throw InvalidInput("polyline_curvature: duplicate consecutive points");
  std::vector<double> k;
  for (size_t i = 1; i + 1 < pts.size(); ++i) {
    const PointH3& p = pts[i];
    Vec3 vm = log_map(p, pts[i - 1]) * (1 / p.z), vp = log_map(p, pts[i + 1]) * (1 / p.z);
    double a = vm.norm(), b = vp.norm();
    Vec3 acc = (vp * a + vm * b) * (2 / (a * b * (a + b)));
    Vec3 t = vp * (1 / b) - vm * (1 / a);
    t = t * (1 / t.norm());
    Vec3 nrm = acc - t * acc.dot(t);
    k.push_back(nrm.norm());
  }
  return k;
}

// Ideal endpoints of the geodesic through two distinct points.
inline GeodesicLine line_through(const PointH3& p, const PointH3& q) {
  cplx dw = (q.w() - p.w()) / p.z;
  double zq = q.z / p.z;
  double L = std::abs(dw);
  if (L < 1e-15 * (1 + zq)) {
    if (zq > 1) return {IdealPoint(p.w()), IdealPoint::infinity()};
    return {IdealPoint::infinity(), IdealPoint(p.w())};
  }
  cplx e = dw / L;
  double c0 = (L * L + zq * zq - 1) / (2 * L);
  double r = std::hypot(c0, 1.0);
  double lo, hi;  // lo before p, hi beyond q along e
  if (c0 >= 0) {
    hi = c0 + r;
    lo = -1 / hi;
  } else {
    lo = c0 - r;
    hi = -1 / lo;
  }
  return {IdealPoint(p.w() + p.z * lo * e), IdealPoint(p.w() + p.z * hi * e)};
}

struct GeodesicFit {
  GeodesicLine line;
  double residual = 0;
};

inline GeodesicFit fit_geodesic(const std::vector<PointH3>& pts) {
  if (pts.size() < 2) throw InvalidInput("fit_geodesic: need at least 2 points");
  if (dist(pts.front(), pts.back()) == 0) throw InvalidInput("fit_geodesic: coincident points");
  GeodesicFit f;
  f.line = line_through(pts.front(), pts.back());
  for (auto& p : pts) f.residual = std::max(f.residual, dist_to_line(p, f.line));
  return f;
}

}  // namespace hmlab
