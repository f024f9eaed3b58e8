#pragma once

#include <Eigen/Dense>

#include "hmlab/hyp3.hpp"

namespace hmlab {

// q(z) = sum coeffs[k] z^k.
struct PolyQD {
  std::vector<cplx> coeffs;
  bool four_q = true;  // metric 4|q| (natural coordinate of 4q) rather than |q|

  PolyQD() = default;
  explicit PolyQD(std::vector<cplx> c, bool fourq = true) : coeffs(std::move(c)), four_q(fourq) {
    while (coeffs.size() > 1 && std::abs(coeffs.back()) == 0) coeffs.pop_back();
    if (coeffs.empty() || std::abs(coeffs.back()) == 0) throw InvalidInput("PolyQD: zero polynomial");
  }
  int degree() const { return int(coeffs.size()) - 1; }
  cplx lead() const { return coeffs.back(); }
  double scale() const { return four_q ? 4.0 : 1.0; }

  cplx operator()(cplx z) const {
    cplx r = 0;
    for (size_t k = coeffs.size(); k-- > 0;) r = r * z + coeffs[k];
    return r;
  }
  cplx deriv(cplx z) const {
    cplx r = 0;
    for (size_t k = coeffs.size(); k-- > 1;) r = r * z + double(k) * coeffs[k];
    return r;
  }
  double max_coeff() const {
    double m = 0;
    for (auto& c : coeffs) m = std::max(m, std::abs(c));
    return m;
  }
  PolyQD shifted(cplx s) const {  // q(z + s)
    int m = degree();
    std::vector<cplx> out(m + 1, 0.0);
    // Taylor shift by repeated synthetic division
    std::vector<cplx> c = coeffs;
    for (int k = 0; k <= m; ++k) {
      for (int j = m - 1; j >= k; --j) c[j] += s * c[j + 1];
      out[k] = c[k];
    }
    return PolyQD(out, four_q);
  }
};

inline std::vector<cplx> zeros(const PolyQD& q) {
  int m = q.degree();
  if (m == 0) return {};
  Eigen::MatrixXcd C = Eigen::MatrixXcd::Zero(m, m);
  for (int i = 1; i < m; ++i) C(i, i - 1) = 1;
  for (int i = 0; i < m; ++i) C(i, m - 1) = -q.coeffs[i] / q.lead();
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(C, false);
  std::vector<cplx> r(es.eigenvalues().data(), es.eigenvalues().data() + m);
  double tol = 1e-12 * q.max_coeff();
  for (auto& z : r) {
    for (int it = 0; it < 50; ++it) {
      cplx f = q(z);
      if (std::abs(f) < 1e-16 * q.max_coeff()) break;
      cplx d = q.deriv(z);
      if (std::abs(d) == 0) break;
      cplx step = f / d;
      z -= step;
      if (std::abs(step) < 1e-16 * (1 + std::abs(z)) && std::abs(q(z)) < tol) break;
    }
  }
  std::sort(r.begin(), r.end(), [](cplx a, cplx b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return r;
}

// m+2 angles with arg(a_m) + (m+2) theta = 0 mod 2 pi, sorted in [0, 2 pi).
inline std::vector<double> horizontal_directions(const PolyQD& q) {
  int m = q.degree();
  std::vector<double> t;
  for (int k = 0; k < m + 2; ++k) {
    double th = (-std::arg(q.lead()) + 2 * M_PI * k) / (m + 2);
    th = std::fmod(th, 2 * M_PI);
    if (th < 0) th += 2 * M_PI;
    if (th >= 2 * M_PI - 1e-15) th = 0;
    t.push_back(th);
  }
  std::sort(t.begin(), t.end());
  return t;
}

inline std::vector<double> vertical_directions(const PolyQD& q) {
  auto h = horizontal_directions(q);
  std::vector<double> v;
  for (size_t k = 0; k < h.size(); ++k) v.push_back(h[k] + M_PI / h.size());
  return v;
}

namespace detail {
inline const std::array<double, 10>& gl_x() {
  static const std::array<double, 10> x = {-0.9739065285171717, -0.8650633666889845, -0.6794095682990244,
                                           -0.4333953941292472, -0.1488743389816312, 0.1488743389816312,
                                           0.4333953941292472,  0.6794095682990244,  0.8650633666889845,
                                           0.9739065285171717};
  return x;
}
inline const std::array<double, 10>& gl_w() {
  static const std::array<double, 10> w = {0.0666713443086881, 0.1494513491505806, 0.2190863625159820,
                                           0.2692667193099963, 0.2955242247147529, 0.2955242247147529,
                                           0.2692667193099963, 0.2190863625159820, 0.1494513491505806,
                                           0.0666713443086881};
  return w;
}
}  // namespace detail

// Integrates sqrt(scale*q) dz along a parametrized path with continuous branch tracking.
// path(t) for t in [0,1], dpath its derivative; `root` is the branch at the start and is
// updated to the branch at the end.
template <class Path, class DPath>
cplx integrate_sqrt(const PolyQD& q, Path path, DPath dpath, int segments, cplx& root) {
  cplx total = 0;
  double s = q.scale();
  const auto& X = detail::gl_x();
  const auto& W = detail::gl_w();
  for (int k = 0; k < segments; ++k) {
    double a = double(k) / segments, b = double(k + 1) / segments;
    for (int i = 0; i < 10; ++i) {
      double t = 0.5 * (a + b) + 0.5 * (b - a) * X[i];
      cplx r = std::sqrt(s * q(path(t)));
      if (std::abs(r - root) > std::abs(r + root)) r = -r;
      root = r;
      total += 0.5 * (b - a) * W[i] * r * dpath(t);
    }
    cplx r = std::sqrt(s * q(path(b)));
    if (std::abs(r - root) > std::abs(r + root)) r = -r;
    root = r;
  }
  return total;
}

// Natural coordinate xi = int sqrt(scale q) dz anchored on the ray of angle `center`
// at radius r0; defined for |z| >= r0 and arg z within pi of the center.
struct NaturalCoordinate {
  PolyQD q;
  double center = 0, r0 = 1;
  cplx root0;  // branch of sqrt(scale q) at the anchor

  NaturalCoordinate() = default;
  // Re xi increases counterclockwise along the anchor arc, or outward along the anchor ray
  NaturalCoordinate(const PolyQD& qq, double ctr, double radius, bool radial = false)
      : q(qq), center(ctr), r0(radius) {
    cplx A = std::polar(r0, center);
    root0 = std::sqrt(q.scale() * q(A));
    cplx t = radial ? A : cplx(0, 1) * A;
    if ((root0 * t).real() < 0) root0 = -root0;
  }

  cplx operator()(cplx z, cplx* root_out = nullptr) const {
    double r = std::abs(z);
    if (r < r0 * (1 - 1e-12)) throw InvalidInput("natural coordinate: point inside the anchor radius");
    double phi = std::remainder(std::arg(z) - center, 2 * M_PI);
    cplx root = root0;
    cplx xi = 0;
    int nseg = std::max(1, int(std::ceil(std::abs(phi) / 0.1)));
    xi += integrate_sqrt(
        q, [&](double t) { return std::polar(r0, center + phi * t); },
        [&](double t) { return cplx(0, phi) * std::polar(r0, center + phi * t); }, nseg, root);
    double th = center + phi;
    int rseg = std::max(1, int(std::ceil((r - r0) / (0.2 * r0))));
    if (r > r0)
      xi += integrate_sqrt(
          q, [&](double t) { return std::polar(r0 + (r - r0) * t, th); },
          [&](double) { return std::polar(r - r0, th); }, rseg, root);
    if (root_out) *root_out = root;
    return xi;
  }

  // Newton inversion from an initial guess.
  cplx inverse(cplx xi, cplx guess) const {
    cplx z = guess;
    for (int it = 0; it < 60; ++it) {
      cplx root;
      cplx f = (*this)(z, &root) - xi;
      cplx step = f / root;
      while (std::abs(z - step) < r0 && std::abs(step) > 1e-300) step *= 0.5;
      z -= step;
      if (std::abs(step) < 1e-14 * (1 + std::abs(z))) return z;
    }
    cplx root;
    if (std::abs((*this)(z, &root) - xi) > 1e-9 * (1 + std::abs(xi)))
      throw NumericalFailure("natural coordinate: inversion did not converge");
    return z;
  }
};

// Half-plane of the chain decomposition together with its flat chart.
struct HalfPlaneChart {
  enum Kind { horizontal, vertical } kind = horizontal;
  int index = 0;
  double direction = 0;  // center direction of the half-plane at infinity
  double leaf = 0;       // the boundary leaf sits at natural height `leaf`
  NaturalCoordinate nat;

  // standard half-plane coordinates (x, y>0) of z
  std::pair<double, double> coords(cplx z) const {
    cplx xi = nat(z);
    if (kind == horizontal) return {xi.real(), -xi.imag() - leaf};
    return {xi.imag(), xi.real() - leaf};
  }
  cplx point(double x, double y) const {
    cplx xi = kind == horizontal ? cplx(x, -(y + leaf)) : cplx(y + leaf, x);
    // monomial model from the anchor: xi ~ root0 A/p ((z/A)^p - 1)
    double p = (nat.q.degree() + 2) / 2.0;
    cplx A = std::polar(nat.r0, nat.center);
    cplx w = 1.0 + p * xi / (nat.root0 * A);
    return nat.inverse(xi, A * std::pow(w, 1.0 / p));
  }
  bool contains(cplx z) const {
    if (std::abs(z) < nat.r0) return false;
    if (std::abs(std::remainder(std::arg(z) - direction, 2 * M_PI)) > M_PI * 0.999) return false;
    return coords(z).second > 0;
  }
};

struct Decomposition {
  PolyQD q;
  double R = 0;
  double r_anchor = 0;
  std::vector<HalfPlaneChart> chain;  // C_1, H_1, C_2, H_2, ...
};

inline double zero_radius(const PolyQD& q) {
  double r = 0;
  for (auto z : zeros(q)) r = std::max(r, std::abs(z));
  return r;
}

// Chain of 2(m+2) half-planes, boundary leaves at natural distance R beyond the anchor circle.
inline Decomposition decompose(const PolyQD& q, double R, double r_anchor = -1) {
  Decomposition d;
  d.q = q;
  d.R = R;
  double rz = zero_radius(q);
  d.r_anchor = r_anchor > 0 ? r_anchor : std::max(1.0, 2 * rz);
  if (d.r_anchor <= rz * 1.05) throw InvalidInput("decompose: anchor circle meets the zero set");
  if (R <= 0) throw InvalidInput("decompose: R must be positive");
  auto hd = horizontal_directions(q);
  int n = int(hd.size());
  for (int i = 0; i < n; ++i) {
    HalfPlaneChart c;
    c.kind = HalfPlaneChart::vertical;
    c.index = i;
    c.direction = hd[i];
    c.nat = NaturalCoordinate(q, hd[i], d.r_anchor, true);
    c.leaf = R;
    HalfPlaneChart h;
    h.kind = HalfPlaneChart::horizontal;
    h.index = i;
    h.direction = hd[i] + M_PI / n;
    h.nat = NaturalCoordinate(q, h.direction, d.r_anchor);
    h.leaf = R;
    d.chain.push_back(c);
    d.chain.push_back(h);
  }
  return d;
}

// Smoothed conformal factor sigma: scale*|q| outside eps-disks, quintic blend against a cap inside.
struct DomainMetric {
  PolyQD q;
  double eps = 0;
  std::vector<cplx> centers;
  std::vector<double> caps;

  static double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * t * (10 - 15 * t + 6 * t * t);
  }
  double operator()(cplx z) const {
    double base = q.scale() * std::abs(q(z));
    for (size_t k = 0; k < centers.size(); ++k) {
      double rho = std::abs(z - centers[k]) / eps;
      if (rho < 1) {
        double b = smoothstep(rho);
        return (1 - b) * caps[k] + b * base;
      }
    }
    return base;
  }
};

inline DomainMetric smooth_metric(const PolyQD& q, double eps) {
  DomainMetric m;
  m.q = q;
  m.eps = eps;
  auto zs = zeros(q);
  if (zs.empty()) return m;
  if (eps <= 0) throw InvalidInput("smooth_metric: eps must be positive");
  for (size_t i = 0; i < zs.size(); ++i)
    for (size_t j = i + 1; j < zs.size(); ++j)
      if (std::abs(zs[i] - zs[j]) < 2 * eps) throw InvalidInput("smooth_metric: overlapping disks");
  for (auto z : zs) {
    double cap = 0;
    for (int k = 0; k < 64; ++k) cap = std::max(cap, q.scale() * std::abs(q(z + std::polar(eps, 2 * M_PI * k / 64))));
    m.centers.push_back(z);
    m.caps.push_back(cap);
  }
  return m;
}

// Terms of the expansion of sqrt(q) at infinity with exponent >= -1.
struct PrincipalPart {
  std::vector<double> exponents;
  std::vector<cplx> coeffs;

  cplx operator()(cplx z) const {
    cplx r = 0;
    for (size_t k = 0; k < coeffs.size(); ++k) r += coeffs[k] * std::pow(z, exponents[k]);
    return r;
  }
};

inline PrincipalPart principal_part(const PolyQD& q) {
  int m = q.degree();
  int K = m / 2 + 1;  // exponents m/2 - k, k = 0..K
  std::vector<cplx> b(K + 1, 0.0);
  for (int j = 1; j <= K; ++j)
    if (m - j >= 0) b[j] = q.coeffs[m - j] / q.lead();
  std::vector<cplx> s(K + 1, 0.0);
  s[0] = 1;
  for (int k = 1; k <= K; ++k) {
    cplx acc = b[k];
    for (int j = 1; j < k; ++j) acc -= s[j] * s[k - j];
    s[k] = acc / 2.0;
  }
  PrincipalPart p;
  cplx a = std::sqrt(q.lead());
  for (int k = 0; k <= K; ++k) {
    p.exponents.push_back(m / 2.0 - k);
    p.coeffs.push_back(a * s[k]);
  }
  return p;
}

// Max coefficient difference, minimized over the global sign, relative to the largest coefficient.
inline double pp_distance(const PrincipalPart& a, const PrincipalPart& b) {
  if (a.exponents != b.exponents) return std::numeric_limits<double>::infinity();
  double scale = 0, dp = 0, dm = 0;
  for (size_t k = 0; k < a.coeffs.size(); ++k) {
    scale = std::max({scale, std::abs(a.coeffs[k]), std::abs(b.coeffs[k])});
    dp = std::max(dp, std::abs(a.coeffs[k] - b.coeffs[k]));
    dm = std::max(dm, std::abs(a.coeffs[k] + b.coeffs[k]));
  }
  return std::min(dp, dm) / std::max(scale, 1e-300);
}

inline bool pp_equal(const PrincipalPart& a, const PrincipalPart& b, double tol = 1e-10) {
  return pp_distance(a, b) <= tol;
}

}  // namespace hmlab
