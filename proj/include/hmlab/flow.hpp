#pragma once
// Harmonic-map heat flow from (C, sigma) into H^3 on a truncation rectangle.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hmlab/hyp3.hpp"

namespace hmlab {

// Uniform node lattice on [x0,x1]x[y0,y1] with conformal factor samples.
struct Grid {
  double x0 = -1, x1 = 1, y0 = -1, y1 = 1;
  int nx = 0, ny = 0;
  std::vector<double> sigma;

  Grid() = default;
  Grid(double x0_, double x1_, double y0_, double y1_, int nx_, int ny_,
       const std::function<double(cplx)>& metric = nullptr)
      : x0(x0_), x1(x1_), y0(y0_), y1(y1_), nx(nx_), ny(ny_) {
    if (nx < 3 || ny < 3) throw InvalidInput("Grid: need at least 3 nodes per axis");
    if (!(x1 > x0) || !(y1 > y0)) throw InvalidInput("Grid: empty rectangle");
    sigma.assign(size(), 1.0);
    if (metric)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) sigma[idx(i, j)] = metric(pos(i, j));
    for (double s : sigma)
      if (!(s > 0) || !std::isfinite(s)) throw InvalidInput("Grid: sigma must be positive");
  }
  static Grid square(double L, int n, const std::function<double(cplx)>& metric = nullptr) {
    return Grid(-L, L, -L, L, n, n, metric);
  }
  std::size_t size() const { return std::size_t(nx) * ny; }
  std::size_t idx(int i, int j) const { return std::size_t(j) * nx + i; }
  double hx() const { return (x1 - x0) / (nx - 1); }
  double hy() const { return (y1 - y0) / (ny - 1); }
  cplx pos(int i, int j) const { return {x0 + i * hx(), y0 + j * hy()}; }
  cplx pos(std::size_t k) const { return pos(int(k % nx), int(k / nx)); }
  bool boundary(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }
  double sigma_min() const { return *std::min_element(sigma.begin(), sigma.end()); }
  double cfl_bound(double c_cfl) const {
    double h = std::min(hx(), hy());
    return c_cfl * sigma_min() * h * h / 4;
  }
};

struct DiscreteMap {
  std::vector<PointH3> u;
  double t = 0;
};

inline DiscreteMap sample_map(const Grid& g, const std::function<PointH3(cplx)>& f) {
  DiscreteMap m;
  m.u.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) m.u[k] = f(g.pos(k));
  return m;
}

// Runs fn(j) for rows j in [j0,j1) split into contiguous blocks, one per thread.
inline void parallel_rows(int j0, int j1, int threads, const std::function<void(int)>& fn) {
  int rows = j1 - j0;
  if (threads <= 1 || rows < 2 * threads) {
    for (int j = j0; j < j1; ++j) fn(j);
    return;
  }
  std::vector<std::thread> pool;
  for (int b = 0; b < threads; ++b) {
    int a = j0 + rows * b / threads, e = j0 + rows * (b + 1) / threads;
    pool.emplace_back([a, e, &fn] {
      for (int j = a; j < e; ++j) fn(j);
    });
  }
  for (auto& th : pool) th.join();
}

struct TensionField {
  std::vector<Vec3> tau;  // Euclidean components; zero on the boundary ring
  double sup = 0;         // max hyperbolic norm over interior nodes
  std::size_t argsup = 0;
};

namespace detail {
inline void check_floor(const DiscreteMap& m, double z_floor) {
  for (std::size_t k = 0; k < m.u.size(); ++k)
    if (!(m.u[k].z > z_floor) || !m.u[k].valid())
      throw NumericalFailure("z below floor at node " + std::to_string(k));
}
// Edge contribution to the negative energy gradient at ui from neighbour uj.
inline Vec3 edge_pull(const PointH3& ui, const PointH3& uj) {
  double dx = uj.x - ui.x, dy = uj.y - ui.y, dz = uj.z - ui.z;
  double inv = 1 / uj.z;
  double r = ui.z * inv;
  double half = 0.5 * (dx * dx + dy * dy + dz * dz) * inv;
  return {dx * r, dy * r, dz * r + half};
}
}  // namespace detail

// Gradient of the edge energy w.r.t. the sigma-weighted L2 metric. Agrees with the
// Christoffel discretization to O(h^2) and is exact on (x, y, c).
inline TensionField tension_field(const DiscreteMap& m, const Grid& g, int threads = 1,
                                  double z_floor = 1e-8) {
  if (m.u.size() != g.size()) throw InvalidInput("tension_field: size mismatch");
  detail::check_floor(m, z_floor);
  TensionField tf;
  tf.tau.assign(g.size(), Vec3{});
  double ix = 1 / (g.hx() * g.hx()), iy = 1 / (g.hy() * g.hy());
  std::vector<double> rowsup(g.ny, 0.0);
  std::vector<std::size_t> rowarg(g.ny, 0);
  parallel_rows(1, g.ny - 1, threads, [&](int j) {
    for (int i = 1; i < g.nx - 1; ++i) {
      std::size_t k = g.idx(i, j);
      const PointH3& c = m.u[k];
      Vec3 sx = detail::edge_pull(c, m.u[k - 1]) + detail::edge_pull(c, m.u[k + 1]);
      Vec3 sy = detail::edge_pull(c, m.u[k - g.nx]) + detail::edge_pull(c, m.u[k + g.nx]);
      Vec3 t = (sx * ix + sy * iy) * (1 / g.sigma[k]);
      tf.tau[k] = t;
      double n2 = t.dot(t) / (c.z * c.z);
      if (n2 > rowsup[j]) rowsup[j] = n2, rowarg[j] = k;
    }
  });
  for (int j = 1; j < g.ny - 1; ++j)
    if (rowsup[j] > tf.sup) tf.sup = rowsup[j], tf.argsup = rowarg[j];
  tf.sup = std::sqrt(tf.sup);
  return tf;
}

// Trapezoid-weighted edge quadrature of (1/2) int e dvol_sigma.
inline double energy(const DiscreteMap& m, const Grid& g) {
  double A = g.hx() * g.hy();
  double ix = A / (g.hx() * g.hx()), iy = A / (g.hy() * g.hy());
  auto term = [&](std::size_t a, std::size_t b) {
    const PointH3 &p = m.u[a], &q = m.u[b];
    double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
    return (dx * dx + dy * dy + dz * dz) / (p.z * q.z);
  };
  double E = 0;
  for (int j = 0; j < g.ny; ++j) {
    double row = 0;
    bool edge_row = (j == 0 || j == g.ny - 1);
    for (int i = 0; i + 1 < g.nx; ++i) row += (edge_row ? 0.5 : 1.0) * term(g.idx(i, j), g.idx(i + 1, j));
    E += ix * row;
  }
  for (int j = 0; j + 1 < g.ny; ++j) {
    double row = 0;
    for (int i = 0; i < g.nx; ++i) {
      bool edge_col = (i == 0 || i == g.nx - 1);
      row += (edge_col ? 0.5 : 1.0) * term(g.idx(i, j), g.idx(i, j + 1));
    }
    E += iy * row;
  }
  return 0.5 * E;
}

// Intrinsic first derivatives at node (i,j): central differences of log maps at u_ij
// (one-sided on the boundary ring). Exact on unit-speed geodesic collapses.
inline std::pair<Vec3, Vec3> tangent_derivs(const DiscreteMap& m, const Grid& g, int i, int j) {
  const PointH3& c = m.u[g.idx(i, j)];
  auto diff = [&](int ia, int ja, int ib, int jb, double h) {
    Vec3 a = (ia == i && ja == j) ? Vec3{} : log_map(c, m.u[g.idx(ia, ja)]);
    Vec3 b = (ib == i && jb == j) ? Vec3{} : log_map(c, m.u[g.idx(ib, jb)]);
    return (b - a) * (1 / h);
  };
  int ia = std::max(i - 1, 0), ib = std::min(i + 1, g.nx - 1);
  int ja = std::max(j - 1, 0), jb = std::min(j + 1, g.ny - 1);
  return {diff(ia, j, ib, j, (ib - ia) * g.hx()), diff(i, ja, i, jb, (jb - ja) * g.hy())};
}

// e = sigma^{-1} sum_i |d_i u|^2 in the H^3 metric. Multiply by 2 for the q-normalized convention.
inline std::vector<double> energy_density(const DiscreteMap& m, const Grid& g) {
  std::vector<double> e(g.size());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      std::size_t k = g.idx(i, j);
      auto [dx, dy] = tangent_derivs(m, g, i, j);
      double z = m.u[k].z;
      e[k] = (dx.dot(dx) + dy.dot(dy)) / (g.sigma[k] * z * z);
    }
  return e;
}

struct FlowConfig {
  double c_cfl = 0.2;
  double z_floor = 1e-8;
  double tol_tau = 1e-6;
  long max_steps = 1000000;
  double t_max = std::numeric_limits<double>::infinity();
  long record_every = 100;      // time-series cadence in steps
  long checkpoint_every = 0;    // 0 disables
  std::string checkpoint_path;  // written atomically per checkpoint
  bool keep_history = false;    // also keep every checkpoint as <path>.<step>
  std::string config_hash;
  int threads = 1;
};

struct TimeSample {
  double t, energy, sup_tau, sup_psi, sup_gauge;
};

struct FlowState {
  DiscreteMap map;
  long step = 0;
  std::vector<TimeSample> series;
  bool converged = false;
  std::string stop_reason;
};

// Optional per-sample observers returning sup Psi and sup G.
struct Observers {
  std::function<double(const DiscreteMap&)> psi;
  std::function<double(const DiscreteMap&)> gauge;
  std::function<void(DiscreteMap&)> post_step;  // e.g. projection onto an invariant set
};

// One explicit step along the exponential map. Boundary nodes stay fixed.
inline void step(FlowState& s, const Grid& g, double dt, const FlowConfig& cfg,
                 const TensionField* precomputed = nullptr) {
  double bound = g.cfl_bound(cfg.c_cfl);
  if (!(dt > 0) || dt > bound * (1 + 1e-12))
    throw InvalidInput("step: dt violates CFL bound " + std::to_string(bound));
  TensionField local;
  if (!precomputed) local = tension_field(s.map, g, cfg.threads, cfg.z_floor);
  const TensionField& tf = precomputed ? *precomputed : local;
  thread_local std::vector<PointH3> buffer;
  std::vector<PointH3>& next = buffer;  // workers must see the caller's buffer
  next.assign(s.map.u.begin(), s.map.u.end());
  parallel_rows(1, g.ny - 1, cfg.threads, [&](int j) {
    for (int i = 1; i < g.nx - 1; ++i) {
      std::size_t k = g.idx(i, j);
      next[k] = exp_map(s.map.u[k], tf.tau[k] * dt);
    }
  });
  for (std::size_t k = 0; k < next.size(); ++k)
    if (!(next[k].z > cfg.z_floor) || !next[k].valid())
      throw NumericalFailure("z-floor breach at node " + std::to_string(k));
  s.map.u.swap(next);
  s.map.t += dt;
  ++s.step;
}

inline void write_checkpoint(const std::string& path, const Grid& g, const FlowState& s,
                             const std::string& config_hash) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw InvalidInput("cannot write checkpoint " + path);
    f << std::setprecision(17);
    f << "# hmlab checkpoint\n";
    f << "grid " << g.x0 << ' ' << g.x1 << ' ' << g.y0 << ' ' << g.y1 << ' ' << g.nx << ' ' << g.ny << "\n";
    f << "t " << s.map.t << "\nstep " << s.step << "\nhash " << (config_hash.empty() ? "-" : config_hash) << "\n";
    f << "data\n";
    for (const auto& p : s.map.u) f << p.x << ' ' << p.y << ' ' << p.z << "\n";
  }
  std::rename(tmp.c_str(), path.c_str());
}

struct Checkpoint {
  double x0, x1, y0, y1;
  int nx, ny;
  double t;
  long step;
  std::string hash;
  std::vector<PointH3> u;
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot read checkpoint " + path);
  Checkpoint c{};
  std::string line, key;
  std::getline(f, line);
  if (line != "# hmlab checkpoint") throw InvalidInput("not a checkpoint: " + path);
  f >> key >> c.x0 >> c.x1 >> c.y0 >> c.y1 >> c.nx >> c.ny;
  f >> key >> c.t >> key >> c.step >> key >> c.hash >> key;
  if (!f || key != "data" || c.nx < 3 || c.ny < 3) throw InvalidInput("malformed checkpoint " + path);
  c.u.resize(std::size_t(c.nx) * c.ny);
  for (auto& p : c.u) f >> p.x >> p.y >> p.z;
  if (!f) throw InvalidInput("truncated checkpoint " + path);
  return c;
}

inline void write_series_csv(const std::string& path, const std::vector<TimeSample>& ts) {
  std::ofstream f(path);
  if (!f) throw InvalidInput("cannot write " + path);
  f << std::setprecision(17) << "t,energy,sup_tau,sup_psi,sup_gauge\n";
  for (const auto& r : ts)
    f << r.t << ',' << r.energy << ',' << r.sup_tau << ',' << r.sup_psi << ',' << r.sup_gauge << "\n";
}

// Iterates step with dt at the CFL bound, halving on z-floor near-misses.
inline FlowState& run(FlowState& s, const Grid& g, const FlowConfig& cfg, const Observers& obs = {}) {
  double dt0 = g.cfl_bound(cfg.c_cfl);
  auto record = [&](double sup_tau) {
    if (!s.series.empty() && !(s.map.t > s.series.back().t)) return;
    s.series.push_back({s.map.t, energy(s.map, g), sup_tau, obs.psi ? obs.psi(s.map) : 0.0,
                        obs.gauge ? obs.gauge(s.map) : 0.0});
  };
  s.converged = false;
  long start = s.step;
  while (true) {
    TensionField tf = tension_field(s.map, g, cfg.threads, cfg.z_floor);
    bool done = tf.sup < cfg.tol_tau;
    if (done || s.step % cfg.record_every == 0) record(tf.sup);
    if (done) {
      s.converged = true;
      s.stop_reason = "tolerance";
      break;
    }
    if (s.step - start >= cfg.max_steps) {
      s.stop_reason = "step budget exhausted";
      break;
    }
    if (s.map.t >= cfg.t_max) {
      s.stop_reason = "time limit";
      break;
    }
    double dt = std::min(dt0, cfg.t_max - s.map.t);
    for (int tries = 0;; ++tries) {
      try {
        step(s, g, dt, cfg, &tf);  // commits only on success
        if (obs.post_step) obs.post_step(s.map);
        break;
      } catch (const NumericalFailure&) {
        if (tries >= 20) throw;
        dt *= 0.5;
      }
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && s.step % cfg.checkpoint_every == 0) {
      write_checkpoint(cfg.checkpoint_path, g, s, cfg.config_hash);
      if (cfg.keep_history)
        write_checkpoint(cfg.checkpoint_path + "." + std::to_string(s.step), g, s, cfg.config_hash);
    }
  }
  if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0)
    write_checkpoint(cfg.checkpoint_path, g, s, cfg.config_hash);
  return s;
}

}  // namespace hmlab
