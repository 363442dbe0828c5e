#pragma once

// Critical points of the action I(q, xi) = G(q, q; xi) (psi(q) when N = 0),
// found by gradient ascent followed by Newton refinement, and their fixed
// points (q, -G_q) of the generated map.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rtl/environment.hpp"
#include "rtl/error.hpp"
#include "rtl/genfun.hpp"
#include "rtl/numerics.hpp"
#include "rtl/parallel.hpp"
#include "rtl/twist.hpp"

namespace rtl {

struct SearchWindow {
  double ell = 20.0;
  double grid = 0.05;
  double dedupe_radius = 1e-4;

  void validate() const {
    require(ell > 0.0 && std::isfinite(ell), ErrorCode::invalid_argument, "window half-width must be positive");
    require(grid > 0.0 && dedupe_radius > 0.0, ErrorCode::invalid_argument,
            "grid and dedupe radius must be positive");
  }
};

enum class HessianClass { max, min, saddle, degenerate };

inline const char* to_string(HessianClass h) {
  switch (h) {
    case HessianClass::max: return "max";
    case HessianClass::min: return "min";
    case HessianClass::saddle: return "saddle";
    case HessianClass::degenerate: return "degenerate";
  }
  return "degenerate";
}

struct CriticalPoint {
  double q = 0.0;
  std::vector<double> xi;
  double value = 0.0;
  double grad_norm = 0.0;
  HessianClass hessian_class = HessianClass::degenerate;
  std::vector<double> hessian_eigenvalues;
  double det_hessian = 0.0;
  StripPoint fixed_point;
  double fp_residual = 0.0;
  double df_trace = 0.0;
};

/// Points are (q, xi_1, ..., xi_N).
using ActionPoint = std::vector<double>;

namespace detail {

inline std::vector<double> xi_of(const ActionPoint& y) { return {y.begin() + 1, y.end()}; }

/// The action at y, or nothing when y lies outside the closed domain.
inline std::optional<Action> try_action(const CompositeGenFun& c, const Environment& env, const ActionPoint& y) {
  const auto v = c.evaluate(env, y[0], y[0], xi_of(y), true);
  if (v.min_margin < 0.0) return std::nullopt;
  Action a;
  a.I = v.G;
  a.grad.push_back(v.G_q + v.G_Q);
  for (double g : v.G_xi) a.grad.push_back(g);
  a.min_margin = v.min_margin;
  return a;
}

inline double norm2(const std::vector<double>& g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

/// Central-difference Hessian of I from its analytic gradient, symmetrized.
/// Falls back to a one-sided difference where a stencil point leaves the domain.
inline Matrix action_hessian(const CompositeGenFun& c, const Environment& env, const ActionPoint& y, double h = 1e-5) {
  const std::size_t n = y.size();
  Matrix m(n);
  const auto centre = detail::try_action(c, env, y);
  require(centre.has_value(), ErrorCode::outside_domain, "Hessian requested outside the chain domain");
  for (std::size_t i = 0; i < n; ++i) {
    ActionPoint yp = y, ym = y;
    yp[i] += h;
    ym[i] -= h;
    const auto ap = detail::try_action(c, env, yp);
    const auto am = detail::try_action(c, env, ym);
    for (std::size_t j = 0; j < n; ++j) {
      if (ap && am) m(i, j) = (ap->grad[j] - am->grad[j]) / (2.0 * h);
      else if (ap) m(i, j) = (ap->grad[j] - centre->grad[j]) / h;
      else if (am) m(i, j) = (centre->grad[j] - am->grad[j]) / h;
      else fail(ErrorCode::outside_domain, "no admissible Hessian stencil");
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = 0.5 * (m(i, j) + m(j, i));
  return m;
}

inline HessianClass hessian_class(const std::vector<double>& eig, double band = 1e-6) {
  bool neg = false, pos = false;
  for (double l : eig) {
    if (std::abs(l) <= band) return HessianClass::degenerate;
    (l < 0.0 ? neg : pos) = true;
  }
  if (neg && pos) return HessianClass::saddle;
  return neg ? HessianClass::max : HessianClass::min;
}

// Gradient flow ---------------------------------------------------------------

struct FlowOptions {
  double dt = 0.25;
  double t_max = 50.0;
  double ell = std::numeric_limits<double>::infinity();  // stop once |q| > ell + 1
  double grad_tol = 1e-6;
  double min_dt = 1e-12;
};

enum class FlowStop { converged, exited, timeout, stalled };

inline const char* to_string(FlowStop s) {
  switch (s) {
    case FlowStop::converged: return "converged";
    case FlowStop::exited: return "exited";
    case FlowStop::timeout: return "timeout";
    case FlowStop::stalled: return "stalled";
  }
  return "stalled";
}

struct Trajectory {
  std::vector<ActionPoint> points;
  std::vector<double> values;
  std::vector<double> times;
  FlowStop stop = FlowStop::converged;
  double grad_norm = 0.0;
  bool degenerate = false;  // gradient and Hessian both vanish at the start
};

/// RK4 on y' = grad I. A step is accepted only if every stage stays in the
/// domain and I does not drop by more than 1e-12; otherwise it is halved.
inline Trajectory gradient_flow(const CompositeGenFun& c, const Environment& env, const ActionPoint& start,
                                const FlowOptions& opt = {}) {
  require(start.size() == static_cast<std::size_t>(c.N() + 1), ErrorCode::invalid_argument,
          "start point has the wrong dimension");
  require(domain_margin(c, env, start[0], detail::xi_of(start)) > 0.0, ErrorCode::precondition,
          "flow must start in the interior of the domain");
  Trajectory tr;
  ActionPoint y = start;
  Action a = *detail::try_action(c, env, y);
  double t = 0.0;
  double h = opt.dt;
  tr.points.push_back(y);
  tr.values.push_back(a.I);
  tr.times.push_back(t);
  const std::size_t n = y.size();
  const auto stage = [&](const ActionPoint& base, const std::vector<double>& k, double s) {
    ActionPoint z = base;
    for (std::size_t i = 0; i < n; ++i) z[i] += s * k[i];
    return z;
  };
  while (true) {
    tr.grad_norm = detail::norm2(a.grad);
    if (tr.grad_norm < opt.grad_tol) {
      tr.stop = FlowStop::converged;
      if (tr.points.size() == 1) {
        const Matrix hs = action_hessian(c, env, y);
        double m = 0.0;
        for (double x : hs.a) m = std::max(m, std::abs(x));
        tr.degenerate = m <= 1e-6;
      }
      break;
    }
    if (std::abs(y[0]) > opt.ell + 1.0) {
      tr.stop = FlowStop::exited;
      break;
    }
    if (t > opt.t_max) {
      tr.stop = FlowStop::timeout;
      break;
    }
    std::optional<Action> next;
    ActionPoint ynew;
    {
      const auto& k1 = a.grad;
      const auto a2 = detail::try_action(c, env, stage(y, k1, 0.5 * h));
      const auto a3 = a2 ? detail::try_action(c, env, stage(y, a2->grad, 0.5 * h)) : std::nullopt;
      const auto a4 = a3 ? detail::try_action(c, env, stage(y, a3->grad, h)) : std::nullopt;
      if (a4) {
        ynew = y;
        for (std::size_t i = 0; i < n; ++i)
          ynew[i] += h / 6.0 * (k1[i] + 2.0 * a2->grad[i] + 2.0 * a3->grad[i] + a4->grad[i]);
        next = detail::try_action(c, env, ynew);
        if (next && next->I < a.I - 1e-12) next.reset();
      }
    }
    if (!next) {
      h *= 0.5;
      if (h < opt.min_dt) {
        tr.stop = FlowStop::stalled;
        break;
      }
      continue;
    }
    t += h;
    y = ynew;
    a = *next;
    tr.points.push_back(y);
    tr.values.push_back(a.I);
    tr.times.push_back(t);
    h = std::min(opt.dt, 2.0 * h);
  }
  return tr;
}

// Newton refinement -------------------------------------------------------------

struct NewtonOptions {
  double tol = 1e-10;
  double accept = 1e-8;
  int max_iter = 50;
  double max_step = 0.25;
  double max_travel = 2.0;
  double h = 1e-5;
};

/// Newton on grad I = 0; returns the limit if the gradient ends below `accept`.
inline std::optional<ActionPoint> newton_refine(const CompositeGenFun& c, const Environment& env, ActionPoint y,
                                                const NewtonOptions& opt = {}) {
  const ActionPoint y0 = y;
  auto a = detail::try_action(c, env, y);
  if (!a) return std::nullopt;
  for (int it = 0; it < opt.max_iter; ++it) {
    double g = 0.0;
    for (double x : a->grad) g = std::max(g, std::abs(x));
    if (g <= opt.tol) return y;
    std::vector<double> rhs(a->grad.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = -a->grad[i];
    auto step = solve_dense(action_hessian(c, env, y, opt.h), rhs);
    if (step.empty()) break;
    const double len = sup_norm(step);
    if (!std::isfinite(len)) break;
    if (len > opt.max_step)
      for (double& s : step) s *= opt.max_step / len;
    std::optional<Action> next;
    ActionPoint z;
    for (int k = 0; k < 30 && !next; ++k) {
      z = y;
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += step[i];
      next = detail::try_action(c, env, z);
      if (!next || next->min_margin <= 0.0) {
        next.reset();
        for (double& s : step) s *= 0.5;
      }
    }
    if (!next) break;
    y = z;
    a = next;
    double travel = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) travel = std::max(travel, std::abs(y[i] - y0[i]));
    if (travel > opt.max_travel) return std::nullopt;
  }
  double g = 0.0;
  for (double x : a->grad) g = std::max(g, std::abs(x));
  if (g <= opt.accept) return y;
  return std::nullopt;
}

// Fixed points ------------------------------------------------------------------

/// x = (q, -G_q(q, q; xi)); the residual |F(x) - x| is stored in cp.
inline StripPoint fixed_point_from_critical(const CompositeGenFun& c, const Environment& env, CriticalPoint& cp,
                                            const TwistMap* map = nullptr) {
  require(cp.grad_norm <= 1e-8, ErrorCode::precondition, "critical point gradient above 1e-8");
  const auto v = c.evaluate(env, cp.q, cp.q, cp.xi, false);
  const StripPoint x = strip_point(cp.q, -v.G_q);
  const TwistMap f = map ? *map : c.map();
  const StripPoint y = f(env, x);
  cp.fixed_point = x;
  cp.fp_residual = std::max(std::abs(y.q - x.q), std::abs(y.p - x.p));
  require(cp.fp_residual <= 1e-6, ErrorCode::inconsistency,
          "critical point does not map to a fixed point (residual " + std::to_string(cp.fp_residual) + ")");
  return x;
}

/// Fills value, gradient norm, Hessian data, fixed point and DF trace. The
/// trace is left NaN for degenerate points.
inline CriticalPoint describe_critical(const CompositeGenFun& c, const Environment& env, const ActionPoint& y,
                                       const TwistMap& map) {
  CriticalPoint cp;
  cp.q = y[0];
  cp.xi = detail::xi_of(y);
  const Action a = *detail::try_action(c, env, y);
  cp.value = a.I;
  cp.grad_norm = sup_norm(a.grad);
  const Matrix hs = action_hessian(c, env, y);
  cp.hessian_eigenvalues = symmetric_eigenvalues(hs);
  cp.det_hessian = determinant(hs);
  cp.hessian_class = hessian_class(cp.hessian_eigenvalues);
  fixed_point_from_critical(c, env, cp, &map);
  cp.df_trace = cp.hessian_class == HessianClass::degenerate ? std::numeric_limits<double>::quiet_NaN()
                                                             : jacobian(map, env, cp.fixed_point).trace();
  return cp;
}

// Search ------------------------------------------------------------------------

struct CriticalSet {
  std::vector<CriticalPoint> points;      // nondegenerate, sorted by q
  std::vector<CriticalPoint> degenerate;  // Hessian inside the degeneracy band
  bool constant = false;    // I varies by less than 1e-10 over the seeds
  bool continuum = false;   // degenerate points found at neighbouring seeds
  int seeds = 0;
  int stalled_flows = 0;
};

namespace detail {

inline bool point_less(const ActionPoint& a, const ActionPoint& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

/// Sorted, with points within `radius` (sup norm) of a kept point dropped.
inline std::vector<ActionPoint> dedupe(std::vector<ActionPoint> pts, double radius) {
  std::sort(pts.begin(), pts.end(), point_less);
  std::vector<ActionPoint> out;
  for (auto& p : pts) {
    bool dup = false;
    for (auto it = out.rbegin(); it != out.rend() && p[0] - (*it)[0] <= radius; ++it) {
      double d = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) d = std::max(d, std::abs(p[i] - (*it)[i]));
      if (d <= radius) {
        dup = true;
        break;
      }
    }
    if (!dup) out.push_back(std::move(p));
  }
  return out;
}

struct SeedResult {
  std::optional<ActionPoint> flow_limit;
  std::vector<ActionPoint> found;
  bool stalled = false;
};

}  // namespace detail

/// Multistart search on q in [-ell - 1, ell + 1]; keeps q in [-ell - r, ell - r).
inline CriticalSet find_critical_points(const CompositeGenFun& c, const Environment& env, const SearchWindow& window,
                                        int workers = 0) {
  window.validate();
  CriticalSet out;
  const int n_seeds = static_cast<int>(std::floor(2.0 * (window.ell + 1.0) / window.grid)) + 1;
  out.seeds = n_seeds;
  const std::size_t dim = static_cast<std::size_t>(c.N() + 1);
  const auto seed_point = [&](int k) { return ActionPoint(dim, -window.ell - 1.0 + k * window.grid); };

  std::vector<double> values(n_seeds);
  parallel_for(n_seeds, worker_count(workers), [&](std::size_t k) {
    const ActionPoint s = seed_point(static_cast<int>(k));
    values[k] = c.evaluate(env, s[0], s[0], detail::xi_of(s)).G;
  });
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi - *lo < 1e-10) {
    out.constant = true;
    return out;
  }

  FlowOptions fo;
  fo.ell = window.ell;
  std::vector<detail::SeedResult> results(n_seeds);
  parallel_for(n_seeds, worker_count(workers), [&](std::size_t k) {
    auto& r = results[k];
    const ActionPoint s = seed_point(static_cast<int>(k));
    const Trajectory tr = gradient_flow(c, env, s, fo);
    r.stalled = tr.stop == FlowStop::stalled;
    if (tr.stop == FlowStop::converged || tr.stop == FlowStop::timeout) {
      if (auto y = newton_refine(c, env, tr.points.back())) {
        r.flow_limit = *y;
        r.found.push_back(*y);
      }
    }
    if (auto y = newton_refine(c, env, s)) r.found.push_back(*y);
  });

  std::vector<ActionPoint> limits, all;
  for (const auto& r : results) {
    out.stalled_flows += r.stalled ? 1 : 0;
    if (r.flow_limit) limits.push_back(*r.flow_limit);
    all.insert(all.end(), r.found.begin(), r.found.end());
  }
  // Non-maximal critical points sit between neighbouring flow limits.
  limits = detail::dedupe(std::move(limits), window.dedupe_radius);
  std::vector<ActionPoint> mids;
  for (std::size_t i = 0; i + 1 < limits.size(); ++i) {
    ActionPoint m(dim);
    for (std::size_t j = 0; j < dim; ++j) m[j] = 0.5 * (limits[i][j] + limits[i + 1][j]);
    mids.push_back(std::move(m));
  }
  std::vector<std::optional<ActionPoint>> mid_found(mids.size());
  parallel_for(mids.size(), worker_count(workers), [&](std::size_t i) {
    if (domain_margin(c, env, mids[i][0], detail::xi_of(mids[i])) > 0.0) mid_found[i] = newton_refine(c, env, mids[i]);
  });
  for (auto& m : mid_found)
    if (m) all.push_back(*m);

  all = detail::dedupe(std::move(all), window.dedupe_radius);
  std::vector<ActionPoint> kept;
  const double r = window.dedupe_radius;
  for (auto& y : all)
    if (y[0] >= -window.ell - r && y[0] < window.ell - r) kept.push_back(std::move(y));

  const TwistMap map = c.map();
  std::vector<CriticalPoint> described(kept.size());
  parallel_for(kept.size(), worker_count(workers),
               [&](std::size_t i) { described[i] = describe_critical(c, env, kept[i], map); });
  for (auto& cp : described) {
    if (cp.hessian_class != HessianClass::degenerate) {
      out.points.push_back(std::move(cp));
      continue;
    }
    if (!out.degenerate.empty() && cp.q - out.degenerate.back().q <= 2.0 * window.grid) out.continuum = true;
    out.degenerate.push_back(std::move(cp));
  }
  return out;
}

// Classification ------------------------------------------------------------------

struct CriticalClassification {
  bool degenerate = false;
  /// Type predicted by the generating-function rule: sign of psi'' for N = 0,
  /// det D^2 I >= 0 => positive for N = 1, the reduced trace for N >= 2.
  FixedPointType rule = FixedPointType::non_real_or_mixed;
  double det_hessian = 0.0;
  /// Trace of DF from the second derivatives of G after eliminating xi.
  double predicted_trace = 0.0;
  FixedPointType trace_rule = FixedPointType::non_real_or_mixed;
  FixedPointClass direct;
  bool rule_agrees = false;
  bool trace_agrees = false;
  /// sign(det D^2 I) == sign(Trace DF - 2), using the direct trace.
  bool det_trace_sign_match = false;
};

inline FixedPointType type_from_trace(double trace) {
  if (trace > 2.0) return FixedPointType::positive;
  if (trace < -2.0) return FixedPointType::negative;
  return FixedPointType::non_real_or_mixed;
}

/// Hessian of G(q, Q; xi) in the variables (q, Q, xi).
inline Matrix composite_hessian(const CompositeGenFun& c, const Environment& env, double q,
                                const std::vector<double>& xi, double h = 1e-5) {
  const std::size_t n = xi.size() + 2;
  const auto grad = [&](const std::vector<double>& z) {
    const auto v = c.evaluate(env, z[0], z[1], {z.begin() + 2, z.end()}, false);
    std::vector<double> g{v.G_q, v.G_Q};
    g.insert(g.end(), v.G_xi.begin(), v.G_xi.end());
    return g;
  };
  std::vector<double> z{q, q};
  z.insert(z.end(), xi.begin(), xi.end());
  Matrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    const auto gp = grad(zp), gm = grad(zm);
    for (std::size_t j = 0; j < n; ++j) m(i, j) = (gp[j] - gm[j]) / (2.0 * h);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = 0.5 * (m(i, j) + m(j, i));
  return m;
}

inline CriticalClassification classify_critical(const CompositeGenFun& c, const Environment& env,
                                                const CriticalPoint& cp, double band = 1e-6) {
  CriticalClassification r;
  ActionPoint y{cp.q};
  y.insert(y.end(), cp.xi.begin(), cp.xi.end());
  const Matrix hs = action_hessian(c, env, y);
  r.det_hessian = determinant(hs);
  const auto eig = symmetric_eigenvalues(hs);
  r.degenerate = hessian_class(eig, band) == HessianClass::degenerate;
  if (c.N() == 1 && std::abs(hs(1, 1)) <= band) r.degenerate = true;

  // Reduced 2x2 block T = G_ab - G_a,xi G_xi,xi^-1 G_xi,b for a, b in {q, Q}.
  const Matrix g = composite_hessian(c, env, cp.q, cp.xi);
  const std::size_t nx = cp.xi.size();
  double t[2][2] = {{g(0, 0), g(0, 1)}, {g(1, 0), g(1, 1)}};
  if (nx > 0) {
    Matrix gxx(nx);
    for (std::size_t i = 0; i < nx; ++i)
      for (std::size_t j = 0; j < nx; ++j) gxx(i, j) = g(i + 2, j + 2);
    for (std::size_t b = 0; b < 2; ++b) {
      std::vector<double> col(nx);
      for (std::size_t i = 0; i < nx; ++i) col[i] = g(i + 2, b);
      const auto s = solve_dense(gxx, col);
      if (s.empty()) {
        r.degenerate = true;
        break;
      }
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t i = 0; i < nx; ++i) t[a][b] -= g(a, i + 2) * s[i];
    }
  }
  r.predicted_trace = (t[0][0] + t[1][1]) / (-t[0][1]);
  r.trace_rule = type_from_trace(r.predicted_trace);

  if (c.N() == 0) {
    r.rule = hs(0, 0) > 0.0 ? FixedPointType::positive : FixedPointType::negative;
  } else if (c.N() == 1) {
    r.rule = r.det_hessian >= 0.0 ? FixedPointType::positive : FixedPointType::negative;
  } else {
    r.rule = r.trace_rule;
  }

  const TwistMap map = c.map();
  const StripPoint x = strip_point(cp.q, -c.evaluate(env, cp.q, cp.q, cp.xi, false).G_q);
  r.direct = classify_fixed_point(map, env, x);
  r.rule_agrees = r.rule == r.direct.type;
  r.trace_agrees = r.trace_rule == r.direct.type;
  r.det_trace_sign_match = (r.det_hessian > 0.0) == (r.direct.trace - 2.0 > 0.0);
  return r;
}

// Census ----------------------------------------------------------------------------

struct Census {
  std::vector<double> ells;
  std::vector<int> counts;
  std::vector<double> densities;  // count / 2 ell
  std::vector<double> max_q;
  std::vector<double> min_q;
  bool constant = false;
  bool continuum = false;
  bool unbounded_both_sides = false;  // max q increases and min q decreases along ells
};

/// Counts of an existing search on nested windows [-ell - r, ell - r).
inline Census census_of(const CriticalSet& set, const std::vector<double>& ells, double dedupe_radius) {
  require(!ells.empty(), ErrorCode::invalid_argument, "empty window list");
  for (std::size_t i = 1; i < ells.size(); ++i)
    require(ells[i] > ells[i - 1], ErrorCode::invalid_argument, "window list must increase");
  Census cs;
  cs.ells = ells;
  cs.constant = set.constant;
  cs.continuum = set.continuum;
  const double r = dedupe_radius;
  for (double ell : ells) {
    int n = 0;
    double mx = -std::numeric_limits<double>::infinity(), mn = std::numeric_limits<double>::infinity();
    for (const auto& p : set.points) {
      if (p.q >= -ell - r && p.q < ell - r) {
        ++n;
        mx = std::max(mx, p.q);
        mn = std::min(mn, p.q);
      }
    }
    cs.counts.push_back(n);
    cs.densities.push_back(n / (2.0 * ell));
    cs.max_q.push_back(mx);
    cs.min_q.push_back(mn);
  }
  cs.unbounded_both_sides = !cs.constant && cs.counts.front() > 0;
  for (std::size_t i = 1; i < ells.size(); ++i)
    cs.unbounded_both_sides = cs.unbounded_both_sides && cs.max_q[i] > cs.max_q[i - 1] && cs.min_q[i] < cs.min_q[i - 1];
  return cs;
}

/// One search over the largest window, counted on each nested window.
inline Census growth_census(const CompositeGenFun& c, const Environment& env, const std::vector<double>& ells,
                            SearchWindow window = {}, int workers = 0) {
  require(!ells.empty(), ErrorCode::invalid_argument, "empty window list");
  for (std::size_t i = 1; i < ells.size(); ++i)
    require(ells[i] > ells[i - 1], ErrorCode::invalid_argument, "window list must increase");
  window.ell = ells.back();
  return census_of(find_critical_points(c, env, window, workers), ells, window.dedupe_radius);
}

}  // namespace rtl
