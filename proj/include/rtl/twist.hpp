#pragma once

// Strip maps F(q, p; omega) on S = R x [-1, 1]: evaluation, Jacobians,
// composition, inversion, the twist-map checks and fixed-point typing.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rtl/environment.hpp"
#include "rtl/error.hpp"
#include "rtl/numerics.hpp"
#include "rtl/random.hpp"

namespace rtl {

struct StripPoint {
  double q = 0.0;
  double p = 0.0;
};

inline std::atomic<long>& clamp_warning_count() {
  static std::atomic<long> count{0};
  return count;
}

/// Builds a strip point, snapping p onto [-1, 1]. Excess up to 1e-12 is
/// rounding; up to 1e-9 is clamped with a warning tick; beyond that is an error.
inline StripPoint strip_point(double q, double p) {
  const double excess = std::abs(p) - 1.0;
  if (excess > 0.0) {
    require(excess <= 1e-9, ErrorCode::outside_domain,
            "point left the strip: p = " + std::to_string(p));
    if (excess > 1e-12) ++clamp_warning_count();
    p = std::copysign(1.0, p);
  }
  return {q, p};
}

enum class MonotoneSign { positive, negative, none };
enum class Provenance { formula, from_H, from_twist_composition, from_flow, inverse_of };

inline MonotoneSign flip(MonotoneSign s) {
  if (s == MonotoneSign::positive) return MonotoneSign::negative;
  if (s == MonotoneSign::negative) return MonotoneSign::positive;
  return MonotoneSign::none;
}

inline const char* to_string(MonotoneSign s) {
  switch (s) {
    case MonotoneSign::positive: return "positive";
    case MonotoneSign::negative: return "negative";
    case MonotoneSign::none: return "none";
  }
  return "none";
}

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::formula: return "formula";
    case Provenance::from_H: return "from_H";
    case Provenance::from_twist_composition: return "from_twist_composition";
    case Provenance::from_flow: return "from_flow";
    case Provenance::inverse_of: return "inverse_of";
  }
  return "formula";
}

using EvalFn = std::function<StripPoint(const Environment&, StripPoint)>;
using JacFn = std::function<Mat2(const Environment&, StripPoint)>;

/// Immutable, cheaply copyable handle to a strip map.
class TwistMap {
 public:
  struct Parts {
    std::string name;
    EvalFn eval;
    JacFn jac;              // analytic Jacobian, optional
    EvalFn inverse_eval;    // closed-form inverse, optional
    JacFn inverse_jac;
    MonotoneSign sign = MonotoneSign::none;
    Provenance provenance = Provenance::formula;
  };

  TwistMap() = default;
  explicit TwistMap(Parts parts) : parts_(std::make_shared<const Parts>(std::move(parts))) {}

  StripPoint operator()(const Environment& env, StripPoint x) const {
    const StripPoint y = parts_->eval(env, x);
    return strip_point(y.q, y.p);
  }

  const std::string& name() const { return parts_->name; }
  MonotoneSign sign() const { return parts_->sign; }
  Provenance provenance() const { return parts_->provenance; }
  bool has_jacobian() const { return static_cast<bool>(parts_->jac); }
  const Parts& parts() const { return *parts_; }
  bool valid() const { return static_cast<bool>(parts_); }

 private:
  std::shared_ptr<const Parts> parts_;
};

/// phi0(q, p) = (q + p, p) and its exact inverse.
inline TwistMap shear_map(double slope = 1.0) {
  TwistMap::Parts parts;
  parts.name = slope == 1.0 ? "shear" : "shear(" + std::to_string(slope) + ")";
  parts.eval = [slope](const Environment&, StripPoint x) { return StripPoint{x.q + slope * x.p, x.p}; };
  parts.jac = [slope](const Environment&, StripPoint) { return Mat2{1.0, slope, 0.0, 1.0}; };
  parts.inverse_eval = [slope](const Environment&, StripPoint y) { return StripPoint{y.q - slope * y.p, y.p}; };
  parts.inverse_jac = [slope](const Environment&, StripPoint) { return Mat2{1.0, -slope, 0.0, 1.0}; };
  parts.sign = slope > 0.0 ? MonotoneSign::positive : (slope < 0.0 ? MonotoneSign::negative : MonotoneSign::none);
  return TwistMap(std::move(parts));
}

inline TwistMap identity_map() {
  TwistMap::Parts parts;
  parts.name = "identity";
  parts.eval = [](const Environment&, StripPoint x) { return x; };
  parts.jac = [](const Environment&, StripPoint) { return Mat2::identity(); };
  parts.inverse_eval = parts.eval;
  parts.inverse_jac = parts.jac;
  return TwistMap(std::move(parts));
}

/// Wraps a plain function as a map; no analytic Jacobian.
inline TwistMap formula_map(std::string name, EvalFn eval, MonotoneSign sign = MonotoneSign::none) {
  TwistMap::Parts parts;
  parts.name = std::move(name);
  parts.eval = std::move(eval);
  parts.sign = sign;
  return TwistMap(std::move(parts));
}

inline StripPoint apply(const TwistMap& f, const Environment& env, StripPoint x) {
  x = strip_point(x.q, x.p);
  return f(env, x);
}

/// Finite-difference Jacobian; central in q, central in p away from the
/// boundary and one-sided second order within h of p = +-1.
inline Mat2 fd_jacobian(const TwistMap& f, const Environment& env, StripPoint x, double h = 1e-5) {
  const auto raw = [&](double q, double p) { return f.parts().eval(env, {q, p}); };
  const StripPoint qp = raw(x.q + h, x.p);
  const StripPoint qm = raw(x.q - h, x.p);
  Mat2 j;
  j.a = (qp.q - qm.q) / (2.0 * h);
  j.c = (qp.p - qm.p) / (2.0 * h);
  if (x.p + h <= 1.0 && x.p - h >= -1.0) {
    const StripPoint pp = raw(x.q, x.p + h);
    const StripPoint pm = raw(x.q, x.p - h);
    j.b = (pp.q - pm.q) / (2.0 * h);
    j.d = (pp.p - pm.p) / (2.0 * h);
  } else {
    const double s = x.p + h > 1.0 ? -1.0 : 1.0;  // step inward
    const StripPoint f0 = raw(x.q, x.p);
    const StripPoint f1 = raw(x.q, x.p + s * h);
    const StripPoint f2 = raw(x.q, x.p + 2.0 * s * h);
    j.b = s * (-3.0 * f0.q + 4.0 * f1.q - f2.q) / (2.0 * h);
    j.d = s * (-3.0 * f0.p + 4.0 * f1.p - f2.p) / (2.0 * h);
  }
  return j;
}

inline Mat2 jacobian(const TwistMap& f, const Environment& env, StripPoint x, double h = 1e-5) {
  if (f.has_jacobian()) return f.parts().jac(env, x);
  return fd_jacobian(f, env, x, h);
}

/// Composition with index 0 applied first: maps = [F0, F1, ..., FN] gives FN o ... o F0.
inline TwistMap compose(const std::vector<TwistMap>& maps) {
  require(!maps.empty(), ErrorCode::invalid_argument, "compose needs at least one map");
  if (maps.size() == 1) return maps.front();
  TwistMap::Parts parts;
  parts.name = "compose(";
  for (std::size_t i = 0; i < maps.size(); ++i) parts.name += (i ? "," : "") + maps[i].name();
  parts.name += ")";
  parts.eval = [maps](const Environment& env, StripPoint x) {
    for (const auto& m : maps) x = m(env, x);
    return x;
  };
  const bool analytic = std::all_of(maps.begin(), maps.end(), [](const TwistMap& m) { return m.has_jacobian(); });
  if (analytic) {
    parts.jac = [maps](const Environment& env, StripPoint x) {
      Mat2 j = Mat2::identity();
      for (const auto& m : maps) {
        j = m.parts().jac(env, x) * j;
        x = m(env, x);
      }
      return j;
    };
  }
  const bool invertible = std::all_of(maps.begin(), maps.end(),
                                      [](const TwistMap& m) { return static_cast<bool>(m.parts().inverse_eval); });
  if (invertible) {
    parts.inverse_eval = [maps](const Environment& env, StripPoint y) {
      for (auto it = maps.rbegin(); it != maps.rend(); ++it) {
        const StripPoint x = it->parts().inverse_eval(env, y);
        y = strip_point(x.q, x.p);
      }
      return y;
    };
  }
  parts.sign = MonotoneSign::none;
  parts.provenance = Provenance::from_twist_composition;
  return TwistMap(std::move(parts));
}

/// Solves F(x) = y by damped Newton started at y. Points on a boundary line
/// stay on it, so only q is solved there.
inline StripPoint invert(const TwistMap& f, const Environment& env, StripPoint y, double tol = 1e-10) {
  y = strip_point(y.q, y.p);
  if (f.parts().inverse_eval) {
    const StripPoint x = f.parts().inverse_eval(env, y);
    return strip_point(x.q, x.p);
  }
  const bool on_edge = std::abs(y.p) == 1.0;
  StripPoint x = y;
  auto residual = [&](StripPoint z) {
    const StripPoint fz = f(env, z);
    return std::array<double, 2>{fz.q - y.q, fz.p - y.p};
  };
  auto norm = [](const std::array<double, 2>& r) { return std::max(std::abs(r[0]), std::abs(r[1])); };
  std::array<double, 2> r = residual(x);
  for (int it = 0; it < 100; ++it) {
    if (norm(r) <= tol) return x;
    const Mat2 j = jacobian(f, env, x);
    double dq, dp;
    if (on_edge) {
      require(j.a != 0.0, ErrorCode::divergence, "singular Jacobian in inversion");
      dq = r[0] / j.a;
      dp = 0.0;
    } else {
      const double det = j.det();
      require(det != 0.0 && std::isfinite(det), ErrorCode::divergence, "singular Jacobian in inversion");
      dq = (j.d * r[0] - j.b * r[1]) / det;
      dp = (-j.c * r[0] + j.a * r[1]) / det;
    }
    double lambda = 1.0;
    bool accepted = false;
    for (int k = 0; k < 30; ++k) {
      StripPoint cand{x.q - lambda * dq, std::clamp(x.p - lambda * dp, -1.0, 1.0)};
      const auto rc = residual(cand);
      if (norm(rc) < norm(r)) {
        x = cand;
        r = rc;
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) break;
  }
  if (norm(r) <= tol) return x;
  fail(ErrorCode::divergence, "inversion did not converge for " + f.name());
}

/// Inverse as a map handle. Monotone sign flips; Jacobian is the inverse of
/// the forward Jacobian at the preimage when the forward one is analytic.
inline TwistMap inverse(const TwistMap& f) {
  TwistMap::Parts parts;
  parts.name = "inverse(" + f.name() + ")";
  if (f.parts().inverse_eval) {
    parts.eval = f.parts().inverse_eval;
    parts.jac = f.parts().inverse_jac;
  } else {
    parts.eval = [f](const Environment& env, StripPoint y) { return invert(f, env, y); };
    if (f.has_jacobian()) {
      parts.jac = [f](const Environment& env, StripPoint y) {
        const Mat2 j = f.parts().jac(env, invert(f, env, y));
        const double det = j.det();
        return Mat2{j.d / det, -j.b / det, -j.c / det, j.a / det};
      };
    }
  }
  parts.inverse_eval = f.parts().eval;
  parts.inverse_jac = f.parts().jac;
  parts.sign = flip(f.sign());
  parts.provenance = Provenance::inverse_of;
  return TwistMap(std::move(parts));
}

// Twist-map verification -------------------------------------------------

struct TwistTolerances {
  double area = 1e-4;
  double boundary = 1e-8;
  double stationarity = 1e-8;
  double twist = 0.0;      // required margin
  double monotone = 0.0;   // required margin for monotone maps
};

struct VerifyOptions {
  int n_samples = 1000;
  double q_lo = -10.0;
  double q_hi = 10.0;
  std::uint64_t seed = 0;
  double fd_step = 1e-5;
  TwistTolerances tol;
};

struct TwistReport {
  double det_residual = 0.0;
  double boundary_residual = 0.0;
  double twist_margin_top = 0.0;     // min over q of s * Qbar(omega, +1)
  double twist_margin_bottom = 0.0;  // min over q of -s * Qbar(omega, -1)
  double monotone_margin = 0.0;      // min of s * dQ/dp
  double stationarity_residual = 0.0;
  double second_moment = 0.0;        // mean of Qbar^2 + Pbar^2
  int samples = 0;
  bool area_ok = false;
  bool boundary_ok = false;
  bool twist_ok = false;
  bool monotone_ok = true;
  bool stationarity_ok = false;

  bool pass() const { return area_ok && boundary_ok && twist_ok && monotone_ok && stationarity_ok; }
  std::vector<std::string> failing_clauses() const {
    std::vector<std::string> out;
    if (!area_ok) out.push_back("area");
    if (!boundary_ok) out.push_back("boundary");
    if (!twist_ok) out.push_back("twist");
    if (!monotone_ok) out.push_back("monotone");
    if (!stationarity_ok) out.push_back("stationarity");
    return out;
  }
};

/// Samples a stratified (q, p) grid plus both boundary lines and checks area
/// preservation, boundary invariance, the boundary twist condition, the
/// monotonicity margin and the stationary-lift identity. The orientation of
/// the twist condition follows the map's monotone sign, so inverses of
/// positive twists are checked with the mirrored inequality.
inline TwistReport verify_twist(const TwistMap& f, const Environment& env, const VerifyOptions& opt = {}) {
  require(opt.n_samples >= 1, ErrorCode::invalid_argument, "n_samples must be >= 1");
  TwistReport rep;
  const double s = f.sign() == MonotoneSign::negative ? -1.0 : 1.0;
  Rng rng(opt.seed, "verify-twist");
  const int nq = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(opt.n_samples)))));
  const int np = std::max(1, (opt.n_samples + nq - 1) / nq);
  const double dq = (opt.q_hi - opt.q_lo) / nq;
  const double dp = 2.0 / np;
  double moment = 0.0;
  double det_res = 0.0;
  double mono = std::numeric_limits<double>::infinity();
  int count = 0;
  for (int i = 0; i < nq; ++i) {
    for (int k = 0; k < np && count < opt.n_samples; ++k, ++count) {
      const double q = opt.q_lo + (i + rng.uniform()) * dq;
      const double p = -1.0 + (k + rng.uniform()) * dp;
      const StripPoint x{q, std::clamp(p, -1.0, 1.0)};
      const Mat2 j = jacobian(f, env, x, opt.fd_step);
      det_res = std::max(det_res, std::abs(j.det() - 1.0));
      mono = std::min(mono, s * j.b);
      const StripPoint y = f(env, x);
      moment += (y.q - q) * (y.q - q) + y.p * y.p;
    }
  }
  rep.samples = count;
  rep.det_residual = det_res;
  rep.monotone_margin = mono;
  rep.second_moment = moment / count;

  double bres = 0.0;
  double top = std::numeric_limits<double>::infinity();
  double bottom = std::numeric_limits<double>::infinity();
  const int nb = std::max(8, nq * 4);
  for (int i = 0; i <= nb; ++i) {
    const double q = opt.q_lo + (opt.q_hi - opt.q_lo) * i / nb;
    const StripPoint yt = f.parts().eval(env, {q, 1.0});
    const StripPoint yb = f.parts().eval(env, {q, -1.0});
    bres = std::max({bres, std::abs(yt.p - 1.0), std::abs(yb.p + 1.0)});
    top = std::min(top, s * (yt.q - q));
    bottom = std::min(bottom, -s * (yb.q - q));
  }
  rep.boundary_residual = bres;
  rep.twist_margin_top = top;
  rep.twist_margin_bottom = bottom;

  double sres = 0.0;
  const int ns = std::max(1, std::min(opt.n_samples, 200));
  for (int i = 0; i < ns; ++i) {
    const double q = rng.uniform(opt.q_lo, opt.q_hi);
    const double a = rng.uniform(-5.0, 5.0);
    const double p = rng.uniform(-1.0, 1.0);
    const StripPoint lhs = f(env, {q + a, p});
    const StripPoint rhs = f(shift(env, a), {q, p});
    sres = std::max({sres, std::abs(lhs.q - (rhs.q + a)), std::abs(lhs.p - rhs.p)});
  }
  rep.stationarity_residual = sres;

  rep.area_ok = rep.det_residual <= opt.tol.area;
  rep.boundary_ok = rep.boundary_residual <= opt.tol.boundary;
  rep.twist_ok = rep.twist_margin_top > opt.tol.twist && rep.twist_margin_bottom > opt.tol.twist;
  rep.monotone_ok = f.sign() == MonotoneSign::none || rep.monotone_margin > opt.tol.monotone;
  rep.stationarity_ok = rep.stationarity_residual <= opt.tol.stationarity;
  return rep;
}

// Fixed-point typing -------------------------------------------------------

enum class FixedPointType { positive, negative, non_real_or_mixed };

inline const char* to_string(FixedPointType t) {
  switch (t) {
    case FixedPointType::positive: return "positive";
    case FixedPointType::negative: return "negative";
    case FixedPointType::non_real_or_mixed: return "non-real-or-mixed";
  }
  return "non-real-or-mixed";
}

struct FixedPointClass {
  FixedPointType type = FixedPointType::non_real_or_mixed;
  std::complex<double> lambda1;
  std::complex<double> lambda2;
  double trace = 0.0;
  double det = 0.0;
  bool marginal = false;  // some real eigenvalue within 1e-3 of 1
  double residual = 0.0;
};

/// Typing of a 2x2 Jacobian by the signs of its eigenvalues. A discriminant
/// within rounding of zero counts as a real double root.
inline FixedPointClass classify_matrix(const Mat2& j) {
  FixedPointClass c;
  c.trace = j.trace();
  c.det = j.det();
  const double disc = 0.25 * c.trace * c.trace - c.det;
  const double scale = std::max(1.0, j.max_abs() * j.max_abs());
  if (disc < 0.0 && disc > -1e-12 * scale) {
    c.lambda1 = c.lambda2 = 0.5 * c.trace;
  } else {
    const Eigen2 e = eigenvalues(j);
    c.lambda1 = e.first;
    c.lambda2 = e.second;
  }
  const bool real = c.lambda1.imag() == 0.0 && c.lambda2.imag() == 0.0;
  if (real && c.lambda1.real() > 0.0 && c.lambda2.real() > 0.0) {
    c.type = FixedPointType::positive;
  } else if (real && c.lambda1.real() < 0.0 && c.lambda2.real() < 0.0) {
    c.type = FixedPointType::negative;
  } else {
    c.type = FixedPointType::non_real_or_mixed;
  }
  if (real) {
    c.marginal = std::min(std::abs(c.lambda1.real() - 1.0), std::abs(c.lambda2.real() - 1.0)) <= 1e-3;
  }
  return c;
}

inline FixedPointClass classify_fixed_point(const TwistMap& f, const Environment& env, StripPoint x,
                                            double h = 1e-5) {
  const StripPoint y = f(env, x);
  const double res = std::max(std::abs(y.q - x.q), std::abs(y.p - x.p));
  require(res <= 1e-6, ErrorCode::not_fixed, "point is not fixed within 1e-6");
  FixedPointClass c = classify_matrix(jacobian(f, env, x, h));
  c.residual = res;
  return c;
}

}  // namespace rtl
