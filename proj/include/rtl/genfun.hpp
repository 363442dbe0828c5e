#pragma once

// Generating functions of monotone twists and their chains.
//
// A positive monotone twist F has a generating function L(omega, v) on
// [Q-(omega), Q+(omega)] with G(q, Q) = L(tau_q omega, Q - q) and
//   F(q, -G_q(q, Q)) = (Q, G_Q(q, Q)).
// L is built either from a seed H(omega, a) or extracted from a given twist.
// Negative factors of a chain are represented by the generating function of
// their (positive) inverse together with the reflection Ghat(x, y) = -G(y, x).

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rtl/environment.hpp"
#include "rtl/error.hpp"
#include "rtl/numerics.hpp"
#include "rtl/observable.hpp"
#include "rtl/twist.hpp"

namespace rtl {

// Seeds ------------------------------------------------------------------

/// Profile in the seed variable a: a^k or a/(1+a).
struct AProfile {
  enum class Kind { power, saturating };
  Kind kind = Kind::power;
  double exponent = 1.0;

  double value(double a) const {
    a = std::max(a, 0.0);
    if (kind == Kind::saturating) return a / (1.0 + a);
    return exponent == 1.0 ? a : std::pow(a, exponent);
  }
  double derivative(double a) const {
    a = std::max(a, 0.0);
    if (kind == Kind::saturating) return 1.0 / ((1.0 + a) * (1.0 + a));
    if (exponent == 1.0) return 1.0;
    return exponent * std::pow(a, exponent - 1.0);
  }
};

struct SeedTerm {
  StationaryObservable coeff;
  AProfile profile;
};

/// H(omega, a) = sum_j coeff_j(omega) * profile_j(a).
struct Seed {
  std::vector<SeedTerm> terms;
};

/// H(omega, a) = c(omega) * a.
inline Seed linear_seed(StationaryObservable c) { return Seed{{{std::move(c), AProfile{}}}}; }

/// c(theta) = 1 + eps * cos(2 pi theta_1) on a k-torus, scaled by `scale`.
inline StationaryObservable cosine_coefficient(std::size_t k, double eps, double scale = 1.0) {
  StationaryObservable c = constant_observable(scale);
  std::vector<int> mode(k, 0);
  mode[0] = 1;
  if (eps != 0.0) c.add_cosine(mode, scale * eps);
  return c;
}

/// Seed frozen at one point tau_q omega.
struct LocalSeed {
  const Seed* seed = nullptr;
  std::vector<double> c;
  std::vector<double> dc;

  double H(double a) const {
    double r = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) r += c[j] * seed->terms[j].profile.value(a);
    return r;
  }
  double H_a(double a) const {
    double r = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) r += c[j] * seed->terms[j].profile.derivative(a);
    return r;
  }
  double H_w(double a) const {
    double r = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) r += dc[j] * seed->terms[j].profile.value(a);
    return r;
  }
};

inline LocalSeed localize(const Seed& seed, const Environment& env, double q) {
  LocalSeed ls;
  ls.seed = &seed;
  for (const auto& t : seed.terms) {
    ls.c.push_back(observe(t.coeff, env, q));
    ls.dc.push_back(omega_derivative(t.coeff, env, q));
  }
  return ls;
}

// Generating functions ------------------------------------------------------

/// Everything a generating function needs at one environment point tau_q omega.
struct Frame {
  const Environment* env = nullptr;
  double q = 0.0;
  double eta = 0.0;
  double sigma = 0.0;
  double dsigma = 0.0;
  double qminus = -1.0;
  double qplus = 1.0;
  LocalSeed seed;
};

struct LValue {
  double L = 0.0;
  double Lv = 0.0;
  double Lw = 0.0;
};

class GenFun {
 public:
  virtual ~GenFun() = default;
  virtual Frame frame(const Environment& env, double q) const = 0;
  /// L and partials at v (clamped into the frame's domain). When `with_value`
  /// is false, L itself may be skipped.
  virtual LValue eval(const Frame& fr, double v, bool with_value = true) const = 0;
  virtual std::string describe() const = 0;
  double tolerance() const { return tol_; }

 protected:
  double tol_ = 1e-10;
};

using GenFunPtr = std::shared_ptr<const GenFun>;

struct EtaSigma {
  double eta = 0.0;
  double sigma = 0.0;
};

/// Generating function built from a seed H.
class SeedGenFun final : public GenFun {
 public:
  explicit SeedGenFun(Seed seed, double tol = 1e-10, double a_max = 1e6) : seed_(std::move(seed)), a_max_(a_max) {
    tol_ = tol;
    require(!seed_.terms.empty(), ErrorCode::invalid_argument, "empty seed");
    for (const auto& t : seed_.terms) {
      require(t.profile.kind != AProfile::Kind::power || t.profile.exponent > 0.0, ErrorCode::seed_invalid,
              "seed profile must vanish at a = 0");
      require(!t.coeff.depends_on_p(), ErrorCode::invalid_argument, "seed coefficients cannot depend on p");
    }
  }

  const Seed& seed() const { return seed_; }

  Frame frame(const Environment& env, double q) const override {
    Frame fr;
    fr.env = &env;
    fr.q = q;
    fr.seed = localize(seed_, env, q);
    const LocalSeed& h = fr.seed;
    double lo = 0.0;
    double hi = 1.0;
    while (h.H(hi) < 2.0) {
      lo = hi;
      hi *= 2.0;
      if (hi > a_max_) fail(ErrorCode::unbounded_seed, "H never reaches 2 below a_max");
    }
    fr.eta = bisect([&](double a) { return h.H(a) - 2.0; }, lo, hi, 1e-12, ErrorCode::unbounded_seed);
    for (int k = 1; k <= 8; ++k) {
      if (!(h.H(fr.eta * k / 8.0) > 0.0)) fail(ErrorCode::seed_invalid, "H is not positive on (0, eta]");
    }
    const double mass = adaptive_simpson([&](double a) { return h.H(a); }, 0.0, fr.eta, tol_);
    fr.sigma = fr.eta - 0.5 * mass;
    fr.dsigma = -0.5 * adaptive_simpson([&](double a) { return h.H_w(a); }, 0.0, fr.eta, tol_);
    fr.qminus = -fr.sigma;
    fr.qplus = fr.eta - fr.sigma;
    return fr;
  }

  LValue eval(const Frame& fr, double v, bool with_value = true) const override {
    v = std::clamp(v, fr.qminus, fr.qplus);
    const LocalSeed& h = fr.seed;
    const double x = v + fr.sigma;
    LValue r;
    const double hx = h.H(x);
    r.Lv = hx - 1.0;
    r.Lw = adaptive_simpson([&](double a) { return h.H_w(a); }, 0.0, x, tol_) + hx * fr.dsigma;
    if (with_value) r.L = adaptive_simpson([&](double a) { return h.H(a); }, 0.0, x, tol_) - v;
    return r;
  }

  /// d/dv (L_v - L_w) = H_a (1 - sigma') - H_w at v + sigma; positive iff monotone.
  double monotonicity(const Frame& fr, double v) const {
    const double x = v + fr.sigma;
    return fr.seed.H_a(x) * (1.0 - fr.dsigma) - fr.seed.H_w(x);
  }

  std::string describe() const override { return "seed"; }

 private:
  Seed seed_;
  double a_max_;
};

/// Generating function extracted from a positive monotone twist:
/// L(omega, v) = int_{Q-}^{v} Pbar(omega, pbar(omega, a)) da - Q-(omega).
class TwistGenFun final : public GenFun {
 public:
  explicit TwistGenFun(TwistMap f, double tol = 1e-10) : f_(std::move(f)) {
    tol_ = tol;
    require(f_.sign() == MonotoneSign::positive, ErrorCode::precondition,
            "generating function extraction needs a positive monotone twist");
  }

  Frame frame(const Environment& env, double q) const override {
    Frame fr;
    fr.env = &env;
    fr.q = q;
    fr.qminus = f_(env, {q, -1.0}).q - q;
    fr.qplus = f_(env, {q, 1.0}).q - q;
    require(fr.qminus < fr.qplus, ErrorCode::precondition, "p -> Qbar is not increasing");
    fr.sigma = -fr.qminus;
    fr.eta = fr.qplus - fr.qminus;
    fr.dsigma = std::numeric_limits<double>::quiet_NaN();
    return fr;
  }

  /// pbar(a): the p with Qbar(omega, p) = a.
  double pbar(const Frame& fr, double a) const {
    if (a <= fr.qminus) return -1.0;
    if (a >= fr.qplus) return 1.0;
    return bisect([&](double p) { return f_(*fr.env, {fr.q, p}).q - fr.q - a; }, -1.0, 1.0, 1e-13,
                  ErrorCode::precondition);
  }

  LValue eval(const Frame& fr, double v, bool with_value = true) const override {
    v = std::clamp(v, fr.qminus, fr.qplus);
    const double pv = pbar(fr, v);
    LValue r;
    r.Lv = f_(*fr.env, {fr.q, pv}).p;
    r.Lw = r.Lv - pv;
    if (with_value) {
      r.L = adaptive_simpson([&](double a) { return f_(*fr.env, {fr.q, pbar(fr, a)}).p; }, fr.qminus, v, tol_) -
            fr.qminus;
    }
    return r;
  }

  std::string describe() const override { return "from-twist(" + f_.name() + ")"; }

 private:
  TwistMap f_;
};

inline GenFunPtr make_seed_genfun(Seed seed, double tol = 1e-10) {
  return std::make_shared<const SeedGenFun>(std::move(seed), tol);
}

inline GenFunPtr genfun_from_twist(const TwistMap& f, double tol = 1e-10) {
  return std::make_shared<const TwistGenFun>(f, tol);
}

/// (eta, sigma) of a seed at tau_q omega.
inline EtaSigma eta_sigma(const Seed& seed, const Environment& env, double q) {
  const Frame fr = SeedGenFun(seed).frame(env, q);
  return {fr.eta, fr.sigma};
}

/// L(tau_q omega, v) with partials; v must lie in [Q-, Q+] up to 1e-12.
inline LValue eval_L(const GenFun& g, const Environment& env, double q, double v) {
  const Frame fr = g.frame(env, q);
  require(v >= fr.qminus - 1e-12 && v <= fr.qplus + 1e-12, ErrorCode::outside_domain,
          "v outside [Q-, Q+]");
  return g.eval(fr, v);
}

// Twists from generating functions -------------------------------------------

namespace detail {

inline double mono_slope(const GenFun& g, const Frame& fr, double v) {
  if (const auto* s = dynamic_cast<const SeedGenFun*>(&g)) return s->monotonicity(fr, v);
  return 1.0;
}

inline StripPoint forward_from_genfun(const GenFun& g, const Environment& env, StripPoint x) {
  const Frame fr = g.frame(env, x.q);
  if (x.p >= 1.0) return {x.q + fr.qplus, 1.0};
  if (x.p <= -1.0) return {x.q + fr.qminus, -1.0};
  // p = L_v - L_w is increasing in v and equals -1, +1 at the ends.
  const auto f = [&](double v) {
    const LValue l = g.eval(fr, v, false);
    return l.Lv - l.Lw - x.p;
  };
  const double v = bisect(f, fr.qminus, fr.qplus, 1e-12, ErrorCode::seed_invalid);
  if (!(mono_slope(g, fr, v) > 0.0)) fail(ErrorCode::seed_invalid, "seed violates the monotone twist condition");
  const LValue l = g.eval(fr, v, false);
  return {x.q + v, l.Lv};
}

/// Solves y + Q^{+-}(tau_y omega) = target (an increasing function of y).
inline double boundary_preimage(const GenFun& g, const Environment& env, double target, bool top) {
  const auto h = [&](double y) {
    const Frame fr = g.frame(env, y);
    return y + (top ? fr.qplus : fr.qminus) - target;
  };
  const Frame f0 = g.frame(env, target);
  const double guess = target - (top ? f0.qplus : f0.qminus);
  return solve_increasing(h, guess, 1e-12, 0.25);
}

inline StripPoint backward_from_genfun(const GenFun& g, const Environment& env, StripPoint y) {
  if (y.p >= 1.0) return {boundary_preimage(g, env, y.q, true), 1.0};
  if (y.p <= -1.0) return {boundary_preimage(g, env, y.q, false), -1.0};
  const double q_lo = boundary_preimage(g, env, y.q, true);
  const double q_hi = boundary_preimage(g, env, y.q, false);
  // G_Q(q, Q) = L_v(tau_q omega, Q - q) decreases in q from +1 to -1.
  const auto f = [&](double q) {
    const Frame fr = g.frame(env, q);
    return g.eval(fr, y.q - q, false).Lv - y.p;
  };
  const double q = bisect(f, q_lo, q_hi, 1e-12, ErrorCode::seed_invalid);
  const Frame fr = g.frame(env, q);
  const LValue l = g.eval(fr, y.q - q, false);
  return {q, l.Lv - l.Lw};
}

}  // namespace detail

/// The monotone twist generated by g: positive sign gives F, negative gives F^-1.
inline TwistMap twist_from_genfun(const GenFunPtr& g, MonotoneSign sign = MonotoneSign::positive) {
  require(sign != MonotoneSign::none, ErrorCode::invalid_argument, "twist sign must be positive or negative");
  TwistMap::Parts parts;
  const auto fwd = [g](const Environment& env, StripPoint x) { return detail::forward_from_genfun(*g, env, x); };
  const auto bwd = [g](const Environment& env, StripPoint y) { return detail::backward_from_genfun(*g, env, y); };
  if (sign == MonotoneSign::positive) {
    parts.name = "twist(" + g->describe() + ")";
    parts.eval = fwd;
    parts.inverse_eval = bwd;
    parts.provenance = Provenance::from_H;
  } else {
    parts.name = "inverse(twist(" + g->describe() + "))";
    parts.eval = bwd;
    parts.inverse_eval = fwd;
    parts.provenance = Provenance::inverse_of;
  }
  parts.sign = sign;
  return TwistMap(std::move(parts));
}

inline TwistMap twist_from_H(const Seed& seed, MonotoneSign sign = MonotoneSign::positive, double tol = 1e-10) {
  return twist_from_genfun(make_seed_genfun(seed, tol), sign);
}

// Chains ---------------------------------------------------------------------

struct ChainFactor {
  GenFunPtr gf;  // generating function of the factor, or of its inverse when negative
  MonotoneSign sign = MonotoneSign::positive;
};

struct TermEval {
  double value = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double v = 0.0;
  double qminus = 0.0;
  double qplus = 0.0;
};

/// G(q, Q; xi) = sum_j G^j(xi_j, xi_{j+1}), xi_0 = q, xi_{N+1} = Q.
class CompositeGenFun {
 public:
  CompositeGenFun() = default;
  explicit CompositeGenFun(std::vector<ChainFactor> factors) : factors_(std::move(factors)) {}

  /// Single positive factor, N = 0 (the plain generating function).
  static CompositeGenFun monotone(GenFunPtr g) { return CompositeGenFun({{std::move(g), MonotoneSign::positive}}); }

  int N() const { return static_cast<int>(factors_.size()) - 1; }
  const std::vector<ChainFactor>& factors() const { return factors_; }

  /// One term between x and y. Positive terms are L(tau_x omega, y - x);
  /// negative ones are -L(tau_y omega, x - y).
  TermEval term(std::size_t j, const Environment& env, double x, double y, bool with_value = true) const {
    const ChainFactor& f = factors_[j];
    TermEval t;
    if (f.sign == MonotoneSign::positive) {
      const Frame fr = f.gf->frame(env, x);
      t.v = y - x;
      t.qminus = fr.qminus;
      t.qplus = fr.qplus;
      const LValue l = f.gf->eval(fr, t.v, with_value);
      t.value = l.L;
      t.dx = l.Lw - l.Lv;
      t.dy = l.Lv;
    } else {
      const Frame fr = f.gf->frame(env, y);
      t.v = x - y;
      t.qminus = fr.qminus;
      t.qplus = fr.qplus;
      const LValue l = f.gf->eval(fr, t.v, with_value);
      t.value = -l.L;
      t.dx = -l.Lv;
      t.dy = -(l.Lw - l.Lv);
    }
    return t;
  }

  struct Value {
    double G = 0.0;
    double G_q = 0.0;
    double G_Q = 0.0;
    std::vector<double> G_xi;
    double min_margin = std::numeric_limits<double>::infinity();
  };

  Value evaluate(const Environment& env, double q, double Q, const std::vector<double>& xi,
                 bool with_value = true) const {
    require(static_cast<int>(xi.size()) == N(), ErrorCode::invalid_argument, "wrong number of auxiliary variables");
    Value r;
    r.G_xi.assign(xi.size(), 0.0);
    for (std::size_t j = 0; j < factors_.size(); ++j) {
      const double x = j == 0 ? q : xi[j - 1];
      const double y = j + 1 == factors_.size() ? Q : xi[j];
      const TermEval t = term(j, env, x, y, with_value);
      r.min_margin = std::min({r.min_margin, t.v - t.qminus, t.qplus - t.v});
      r.G += t.value;
      if (j == 0) r.G_q += t.dx; else r.G_xi[j - 1] += t.dx;
      if (j + 1 == factors_.size()) r.G_Q += t.dy; else r.G_xi[j] += t.dy;
    }
    return r;
  }

  /// The map generated by the chain: factors applied in list order.
  TwistMap map() const {
    std::vector<TwistMap> maps;
    for (const auto& f : factors_) maps.push_back(twist_from_genfun(f.gf, f.sign));
    return compose(maps);
  }

 private:
  std::vector<ChainFactor> factors_;
};

/// Chain with alternating signs, negative first.
inline CompositeGenFun compose_genfuns(std::vector<ChainFactor> chain) {
  require(!chain.empty(), ErrorCode::invalid_argument, "empty chain");
  for (std::size_t j = 0; j < chain.size(); ++j) {
    const MonotoneSign want = j % 2 == 0 ? MonotoneSign::negative : MonotoneSign::positive;
    require(chain[j].sign == want, ErrorCode::invalid_argument,
            "chain signs must alternate starting with a negative factor");
    require(static_cast<bool>(chain[j].gf), ErrorCode::invalid_argument, "missing generating function");
  }
  return CompositeGenFun(std::move(chain));
}

struct Action {
  double I = 0.0;
  std::vector<double> grad;  // (I_q, I_xi1, ..., I_xiN)
  double min_margin = 0.0;
};

/// I(q, xi) = G(q, q; xi) with gradient (P^N - p^0, P^{i-1} - p^i).
inline Action action(const CompositeGenFun& c, const Environment& env, double q, const std::vector<double>& xi,
                     bool with_value = true) {
  const auto v = c.evaluate(env, q, q, xi, with_value);
  require(v.min_margin >= -1e-12, ErrorCode::outside_domain, "point outside the chain domain");
  Action a;
  a.I = v.G;
  a.grad.push_back(v.G_q + v.G_Q);
  for (double g : v.G_xi) a.grad.push_back(g);
  a.min_margin = v.min_margin;
  return a;
}

/// Margin to the chain domain; negative means outside.
inline double domain_margin(const CompositeGenFun& c, const Environment& env, double q, const std::vector<double>& xi) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c.factors().size(); ++j) {
    const double x = j == 0 ? q : xi[j - 1];
    const double y = j + 1 == c.factors().size() ? q : xi[j];
    const auto& f = c.factors()[j];
    const double base = f.sign == MonotoneSign::positive ? x : y;
    const double v = f.sign == MonotoneSign::positive ? y - x : x - y;
    const Frame fr = f.gf->frame(env, base);
    m = std::min({m, v - fr.qminus, fr.qplus - v});
  }
  return m;
}

// Domain strata --------------------------------------------------------------

enum class Stratum { interior, plus, minus, outside };

struct DomainStrata {
  Stratum stratum = Stratum::interior;
  int index = -1;                     // chain term carrying the boundary
  std::vector<double> margins;        // per term: (v - Q-, Q+ - v)
  std::optional<double> inclusion_minus;  // N = 1: Q1-(q) - Q0-(q)
  std::optional<double> inclusion_plus;   // N = 1: Q0+(q) - Q1+(q)

  std::string label() const {
    switch (stratum) {
      case Stratum::interior: return "interior";
      case Stratum::outside: return "outside";
      case Stratum::plus: return "boundary+" + std::to_string(index);
      case Stratum::minus: return "boundary-" + std::to_string(index);
    }
    return "interior";
  }
};

/// Solves y + Q^{+-}(tau_y omega) = q for the factor's generating function.
inline double boundary_curve(const ChainFactor& f, const Environment& env, double q, bool plus) {
  return detail::boundary_preimage(*f.gf, env, q, plus);
}

/// Classifies (q, xi) against the closed domain. A term sitting on v = Q-
/// belongs to the + stratum, v = Q+ to the - stratum, with slack 1e-12.
inline DomainStrata domain_strata(const CompositeGenFun& c, const Environment& env, double q,
                                  const std::vector<double>& xi, double slack = 1e-12) {
  DomainStrata d;
  bool outside = false;
  for (std::size_t j = 0; j < c.factors().size(); ++j) {
    const double x = j == 0 ? q : xi[j - 1];
    const double y = j + 1 == c.factors().size() ? q : xi[j];
    const auto& f = c.factors()[j];
    const double base = f.sign == MonotoneSign::positive ? x : y;
    const double v = f.sign == MonotoneSign::positive ? y - x : x - y;
    const Frame fr = f.gf->frame(env, base);
    const double lo = v - fr.qminus;
    const double hi = fr.qplus - v;
    d.margins.push_back(lo);
    d.margins.push_back(hi);
    if (lo < -slack || hi < -slack) outside = true;
    if (d.stratum == Stratum::interior && d.index < 0) {
      if (std::abs(lo) <= slack) {
        d.stratum = Stratum::plus;
        d.index = static_cast<int>(j);
      } else if (std::abs(hi) <= slack) {
        d.stratum = Stratum::minus;
        d.index = static_cast<int>(j);
      }
    }
  }
  if (outside) {
    d.stratum = Stratum::outside;
    d.index = -1;
  }
  if (c.N() == 1) {
    const double q0m = boundary_curve(c.factors()[0], env, q, false);
    const double q0p = boundary_curve(c.factors()[0], env, q, true);
    const double q1m = boundary_curve(c.factors()[1], env, q, false);
    const double q1p = boundary_curve(c.factors()[1], env, q, true);
    d.inclusion_minus = q1m - q0m;
    d.inclusion_plus = q0p - q1p;
  }
  return d;
}

// Strip chart for N = 2 --------------------------------------------------------

/// Widths of the N = 2 domain at q: xi1 in [q - b0_plus, q + b0_minus] and
/// xi2 in [q - b2_minus, q + b2_plus].
struct StripChart {
  double b0_plus = 0.0;
  double b0_minus = 0.0;
  double b2_plus = 0.0;
  double b2_minus = 0.0;
};

inline StripChart strip_chart(const CompositeGenFun& c, const Environment& env, double q) {
  require(c.N() == 2, ErrorCode::invalid_argument, "strip chart needs a chain with N = 2");
  StripChart s;
  s.b0_plus = q - boundary_curve(c.factors()[0], env, q, true);
  s.b0_minus = boundary_curve(c.factors()[0], env, q, false) - q;
  const Frame fr = c.factors()[2].gf->frame(env, q);
  s.b2_plus = fr.qplus;
  s.b2_minus = -fr.qminus;
  return s;
}

/// (p1, p2) in [-1, 1]^2 to (xi1, xi2); p1 = +1 lands on the upper xi1 edge.
inline std::vector<double> xi_from_strip(const StripChart& s, double q, double p1, double p2) {
  return {q + 0.5 * (p1 + 1.0) * s.b0_minus + 0.5 * (p1 - 1.0) * s.b0_plus,
          q + 0.5 * (p2 + 1.0) * s.b2_plus + 0.5 * (p2 - 1.0) * s.b2_minus};
}

/// K(q, p) = I(q, xi(q, p)) with its p-gradient at fixed q.
struct StripAction {
  double K = 0.0;
  double K_p1 = 0.0;
  double K_p2 = 0.0;
  double I_xi1 = 0.0;
  double I_xi2 = 0.0;
};

inline StripAction strip_action(const CompositeGenFun& c, const Environment& env, double q, double p1, double p2) {
  const StripChart s = strip_chart(c, env, q);
  const Action a = action(c, env, q, xi_from_strip(s, q, p1, p2));
  StripAction k;
  k.K = a.I;
  k.I_xi1 = a.grad[1];
  k.I_xi2 = a.grad[2];
  k.K_p1 = 0.5 * a.grad[1] * (s.b0_plus + s.b0_minus);
  k.K_p2 = 0.5 * a.grad[2] * (s.b2_plus + s.b2_minus);
  return k;
}

}  // namespace rtl
