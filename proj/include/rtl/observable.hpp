#pragma once

// Stationary observables f(q, omega, p) = fbar(tau_q omega, p).
//
// An observable is a constant plus a trigonometric sum over torus modes plus
// an optional sum of bumps centred on Poisson points. Each piece carries a
// polynomial profile in p, so the same type doubles as a Hamiltonian density.
// Vector-valued observables are represented as pairs of scalar ones.

#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rtl/environment.hpp"
#include "rtl/error.hpp"
#include "rtl/numerics.hpp"

namespace rtl {

/// Polynomial in p with ascending coefficients; empty means the constant 1.
struct Poly {
  std::vector<double> c;

  bool trivial() const { return c.empty(); }
  double operator()(double p) const {
    if (c.empty()) return 1.0;
    double r = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) r = r * p + *it;
    return r;
  }
  Poly derivative() const {
    if (c.size() <= 1) return Poly{{0.0}};
    Poly d;
    for (std::size_t i = 1; i < c.size(); ++i) d.c.push_back(static_cast<double>(i) * c[i]);
    return d;
  }
};

/// (1 - p^2)^2, the usual profile vanishing to first order at p = +-1.
inline Poly edge_flat_profile() { return Poly{{1.0, 0.0, -2.0, 0.0, 1.0}}; }

struct FourierTerm {
  std::vector<int> mode;
  std::complex<double> coef;
  Poly profile;
};

enum class BumpShape { quartic, smooth, tent };

/// A * sum_i B((x_i + q)/R) * profile(p) over Poisson centres x_i.
struct BumpSum {
  BumpShape shape = BumpShape::quartic;
  double radius = 1.0;
  double amplitude = 1.0;
  Poly profile;
};

struct StationaryObservable {
  double constant = 0.0;
  Poly constant_profile;
  std::vector<FourierTerm> terms;
  std::optional<BumpSum> bumps;

  bool depends_on_p() const {
    if (constant != 0.0 && !constant_profile.trivial()) return true;
    for (const auto& t : terms)
      if (!t.profile.trivial()) return true;
    return bumps && !bumps->profile.trivial();
  }

  /// Adds a*cos(2 pi <n, theta> + phi) as a conjugate pair.
  StationaryObservable& add_cosine(std::vector<int> mode, double a, double phi = 0.0,
                                   Poly profile = {}) {
    const std::complex<double> c = 0.5 * a * std::polar(1.0, phi);
    std::vector<int> neg(mode.size());
    for (std::size_t i = 0; i < mode.size(); ++i) neg[i] = -mode[i];
    terms.push_back({std::move(mode), c, profile});
    terms.push_back({std::move(neg), std::conj(c), std::move(profile)});
    return *this;
  }
};

inline StationaryObservable constant_observable(double value, Poly profile = {}) {
  StationaryObservable o;
  o.constant = value;
  o.constant_profile = std::move(profile);
  return o;
}

inline double bump_value(BumpShape shape, double u) {
  const double a = std::abs(u);
  if (a >= 1.0) return 0.0;
  switch (shape) {
    case BumpShape::quartic: {
      const double s = 1.0 - u * u;
      return s * s;
    }
    case BumpShape::smooth:
      return std::exp(1.0 - 1.0 / (1.0 - u * u));
    case BumpShape::tent:
      return 1.0 - a;
  }
  return 0.0;
}

/// d/du and d^2/du^2 of the bump kernels; tent has no derivative at 0 and
/// quartic no second derivative at the support edge, callers guard those.
inline double bump_derivative(BumpShape shape, double u, int order) {
  if (std::abs(u) >= 1.0) return 0.0;
  const double s = 1.0 - u * u;
  switch (shape) {
    case BumpShape::quartic:
      return order == 1 ? -4.0 * u * s : 12.0 * u * u - 4.0;
    case BumpShape::smooth: {
      const double f = std::exp(1.0 - 1.0 / s);
      const double g1 = -2.0 * u / (s * s);
      if (order == 1) return f * g1;
      return f * (g1 * g1 - 2.0 / (s * s) - 8.0 * u * u / (s * s * s));
    }
    case BumpShape::tent:
      return order == 1 ? (u < 0.0 ? 1.0 : -1.0) : 0.0;
  }
  return 0.0;
}

/// True when every mode's partner -n carries the conjugate coefficient and
/// the same profile, so the trigonometric sum is real.
inline bool conjugate_symmetric(const StationaryObservable& obs, double tol = 1e-14) {
  for (const auto& t : obs.terms) {
    bool found = false;
    for (const auto& s : obs.terms) {
      if (s.mode.size() != t.mode.size()) continue;
      bool opposite = true;
      for (std::size_t i = 0; i < t.mode.size(); ++i) opposite &= s.mode[i] == -t.mode[i];
      if (opposite && std::abs(s.coef - std::conj(t.coef)) <= tol && s.profile.c == t.profile.c) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

inline void validate(const StationaryObservable& obs, const Environment& env) {
  if (!obs.terms.empty()) {
    const auto* qp = std::get_if<QuasiPeriodicEnv>(&env);
    require(qp != nullptr, ErrorCode::invalid_argument, "trigonometric observable needs a torus environment");
    for (const auto& t : obs.terms)
      require(t.mode.size() == qp->dimension(), ErrorCode::invalid_argument, "mode dimension mismatch");
    require(conjugate_symmetric(obs), ErrorCode::invalid_argument,
            "trigonometric coefficients are not conjugate symmetric");
  }
  if (obs.bumps) {
    require(std::holds_alternative<PoissonEnv>(env), ErrorCode::invalid_argument,
            "bump observable needs a Poisson environment");
    require(obs.bumps->radius > 0.0, ErrorCode::invalid_argument, "bump radius must be positive");
  }
}

namespace detail {

/// Fractional phase <n, theta + q v> reduced to [0, 1).
inline double mode_phase(const QuasiPeriodicEnv& env, const std::vector<int>& n, double q) {
  double base = 0.0;
  double freq = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    base += n[i] * env.phase[i];
    freq += n[i] * env.frequency[i];
  }
  return wrap_unit(wrap_unit(base) + wrap_unit(q * freq));
}

inline double mode_frequency(const QuasiPeriodicEnv& env, const std::vector<int>& n) {
  double freq = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) freq += n[i] * env.frequency[i];
  return freq;
}

inline void check_p(const StationaryObservable& obs, const std::optional<double>& p) {
  if (!obs.depends_on_p()) return;
  require(p.has_value(), ErrorCode::invalid_argument, "observable requires a p argument");
  require(*p >= -1.0 - 1e-12 && *p <= 1.0 + 1e-12, ErrorCode::invalid_argument,
          "p outside [-1, 1]");
}

// Sum of order-th q-derivatives of the trigonometric part, with p-profile
// (or its derivative when dp is set).
inline double fourier_part(const StationaryObservable& obs, const QuasiPeriodicEnv& env, double q,
                           double p, int order, bool dp) {
  std::complex<double> sum = 0.0;
  for (const auto& t : obs.terms) {
    const double ph = two_pi * mode_phase(env, t.mode, q);
    std::complex<double> z = t.coef * std::complex<double>(std::cos(ph), std::sin(ph));
    if (order > 0) {
      const std::complex<double> w(0.0, two_pi * mode_frequency(env, t.mode));
      for (int k = 0; k < order; ++k) z *= w;
    }
    sum += z * (dp ? t.profile.derivative()(p) : t.profile(p));
  }
  return sum.real();
}

inline double bump_part(const BumpSum& b, const PoissonEnv& env, double q, double p, bool dp, int order = 0) {
  double sum = 0.0;
  for (double x : points_in(env, -q - b.radius, -q + b.radius)) {
    const double u = (x + q) / b.radius;
    sum += order == 0 ? bump_value(b.shape, u) : bump_derivative(b.shape, u, order) / std::pow(b.radius, order);
  }
  return b.amplitude * sum * (dp ? b.profile.derivative()(p) : b.profile(p));
}

}  // namespace detail

/// fbar(tau_q omega, p).
inline double observe(const StationaryObservable& obs, const Environment& env, double q,
                      std::optional<double> p = std::nullopt) {
  detail::check_p(obs, p);
  const double pp = p.value_or(0.0);
  double r = obs.constant * obs.constant_profile(pp);
  if (!obs.terms.empty()) {
    const auto* qp = std::get_if<QuasiPeriodicEnv>(&env);
    require(qp != nullptr, ErrorCode::invalid_argument, "trigonometric observable needs a torus environment");
    r += detail::fourier_part(obs, *qp, q, pp, 0, false);
  }
  if (obs.bumps) {
    const auto* pe = std::get_if<PoissonEnv>(&env);
    require(pe != nullptr, ErrorCode::invalid_argument, "bump observable needs a Poisson environment");
    r += detail::bump_part(*obs.bumps, *pe, q, pp, false);
  }
  return r;
}

/// d/dp of the observable at fixed q.
inline double observe_dp(const StationaryObservable& obs, const Environment& env, double q, double p) {
  detail::check_p(obs, p);
  double r = obs.constant * obs.constant_profile.derivative()(p);
  if (!obs.terms.empty())
    r += detail::fourier_part(obs, std::get<QuasiPeriodicEnv>(env), q, p, 0, true);
  if (obs.bumps) r += detail::bump_part(*obs.bumps, std::get<PoissonEnv>(env), q, p, true);
  return r;
}

/// d^2/dp^2 of the observable at fixed q.
inline double observe_dpp(const StationaryObservable& obs, const Environment& env, double q, double p) {
  detail::check_p(obs, p);
  double r = obs.constant * obs.constant_profile.derivative().derivative()(p);
  for (const auto& t : obs.terms) {
    if (t.profile.trivial()) continue;
    StationaryObservable one;
    one.terms.push_back({t.mode, t.coef, t.profile.derivative().derivative()});
    r += detail::fourier_part(one, std::get<QuasiPeriodicEnv>(env), q, p, 0, false);
  }
  if (obs.bumps) {
    BumpSum b = *obs.bumps;
    b.profile = b.profile.derivative().derivative();
    r += detail::bump_part(b, std::get<PoissonEnv>(env), q, p, false);
  }
  return r;
}

/// Derivative along the shift, d/da f(q + a, omega) at a = 0. Exact for both
/// the trigonometric part and the bump kernels.
inline double omega_derivative(const StationaryObservable& obs, const Environment& env, double q,
                               std::optional<double> p = std::nullopt) {
  detail::check_p(obs, p);
  const double pp = p.value_or(0.0);
  double r = 0.0;
  if (!obs.terms.empty()) {
    const auto* qp = std::get_if<QuasiPeriodicEnv>(&env);
    require(qp != nullptr, ErrorCode::invalid_argument, "trigonometric observable needs a torus environment");
    r += detail::fourier_part(obs, *qp, q, pp, 1, false);
  }
  if (obs.bumps) {
    require(obs.bumps->shape != BumpShape::tent, ErrorCode::non_differentiable,
            "tent bump profile is not differentiable");
    r += detail::bump_part(*obs.bumps, std::get<PoissonEnv>(env), q, pp, false, 1);
  }
  return r;
}

/// Second shift derivative; bumps must use the smooth kernel.
inline double omega_second_derivative(const StationaryObservable& obs, const Environment& env, double q,
                                      std::optional<double> p = std::nullopt) {
  detail::check_p(obs, p);
  const double pp = p.value_or(0.0);
  double r = 0.0;
  if (!obs.terms.empty()) r += detail::fourier_part(obs, std::get<QuasiPeriodicEnv>(env), q, pp, 2, false);
  if (obs.bumps) {
    require(obs.bumps->shape == BumpShape::smooth, ErrorCode::non_differentiable,
            "bump profile is not twice differentiable");
    r += detail::bump_part(*obs.bumps, std::get<PoissonEnv>(env), q, pp, false, 2);
  }
  return r;
}

/// Mixed derivative d^2/(da dp); used for Hamiltonian vector fields.
inline double omega_derivative_dp(const StationaryObservable& obs, const Environment& env, double q, double p) {
  detail::check_p(obs, p);
  double r = 0.0;
  if (!obs.terms.empty()) r += detail::fourier_part(obs, std::get<QuasiPeriodicEnv>(env), q, p, 1, true);
  if (obs.bumps) {
    require(obs.bumps->shape != BumpShape::tent, ErrorCode::non_differentiable,
            "tent bump profile is not differentiable");
    r += detail::bump_part(*obs.bumps, std::get<PoissonEnv>(env), q, p, true, 1);
  }
  return r;
}

}  // namespace rtl
