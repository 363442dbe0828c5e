#pragma once

// Isotopies of the strip: stationary Hamiltonian flows by implicit midpoint,
// the Moser corrector that turns a path of stationary lifts into an
// area-preserving one, and the factorization of a time-one map into
// alternating monotone twists through the shear phi0.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rtl/environment.hpp"
#include "rtl/error.hpp"
#include "rtl/numerics.hpp"
#include "rtl/observable.hpp"
#include "rtl/parallel.hpp"
#include "rtl/random.hpp"
#include "rtl/twist.hpp"

namespace rtl {

// Hamiltonians ------------------------------------------------------------------

/// density(omega, p) * time(t); an empty time polynomial is the constant 1.
struct HamiltonianPart {
  StationaryObservable density;
  Poly time;
};

struct StationaryHamiltonian {
  std::vector<HamiltonianPart> parts;

  double value(const Environment& env, double q, double p, double t) const {
    double r = 0.0;
    for (const auto& h : parts) r += h.time(t) * observe(h.density, env, q, p);
    return r;
  }
  double h_p(const Environment& env, double q, double p, double t) const {
    double r = 0.0;
    for (const auto& h : parts) r += h.time(t) * observe_dp(h.density, env, q, p);
    return r;
  }
  double h_q(const Environment& env, double q, double p, double t) const {
    double r = 0.0;
    for (const auto& h : parts) r += h.time(t) * omega_derivative(h.density, env, q, p);
    return r;
  }
  /// Hessian entries (H_qq, H_qp, H_pp).
  std::array<double, 3> hessian(const Environment& env, double q, double p, double t) const {
    std::array<double, 3> r{0.0, 0.0, 0.0};
    for (const auto& h : parts) {
      const double c = h.time(t);
      r[0] += c * omega_second_derivative(h.density, env, q, p);
      r[1] += c * omega_derivative_dp(h.density, env, q, p);
      r[2] += c * observe_dpp(h.density, env, q, p);
    }
    return r;
  }
  /// True when the Hessian is available in closed form (smooth bump kernels).
  bool twice_differentiable() const {
    return std::all_of(parts.begin(), parts.end(), [](const HamiltonianPart& h) {
      return !h.density.bumps || h.density.bumps->shape == BumpShape::smooth;
    });
  }
};

/// H = p^2/2, whose time-one flow is phi0.
inline StationaryHamiltonian kinetic_hamiltonian() {
  return {{{constant_observable(1.0, Poly{{0.0, 0.0, 0.5}}), {}}}};
}

/// p^2/2 plus a perturbation carrying the (1 - p^2)^2 profile, so H_q vanishes
/// on both boundary lines and H_p = +-1 there.
inline StationaryHamiltonian perturbed_kinetic(StationaryObservable perturbation) {
  StationaryHamiltonian h = kinetic_hamiltonian();
  h.parts.push_back({std::move(perturbation), {}});
  return h;
}

/// A * sum of bumps over Poisson centres, profile (1 - p^2)^2.
inline StationaryHamiltonian bump_hamiltonian(double amplitude, double radius,
                                              BumpShape shape = BumpShape::smooth) {
  StationaryObservable b;
  b.bumps = BumpSum{shape, radius, amplitude, edge_flat_profile()};
  return perturbed_kinetic(std::move(b));
}

/// beta * cos(2 pi theta_1) * (1 - p^2)^2 on a torus of the given dimension.
inline StationaryHamiltonian cosine_hamiltonian(double beta, std::size_t dim) {
  std::vector<int> mode(dim, 0);
  mode[0] = 1;
  StationaryObservable c;
  c.add_cosine(mode, beta, 0.0, edge_flat_profile());
  return perturbed_kinetic(std::move(c));
}

struct HamiltonianCertificate {
  double boundary_hq = 0.0;        // max |H_q| on p = +-1
  double boundary_hp_margin = 0.0; // min of +-H_p on p = +-1
  double gradient_bound = 0.0;     // max |grad H| on interior samples
  bool ok = false;
};

/// Samples the boundary conditions H_q(q, +-1, t) = 0 and +-H_p(q, +-1, t) > 0.
inline HamiltonianCertificate certify(const StationaryHamiltonian& h, const Environment& env, int samples = 200,
                                      std::uint64_t seed = 0, double q_lo = -10.0, double q_hi = 10.0) {
  HamiltonianCertificate c;
  c.boundary_hp_margin = std::numeric_limits<double>::infinity();
  Rng rng(seed, "hamiltonian-certificate");
  for (int i = 0; i < samples; ++i) {
    const double q = rng.uniform(q_lo, q_hi);
    const double t = rng.uniform();
    for (double s : {1.0, -1.0}) {
      c.boundary_hq = std::max(c.boundary_hq, std::abs(h.h_q(env, q, s, t)));
      c.boundary_hp_margin = std::min(c.boundary_hp_margin, s * h.h_p(env, q, s, t));
    }
    const double p = rng.uniform(-1.0, 1.0);
    c.gradient_bound = std::max(c.gradient_bound, std::hypot(h.h_q(env, q, p, t), h.h_p(env, q, p, t)));
  }
  c.ok = c.boundary_hq <= 1e-12 && c.boundary_hp_margin > 0.0 && std::isfinite(c.gradient_bound);
  return c;
}

// Implicit midpoint -------------------------------------------------------------

struct MidpointOptions {
  double dt = 1e-2;
  double tol = 1e-12;
  int max_iter = 100;
};

namespace detail {

inline StripPoint hamiltonian_field(const StationaryHamiltonian& h, const Environment& env, StripPoint x, double t) {
  const double p = std::clamp(x.p, -1.0, 1.0);
  return {h.h_p(env, x.q, p, t), -h.h_q(env, x.q, p, t)};
}

/// Times from t0 to t1 passing through every multiple of dt in between, so
/// flows over adjacent intervals share their steps.
inline std::vector<double> time_breaks(double t0, double t1, double dt) {
  std::vector<double> out{t0};
  if (t0 == t1) return out;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double eps = 1e-12 * dt;
  long long k = dir > 0 ? static_cast<long long>(std::floor((t0 + eps) / dt)) + 1
                        : static_cast<long long>(std::ceil((t0 - eps) / dt)) - 1;
  while (true) {
    const double g = static_cast<double>(k) * dt;
    if (dir * (t1 - g) <= eps) break;
    out.push_back(g);
    k += dir > 0 ? 1 : -1;
  }
  out.push_back(t1);
  return out;
}

}  // namespace detail

/// One implicit midpoint step x -> y, y = x + dt X((x + y)/2, t + dt/2).
/// Iterates to rounding level; fails when the tolerance is not reached.
inline StripPoint midpoint_step(const StationaryHamiltonian& h, const Environment& env, StripPoint x, double t,
                                double dt, const MidpointOptions& opt = {}) {
  const double tm = t + 0.5 * dt;
  StripPoint f = detail::hamiltonian_field(h, env, x, tm);
  StripPoint y{x.q + dt * f.q, x.p + dt * f.p};
  double diff = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iter; ++it) {
    f = detail::hamiltonian_field(h, env, {0.5 * (x.q + y.q), 0.5 * (x.p + y.p)}, tm);
    const StripPoint z{x.q + dt * f.q, x.p + dt * f.p};
    diff = std::max(std::abs(z.q - y.q), std::abs(z.p - y.p));
    y = z;
    if (diff <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(y.q))) break;
  }
  require(diff <= opt.tol, ErrorCode::divergence, "implicit midpoint iteration did not converge; reduce dt");
  return strip_point(y.q, y.p);
}

/// Jacobian of one converged midpoint step: the Cayley transform
/// (I - dt A/2)^{-1} (I + dt A/2) of A = DX at the midpoint, which has
/// determinant one because A is trace free.
inline Mat2 midpoint_step_jacobian(const StationaryHamiltonian& h, const Environment& env, StripPoint x, StripPoint y,
                                   double t, double dt) {
  const double q = 0.5 * (x.q + y.q);
  const double p = std::clamp(0.5 * (x.p + y.p), -1.0, 1.0);
  const auto [hqq, hqp, hpp] = h.hessian(env, q, p, t + 0.5 * dt);
  const Mat2 a{hqp, hpp, -hqq, -hqp};
  const double s = 0.5 * dt;
  const Mat2 plus{1.0 + s * a.a, s * a.b, s * a.c, 1.0 + s * a.d};
  const Mat2 minus{1.0 - s * a.a, -s * a.b, -s * a.c, 1.0 - s * a.d};
  const double det = minus.det();
  const Mat2 inv{minus.d / det, -minus.b / det, -minus.c / det, minus.a / det};
  return inv * plus;
}

/// Flow of (H_p, -H_q) from t0 to t1 (either direction) on the dt grid.
inline StripPoint hamiltonian_flow(const StationaryHamiltonian& h, const Environment& env, StripPoint x, double t0,
                                   double t1, const MidpointOptions& opt = {}) {
  require(opt.dt > 0.0, ErrorCode::invalid_argument, "dt must be positive");
  x = strip_point(x.q, x.p);
  const auto breaks = detail::time_breaks(t0, t1, opt.dt);
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i)
    x = midpoint_step(h, env, x, breaks[i], breaks[i + 1] - breaks[i], opt);
  return x;
}

/// Flow together with the exact Jacobian of the discrete flow.
inline std::pair<StripPoint, Mat2> hamiltonian_flow_jacobian(const StationaryHamiltonian& h, const Environment& env,
                                                             StripPoint x, double t0, double t1,
                                                             const MidpointOptions& opt = {}) {
  require(opt.dt > 0.0, ErrorCode::invalid_argument, "dt must be positive");
  x = strip_point(x.q, x.p);
  Mat2 j = Mat2::identity();
  const auto breaks = detail::time_breaks(t0, t1, opt.dt);
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double dt = breaks[i + 1] - breaks[i];
    const StripPoint y = midpoint_step(h, env, x, breaks[i], dt, opt);
    j = midpoint_step_jacobian(h, env, x, y, breaks[i], dt) * j;
    x = y;
  }
  return {x, j};
}

// Paths -------------------------------------------------------------------------

/// Lambda^{s,t}(x; omega) and, when available, its Jacobian.
using FlowFn = std::function<StripPoint(const Environment&, StripPoint, double, double)>;
using FlowJacFn = std::function<Mat2(const Environment&, StripPoint, double, double)>;

struct IsotopyPath {
  std::string kind;
  std::vector<double> mesh;
  FlowFn flow;
  FlowJacFn jacobian;
  bool area_preserving = false;
  long grid = 0;  // integration steps per unit time when flows share a fixed grid

  /// Lambda^{s,t} as a map handle with inverse Lambda^{t,s}.
  TwistMap between(double s, double t) const {
    TwistMap::Parts parts;
    parts.name = kind + "[" + std::to_string(s) + "," + std::to_string(t) + "]";
    FlowFn f = flow;
    parts.eval = [f, s, t](const Environment& env, StripPoint x) { return f(env, x, s, t); };
    parts.inverse_eval = [f, s, t](const Environment& env, StripPoint y) { return f(env, y, t, s); };
    if (jacobian) {
      FlowJacFn jf = jacobian;
      parts.jac = [jf, s, t](const Environment& env, StripPoint x) { return jf(env, x, s, t); };
      parts.inverse_jac = [jf, s, t](const Environment& env, StripPoint y) { return jf(env, y, t, s); };
    }
    parts.provenance = Provenance::from_flow;
    return TwistMap(std::move(parts));
  }
  TwistMap at(double t) const { return between(0.0, t); }
};

inline std::vector<double> uniform_mesh(int steps) {
  require(steps >= 1, ErrorCode::invalid_argument, "mesh needs at least one step");
  std::vector<double> m(steps + 1);
  for (int i = 0; i <= steps; ++i) m[i] = static_cast<double>(i) / steps;
  return m;
}

inline IsotopyPath hamiltonian_path(StationaryHamiltonian h, int mesh_steps = 10, MidpointOptions opt = {}) {
  IsotopyPath path;
  path.kind = "hamiltonian";
  path.mesh = uniform_mesh(mesh_steps);
  path.area_preserving = true;
  const double per_unit = 1.0 / opt.dt;
  if (std::abs(per_unit - std::round(per_unit)) < 1e-9) path.grid = std::lround(per_unit);
  if (h.twice_differentiable()) {
    path.jacobian = [h, opt](const Environment& env, StripPoint x, double s, double t) {
      return hamiltonian_flow_jacobian(h, env, x, s, t, opt).second;
    };
  }
  path.flow = [h = std::move(h), opt](const Environment& env, StripPoint x, double s, double t) {
    return hamiltonian_flow(h, env, x, s, t, opt);
  };
  return path;
}

inline IsotopyPath identity_path() {
  IsotopyPath path;
  path.kind = "identity";
  path.mesh = uniform_mesh(1);
  path.area_preserving = true;
  path.flow = [](const Environment&, StripPoint x, double, double) { return x; };
  path.jacobian = [](const Environment&, StripPoint, double, double) { return Mat2::identity(); };
  return path;
}

/// A path given by its maps F^t; Lambda^{s,t} = F^t o (F^s)^{-1}.
inline IsotopyPath path_from_maps(std::function<TwistMap(double)> maps, int mesh_steps = 10,
                                  bool area_preserving = false) {
  IsotopyPath path;
  path.kind = "maps";
  path.mesh = uniform_mesh(mesh_steps);
  path.area_preserving = area_preserving;
  path.flow = [maps = std::move(maps)](const Environment& env, StripPoint x, double s, double t) {
    if (s == t) return x;
    const StripPoint y = s == 0.0 ? x : invert(maps(s), env, x);
    return maps(t).parts().eval(env, y);
  };
  return path;
}

struct NormalizationReport {
  std::vector<double> times;
  std::vector<double> values;
  double max_deviation = 0.0;
  bool flagged = false;  // some value further than 1e-6 from 1
};

/// (1/2) int_{-1}^{1} E det dF^t(0, p) dp per mesh time: Gauss-Legendre in p,
/// Monte Carlo over omega.
inline NormalizationReport normalization_check(const IsotopyPath& path, const EnvSampler& sampler, int mc_samples,
                                               int workers = 0) {
  require(mc_samples >= 1, ErrorCode::invalid_argument, "mc_samples must be >= 1");
  const GaussRule& rule = gauss_legendre_64();
  NormalizationReport rep;
  rep.times = path.mesh;
  for (double t : path.mesh) {
    const TwistMap f = path.at(t);
    std::vector<double> per(mc_samples, 0.0);
    parallel_for(static_cast<std::size_t>(mc_samples), worker_count(workers), [&](std::size_t i) {
      const Environment env = sampler(i);
      double s = 0.0;
      for (std::size_t k = 0; k < rule.nodes.size(); ++k) s += rule.weights[k] * fd_jacobian(f, env, {0.0, rule.nodes[k]}).det();
      per[i] = 0.5 * s;
    });
    double mean = 0.0;
    for (double v : per) mean += v;
    mean /= mc_samples;
    rep.values.push_back(mean);
    rep.max_deviation = std::max(rep.max_deviation, std::abs(mean - 1.0));
  }
  rep.flagged = rep.max_deviation > 1e-6;
  return rep;
}

// Moser corrector ---------------------------------------------------------------

/// One q-mode of eta: eta_hat contains weight * e^{i q z} * profile(p), with
/// weight = coef * e^{2 pi i <n, theta>} carrying the omega dependence.
struct MoserAtom {
  std::vector<int> mode;
  double z = 0.0;
  std::complex<double> coef;
  Poly profile;
  std::complex<double> weight;
  std::complex<double> y_prime;  // (1/2) int (e^{(1-a)z} + e^{(a-1)z}) Y(a) da
  std::complex<double> gamma1;
  std::complex<double> gamma2;
};

struct MoserSolution {
  Poly k;   // mode-0 part of eta
  Poly h0;  // h0'' = k, h0'(-1) = h0'(1) = 0, h0(-1) = 0
  std::vector<MoserAtom> atoms;
  QuasiPeriodicEnv env;

  /// The three pieces of u = h0 + w + h. w and h grow like e^{2|z|} and
  /// cancel in the sum, so u itself is evaluated through value().
  struct Parts {
    double h0 = 0.0, w = 0.0, h = 0.0;
  };
  struct Gradient {
    double u_q = 0.0;
    double u_p = 0.0;
  };

  Parts parts(double q, double p) const;
  double value(double q, double p) const;
  Gradient gradient(double q, double p) const;
};

namespace detail {

inline Poly antiderivative(const Poly& f) {
  Poly r{{0.0}};
  const Poly g = f.trivial() ? Poly{{1.0}} : f;
  for (std::size_t i = 0; i < g.c.size(); ++i) r.c.push_back(g.c[i] / static_cast<double>(i + 1));
  return r;
}

inline Poly shift_constant(Poly f, double c) {
  if (f.c.empty()) f.c.push_back(0.0);
  f.c[0] += c;
  return f;
}

/// int_{-1}^{p} kernel(p - a) profile(a) da with 64 Gauss-Legendre nodes.
template <class K>
double profile_integral(const Poly& profile, double p, K&& kernel) {
  return gauss_integrate([&](double a) { return kernel(p - a) * profile(a); }, -1.0, p);
}

inline std::complex<double> unit_phase(double turns) {
  const double a = two_pi * turns;
  return {std::cos(a), std::sin(a)};
}

/// Neumann solution of v'' - z^2 v = Y on [-1, 1] and its derivative:
/// v = -(1/k) int cosh(k(1 + a<)) cosh(k(1 - a>)) / sinh(2k) Y, k = |z|,
/// written with exponentials that never exceed 1.
inline std::pair<double, double> neumann_profile(const Poly& y, double z, double p) {
  const double k = std::abs(z);
  const double norm = 1.0 / (2.0 * (1.0 - std::exp(-4.0 * k)));
  const auto even = [k, norm](double a, double x) {  // cosh(k(1+a)) cosh(k(1-x)) / sinh(2k), a <= x
    return norm * (std::exp(k * (a - x)) + std::exp(k * (a + x - 2.0)) + std::exp(-k * (a + x + 2.0)) +
                   std::exp(-k * (4.0 + a - x)));
  };
  const auto odd = [k, norm](double a, double x) {  // sinh(k(1-x)) cosh(k(1+a)) / sinh(2k), a <= x
    return norm * (std::exp(k * (a - x)) - std::exp(k * (a + x - 2.0)) + std::exp(-k * (a + x + 2.0)) -
                   std::exp(-k * (4.0 + a - x)));
  };
  const double left_v = gauss_integrate([&](double a) { return even(a, p) * y(a); }, -1.0, p);
  const double right_v = gauss_integrate([&](double a) { return even(-a, -p) * y(a); }, p, 1.0);
  const double left_d = gauss_integrate([&](double a) { return odd(a, p) * y(a); }, -1.0, p);
  const double right_d = gauss_integrate([&](double a) { return odd(-a, -p) * y(a); }, p, 1.0);
  return {-(left_v + right_v) / k, left_d - right_d};
}

}  // namespace detail

inline MoserSolution::Parts MoserSolution::parts(double q, double p) const {
  Parts v;
  v.h0 = h0(p);
  std::complex<double> w = 0.0, h = 0.0;
  for (const auto& a : atoms) {
    const std::complex<double> e = a.coef * detail::unit_phase(detail::mode_phase(env, a.mode, q));
    const double z = a.z;
    w += e * detail::profile_integral(a.profile, p, [z](double d) { return std::sinh(d * z) / z; });
    h += -(a.y_prime / a.weight) * e * std::cosh(z * (p + 1.0)) / (z * std::sinh(2.0 * z));
  }
  v.w = w.real();
  v.h = h.real();
  return v;
}

inline double MoserSolution::value(double q, double p) const {
  std::complex<double> v = 0.0;
  for (const auto& a : atoms) {
    const std::complex<double> e = a.coef * detail::unit_phase(detail::mode_phase(env, a.mode, q));
    v += e * detail::neumann_profile(a.profile, a.z, p).first;
  }
  return h0(p) + v.real();
}

inline MoserSolution::Gradient MoserSolution::gradient(double q, double p) const {
  Gradient g;
  g.u_p = h0.derivative()(p);
  std::complex<double> uq = 0.0, up = 0.0;
  for (const auto& a : atoms) {
    const std::complex<double> e = a.coef * detail::unit_phase(detail::mode_phase(env, a.mode, q));
    const auto [v, dv] = detail::neumann_profile(a.profile, a.z, p);
    uq += std::complex<double>(0.0, a.z) * e * v;
    up += e * dv;
  }
  g.u_q = uq.real();
  g.u_p += up.real();
  return g;
}

/// Solves Delta u = eta with u_p(q, +-1) = 0 for a trigonometric eta with
/// polynomial p-profiles, at the environment omega.
inline MoserSolution solve_moser(const StationaryObservable& eta, const QuasiPeriodicEnv& env, int workers = 1) {
  require(!eta.bumps, ErrorCode::invalid_argument, "Moser corrector needs a trigonometric density");
  validate(eta, env);
  MoserSolution sol;
  sol.env = env;
  Poly k{{0.0}};
  const auto add_poly = [](Poly& acc, const Poly& f, double scale) {
    const Poly g = f.trivial() ? Poly{{1.0}} : f;
    if (acc.c.size() < g.c.size()) acc.c.resize(g.c.size(), 0.0);
    for (std::size_t i = 0; i < g.c.size(); ++i) acc.c[i] += scale * g.c[i];
  };
  if (eta.constant != 0.0) add_poly(k, eta.constant_profile, eta.constant);
  for (const auto& t : eta.terms) {
    const bool zero_mode = std::all_of(t.mode.begin(), t.mode.end(), [](int n) { return n == 0; });
    const double f = detail::mode_frequency(env, t.mode);
    if (zero_mode) {
      add_poly(k, t.profile, t.coef.real());
      continue;
    }
    require(std::abs(f) > 1e-12 || std::abs(t.coef) == 0.0, ErrorCode::invalid_spectrum,
            "atom at z = 0 outside the mean mode");
    if (t.coef == 0.0) continue;
    MoserAtom a;
    a.mode = t.mode;
    a.z = two_pi * f;
    a.coef = t.coef;
    a.profile = t.profile.trivial() ? Poly{{1.0}} : t.profile;
    a.weight = t.coef * detail::unit_phase(detail::mode_phase(env, t.mode, 0.0));
    sol.atoms.push_back(std::move(a));
  }
  const Poly k1 = detail::antiderivative(k);
  const double total = k1(1.0) - k1(-1.0);
  require(std::abs(total) <= 1e-10, ErrorCode::precondition, "eta must have zero mean over p");
  sol.k = k;
  const Poly h1 = detail::shift_constant(k1, -k1(-1.0));
  const Poly h0 = detail::antiderivative(h1);
  sol.h0 = detail::shift_constant(h0, -h0(-1.0));

  parallel_for(sol.atoms.size(), workers, [&](std::size_t i) {
    MoserAtom& a = sol.atoms[i];
    const double z = a.z;
    const double yp = detail::profile_integral(a.profile, 1.0, [z](double d) { return std::cosh(d * z); });
    a.y_prime = a.weight * yp;
    a.gamma2 = -a.y_prime * std::exp(-z) / (z * (std::exp(2.0 * z) - std::exp(-2.0 * z)));
    a.gamma1 = std::exp(2.0 * z) * a.gamma2;
  });
  return sol;
}

inline MoserSolution solve_moser(const StationaryObservable& eta, const Environment& env, int workers = 1) {
  const auto* qp = std::get_if<QuasiPeriodicEnv>(&env);
  require(qp != nullptr, ErrorCode::invalid_argument, "Moser corrector needs a torus environment");
  return solve_moser(eta, *qp, workers);
}

struct MoserResiduals {
  double laplacian_u = 0.0;  // sup |Delta u - eta|
  double laplacian_w = 0.0;  // sup |Delta w - eta_hat|
  double laplacian_h = 0.0;  // sup |Delta h|
  double boundary_up = 0.0;  // sup |u_p(q, +-1)|
  double h0_right = 0.0;     // |h0(1)|, the Dirichlet value left free by the Neumann fit
};

namespace detail {

/// Sixth-order central second difference of f along one axis.
template <class F>
double second_difference(F&& f, double fd) {
  static constexpr double c[4] = {-49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0};
  double s = c[0] * f(0.0);
  for (int i = 1; i <= 3; ++i) s += c[i] * (f(i * fd) + f(-i * fd));
  return s / (fd * fd);
}

}  // namespace detail

/// Finite-difference Laplacians of u and of its pieces on an nq x np grid
/// over q in [0, 1), p in [-1, 1]. Stencils reach slightly past p = +-1,
/// where the closed forms extend analytically.
inline MoserResiduals moser_residuals(const MoserSolution& sol, const StationaryObservable& eta, int nq = 256,
                                      int np = 64, double fd = 5e-3) {
  MoserResiduals r;
  const Environment env = sol.env;
  StationaryObservable eta_hat = eta;
  eta_hat.constant = 0.0;
  eta_hat.terms.erase(std::remove_if(eta_hat.terms.begin(), eta_hat.terms.end(),
                                     [](const FourierTerm& t) {
                                       return std::all_of(t.mode.begin(), t.mode.end(), [](int n) { return n == 0; });
                                     }),
                      eta_hat.terms.end());
  for (int i = 0; i < nq; ++i) {
    const double q = static_cast<double>(i) / nq;
    for (int j = 0; j < np; ++j) {
      const double p = -1.0 + 2.0 * j / (np - 1);
      const auto lap = [&](auto get) {
        return detail::second_difference([&](double d) { return get(q + d, p); }, fd) +
               detail::second_difference([&](double d) { return get(q, p + d); }, fd);
      };
      const double lu = lap([&](double x, double y) { return sol.value(x, y); });
      const double lw = lap([&](double x, double y) { return sol.parts(x, y).w; });
      const double lh = lap([&](double x, double y) { return sol.parts(x, y).h; });
      r.laplacian_u = std::max(r.laplacian_u, std::abs(lu - observe(eta, env, q, p)));
      r.laplacian_w = std::max(r.laplacian_w, std::abs(lw - observe(eta_hat, env, q, p)));
      r.laplacian_h = std::max(r.laplacian_h, std::abs(lh));
    }
    for (double s : {-1.0, 1.0}) r.boundary_up = std::max(r.boundary_up, std::abs(sol.gradient(q, s).u_p));
  }
  r.h0_right = std::abs(sol.h0(1.0));
  return r;
}

struct MoserOptions {
  int flow_steps = 32;  // RK4 steps in theta
  int workers = 1;
};

/// Flow over theta in [0, 1] of X = grad u / m, m = 1 - theta * eta; the
/// time-one map G satisfies G^*((1 - eta) dx) = dx. Backward runs theta from 1 to 0.
inline StripPoint moser_flow(const MoserSolution& sol, const StationaryObservable& eta, StripPoint x,
                             bool forward = true, int steps = 32) {
  const Environment env = sol.env;
  const auto field = [&](StripPoint y, double th) {
    const double p = std::clamp(y.p, -1.0, 1.0);
    const auto g = sol.gradient(y.q, p);
    const double m = 1.0 - th * observe(eta, env, y.q, p);
    require(m > 0.0, ErrorCode::precondition, "density must stay positive along the Moser homotopy");
    return StripPoint{g.u_q / m, g.u_p / m};
  };
  const double h = (forward ? 1.0 : -1.0) / steps;
  double th = forward ? 0.0 : 1.0;
  for (int i = 0; i < steps; ++i) {
    const StripPoint k1 = field(x, th);
    const StripPoint k2 = field({x.q + 0.5 * h * k1.q, x.p + 0.5 * h * k1.p}, th + 0.5 * h);
    const StripPoint k3 = field({x.q + 0.5 * h * k2.q, x.p + 0.5 * h * k2.p}, th + 0.5 * h);
    const StripPoint k4 = field({x.q + h * k3.q, x.p + h * k3.p}, th + h);
    x.q += h / 6.0 * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q);
    x.p += h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
    x = strip_point(x.q, x.p);
    th = forward ? static_cast<double>(i + 1) / steps : 1.0 - static_cast<double>(i + 1) / steps;
  }
  return x;
}

/// A path F^t of stationary lifts with eta^t = 1 - det dF^t given in closed form.
struct DensityPath {
  std::function<TwistMap(double)> map;
  std::function<StationaryObservable(double)> eta;
};

/// G^t as a map handle for the density eta^t.
inline TwistMap moser_map(const StationaryObservable& eta, const MoserOptions& opt = {}) {
  TwistMap::Parts parts;
  parts.name = "moser";
  parts.eval = [eta, opt](const Environment& env, StripPoint x) {
    return moser_flow(solve_moser(eta, env, opt.workers), eta, x, true, opt.flow_steps);
  };
  parts.inverse_eval = [eta, opt](const Environment& env, StripPoint y) {
    return moser_flow(solve_moser(eta, env, opt.workers), eta, y, false, opt.flow_steps);
  };
  parts.provenance = Provenance::from_flow;
  return TwistMap(std::move(parts));
}

/// Lambda^t = F^t o G^t; Lambda^{s,t} = Lambda^t o (Lambda^s)^{-1}.
inline IsotopyPath moser_correct(DensityPath path, int mesh_steps = 10, MoserOptions opt = {}) {
  IsotopyPath out;
  out.kind = "corrected";
  out.mesh = uniform_mesh(mesh_steps);
  out.area_preserving = true;
  auto lambda = std::make_shared<std::function<TwistMap(double)>>([path, opt](double t) {
    return compose({moser_map(path.eta(t), opt), path.map(t)});
  });
  out.flow = [lambda](const Environment& env, StripPoint x, double s, double t) {
    if (s == t) return x;
    const StripPoint y = s == 0.0 ? x : invert((*lambda)(s), env, x);
    return (*lambda)(t)(env, y);
  };
  return out;
}

/// F^t = Phi^t_H o K^t with K^t(q, p) = (q + s(t) g(q, p), p), s = 4t(1 - t),
/// g = alpha sin(2 pi theta_1) (1 - p^2) / (2 pi). Then det dF^t = 1 + s alpha
/// cos(2 pi theta_1)(1 - p^2), F^0 = id and F^1 = Phi^1_H.
inline DensityPath sheared_flow_path(StationaryHamiltonian h, double alpha, std::size_t dim,
                                     MidpointOptions mopt = {}) {
  require(std::abs(alpha) < 1.0, ErrorCode::invalid_argument, "shear amplitude must be below 1");
  std::vector<int> mode(dim, 0);
  mode[0] = 1;
  DensityPath path;
  const auto speed = [](double t) { return 4.0 * t * (1.0 - t); };
  path.eta = [mode, alpha, speed](double t) {
    StationaryObservable e;
    e.add_cosine(mode, -speed(t) * alpha, 0.0, Poly{{1.0, 0.0, -1.0}});
    return e;
  };
  path.map = [h, alpha, speed, mopt](double t) {
    const double s = speed(t) * alpha / two_pi;
    const auto shear = [s](const Environment& env, double q, double p) {
      const auto& e = std::get<QuasiPeriodicEnv>(env);
      return s * std::sin(two_pi * wrap_unit(e.phase[0] + q * e.frequency[0])) * (1.0 - p * p);
    };
    TwistMap::Parts parts;
    parts.name = "sheared_flow";
    parts.eval = [h, t, shear, mopt](const Environment& env, StripPoint x) {
      const StripPoint k{x.q + shear(env, x.q, x.p), x.p};
      return hamiltonian_flow(h, env, k, 0.0, t, mopt);
    };
    parts.inverse_eval = [h, t, shear, mopt](const Environment& env, StripPoint y) {
      const StripPoint k = hamiltonian_flow(h, env, y, t, 0.0, mopt);
      const double q = solve_increasing([&](double u) { return u + shear(env, u, k.p) - k.q; }, k.q, 1e-14, 0.5);
      return StripPoint{q, k.p};
    };
    parts.provenance = Provenance::from_flow;
    return TwistMap(std::move(parts));
  };
  return path;
}

// Decomposition -----------------------------------------------------------------

struct DecompositionOptions {
  double q_lo = -5.0;
  double q_hi = 5.0;
  int grid_q = 40;
  int grid_p = 21;  // includes both boundary lines
  double fd_step = 1e-5;
};

struct Decomposition {
  int n = 0;
  double delta = 0.0;
  std::vector<double> deltas;            // per step
  std::vector<double> monotone_margins;  // min dQ/dp of each eta_j
  std::vector<TwistMap> factors;         // index 0 applied first
  std::vector<MonotoneSign> signs;
};

/// Sampled C^1 distance of f from the identity: max of |f(x) - x| and
/// |Df(x) - I| entries over the grid.
inline double c1_distance_from_identity(const TwistMap& f, const Environment& env, const DecompositionOptions& opt) {
  double d = 0.0;
  for (int i = 0; i < opt.grid_q; ++i) {
    const double q = opt.q_lo + (opt.q_hi - opt.q_lo) * (i + 0.5) / opt.grid_q;
    for (int j = 0; j < opt.grid_p; ++j) {
      const double p = -1.0 + 2.0 * j / (opt.grid_p - 1);
      const StripPoint y = f(env, {q, p});
      const Mat2 m = jacobian(f, env, {q, p}, opt.fd_step);
      d = std::max({d, std::abs(y.q - q), std::abs(y.p - p), std::abs(m.a - 1.0), std::abs(m.b), std::abs(m.c),
                    std::abs(m.d - 1.0)});
    }
  }
  return d;
}

/// Splits the time-one map into psi_j = Lambda^{(j-1)/n, j/n} and writes each
/// as eta_j o phi0^{-1} with eta_j = psi_j o phi0 positive monotone. Factors are
/// [phi0^{-1}, eta_1, phi0^{-1}, eta_2, ...], so compose(factors) = psi_n o ... o psi_1.
inline Decomposition decompose_isotopy(const IsotopyPath& path, const Environment& env, int n,
                                       const DecompositionOptions& opt = {}) {
  require(n >= 1, ErrorCode::invalid_argument, "decomposition needs n >= 1");
  require(path.area_preserving, ErrorCode::precondition, "decomposition needs an area-preserving path");
  Decomposition d;
  d.n = n;
  const TwistMap phi0 = shear_map();
  const TwistMap phi0_inv = inverse(phi0);
  for (int j = 1; j <= n; ++j) {
    const TwistMap psi = path.between(static_cast<double>(j - 1) / n, static_cast<double>(j) / n);
    const double dj = c1_distance_from_identity(psi, env, opt);
    d.deltas.push_back(dj);
    d.delta = std::max(d.delta, dj);
    if (dj >= 1.0 - 1e-9) {
      const int hint = static_cast<int>(std::ceil(dj * n - 1e-6)) + 1;
      fail(ErrorCode::decomposition_step, "step " + std::to_string(j) + " has C1 distance " + std::to_string(dj) +
                                              " >= 1; use n >= " + std::to_string(hint));
    }
    TwistMap::Parts parts;
    parts.name = "eta_" + std::to_string(j);
    parts.eval = [psi](const Environment& e, StripPoint x) { return psi(e, {x.q + x.p, x.p}); };
    parts.inverse_eval = [psi](const Environment& e, StripPoint y) {
      const StripPoint x = psi.parts().inverse_eval(e, y);
      return StripPoint{x.q - x.p, x.p};
    };
    if (psi.has_jacobian()) {
      parts.jac = [psi](const Environment& e, StripPoint x) {
        return psi.parts().jac(e, {x.q + x.p, x.p}) * Mat2{1.0, 1.0, 0.0, 1.0};
      };
    }
    parts.sign = MonotoneSign::positive;
    parts.provenance = Provenance::from_flow;
    const TwistMap eta(std::move(parts));
    double margin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < opt.grid_q; ++i) {
      const double q = opt.q_lo + (opt.q_hi - opt.q_lo) * (i + 0.5) / opt.grid_q;
      for (int k = 0; k < opt.grid_p; ++k)
        margin = std::min(margin, jacobian(eta, env, {q, -1.0 + 2.0 * k / (opt.grid_p - 1)}, opt.fd_step).b);
    }
    require(margin > 0.0, ErrorCode::inconsistency, "factor " + std::to_string(j) + " is not positive monotone");
    d.monotone_margins.push_back(margin);
    d.factors.push_back(phi0_inv);
    d.signs.push_back(MonotoneSign::negative);
    d.factors.push_back(eta);
    d.signs.push_back(MonotoneSign::positive);
  }
  return d;
}

/// Raises n until every step is within `target` of the identity in C^1,
/// starting from n_start and using the measured rate delta * n to jump ahead.
/// On a fixed-grid path only divisors of the grid are tried, so step ends
/// fall on grid times and the factors telescope to the time-one map.
inline Decomposition decompose_to_target(const IsotopyPath& path, const Environment& env, double target = 0.5,
                                         int n_start = 1, int n_max = 256, const DecompositionOptions& opt = {}) {
  require(target > 0.0 && target < 1.0, ErrorCode::invalid_argument, "target must lie in (0, 1)");
  const auto aligned = [&](int m) {
    if (path.grid <= 0) return m;
    for (long k = m; k <= path.grid; ++k)
      if (path.grid % k == 0) return static_cast<int>(k);
    return m;
  };
  int n = aligned(std::max(1, n_start));
  while (n <= n_max) {
    double rate = 0.0;
    try {
      Decomposition d = decompose_isotopy(path, env, n, opt);
      if (d.delta <= target) return d;
      rate = d.delta * n;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::decomposition_step) throw;
      rate = 2.0 * n;
    }
    n = aligned(std::max(n + 1, static_cast<int>(std::ceil(rate / target))));
  }
  fail(ErrorCode::decomposition_step, "no step count up to " + std::to_string(n_max) + " reaches the target");
}

}  // namespace rtl
