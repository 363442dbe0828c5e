#pragma once

// Stationary ergodic environments: a sample point omega together with the
// shift action tau_a. Two concrete families are supported: a translation on
// the torus [0,1)^k driven by a frequency vector, and a Poisson point set on
// the line whose cells are regenerated on demand from a base seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "rtl/error.hpp"
#include "rtl/numerics.hpp"
#include "rtl/random.hpp"

namespace rtl {

/// omega = phase on the torus; tau_a omega = phase + a * frequency (mod 1).
struct QuasiPeriodicEnv {
  std::vector<double> frequency;
  std::vector<double> phase;
  long lattice_bound = 1'000'000;

  std::size_t dimension() const { return frequency.size(); }
};

/// omega = {x_i}; tau_a omega = {x_i + a}. Base points live in unit cells
/// [i, i+1) drawn from hash(cell_seed, i); `offset` accumulates shifts.
struct PoissonEnv {
  double intensity = 1.0;
  std::uint64_t cell_seed = 0;
  double offset = 0.0;
  bool lazy = true;
  /// Base points. For lazy environments this is the materialized window
  /// (informational); otherwise it is the complete configuration.
  std::vector<double> points;
  double window_lo = -std::numeric_limits<double>::infinity();
  double window_hi = std::numeric_limits<double>::infinity();
};

using Environment = std::variant<QuasiPeriodicEnv, PoissonEnv>;

/// Draws omega_i for Monte Carlo averages over the environment.
using EnvSampler = std::function<Environment(std::uint64_t index)>;

enum class EnvKind { quasi_periodic, poisson };

/// Description consumed by sample_env.
struct EnvSpec {
  EnvKind kind = EnvKind::quasi_periodic;
  std::vector<double> frequency;
  std::optional<std::vector<double>> phase;  // fixed phase instead of a sampled one
  long lattice_bound = 1'000'000;
  double intensity = 1.0;
  double window_lo = -10.0;
  double window_hi = 10.0;
  double margin = 1.0;
};

namespace detail {

inline bool pair_commensurate(double a, double b, long bound) {
  // Best rational approximations of a/b are continued-fraction convergents.
  if (std::abs(a) > std::abs(b)) std::swap(a, b);
  const double r = std::abs(a / b);
  const double eps = 64.0 * std::numeric_limits<double>::epsilon();
  double h1 = 1.0, h2 = 0.0, k1 = 0.0, k2 = 1.0;
  double x = r;
  for (int it = 0; it < 64; ++it) {
    const double ai = std::floor(x);
    const double h = ai * h1 + h2;
    const double k = ai * k1 + k2;
    if (k > static_cast<double>(bound)) return false;
    if (k >= 1.0 && std::abs(k * r - h) <= eps * (1.0 + k)) return true;
    const double frac = x - ai;
    if (frac <= 0.0) return true;
    x = 1.0 / frac;
    h2 = h1;
    h1 = h;
    k2 = k1;
    k1 = k;
  }
  return false;
}

inline bool box_commensurate(const std::vector<double>& v, long bound) {
  // Exhaustive search over integer vectors with |n|_inf <= bound.
  const std::size_t k = v.size();
  std::vector<long> n(k, -bound);
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  const double eps = 64.0 * std::numeric_limits<double>::epsilon();
  while (true) {
    bool zero = true;
    double dot = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (n[i] != 0) zero = false;
      dot += n[i] * v[i];
      norm += std::abs(static_cast<double>(n[i]));
    }
    if (!zero && std::abs(dot) <= eps * (1.0 + norm) * scale) return true;
    std::size_t i = 0;
    while (i < k && n[i] == bound) n[i++] = -bound;
    if (i == k) return false;
    ++n[i];
  }
}

}  // namespace detail

/// Checks <n, v> != 0 for nonzero integer n up to the lattice bound. Pairs are
/// certified up to `bound` by continued fractions; for k >= 3 full k-tuples are
/// enumerated only in a small box (2b+1)^k <= 2e5.
inline bool certify_irrational(const std::vector<double>& v, long bound) {
  for (double x : v) {
    if (x == 0.0 || !std::isfinite(x)) return false;
  }
  if (bound <= 0) return true;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j)
      if (detail::pair_commensurate(v[i], v[j], bound)) return false;
  if (v.size() >= 3) {
    long b = 0;
    while (std::pow(2.0 * (b + 1) + 1.0, static_cast<double>(v.size())) <= 2e5 && b < bound) ++b;
    if (b > 0 && detail::box_commensurate(v, b)) return false;
  }
  return true;
}

inline QuasiPeriodicEnv make_quasi_periodic(std::vector<double> frequency, std::vector<double> phase,
                                            long lattice_bound = 1'000'000) {
  require(!frequency.empty(), ErrorCode::invalid_argument, "empty frequency vector");
  require(frequency.size() == phase.size(), ErrorCode::invalid_argument,
          "phase and frequency dimensions differ");
  require(certify_irrational(frequency, lattice_bound), ErrorCode::precondition,
          "frequency vector has an integer relation within the lattice bound");
  for (double& t : phase) t = wrap_unit(t);
  return {std::move(frequency), std::move(phase), lattice_bound};
}

/// Points of cell [i, i+1) for a base seed; bit-reproducible.
inline std::vector<double> poisson_cell(std::uint64_t cell_seed, double intensity, long long cell) {
  Rng rng(cell_seed, "poisson-cell", static_cast<std::uint64_t>(cell));
  std::poisson_distribution<int> count_dist(intensity);
  const int count = count_dist(rng.engine());
  std::vector<double> pts(count);
  for (double& x : pts) x = static_cast<double>(cell) + rng.uniform();
  std::sort(pts.begin(), pts.end());
  return pts;
}

/// Points of the shifted configuration lying in [lo, hi], sorted.
inline std::vector<double> points_in(const PoissonEnv& env, double lo, double hi) {
  std::vector<double> out;
  const double blo = lo - env.offset;
  const double bhi = hi - env.offset;
  if (!env.lazy) {
    require(blo >= env.window_lo && bhi <= env.window_hi, ErrorCode::outside_domain,
            "evaluation outside the generated Poisson window");
    for (double x : env.points)
      if (x >= blo && x <= bhi) out.push_back(x + env.offset);
    return out;
  }
  const auto first = static_cast<long long>(std::floor(blo));
  const auto last = static_cast<long long>(std::floor(bhi));
  for (long long c = first; c <= last; ++c) {
    for (double x : poisson_cell(env.cell_seed, env.intensity, c))
      if (x >= blo && x <= bhi) out.push_back(x + env.offset);
  }
  return out;
}

inline PoissonEnv make_poisson_points(std::vector<double> points) {
  PoissonEnv env;
  std::sort(points.begin(), points.end());
  require(std::adjacent_find(points.begin(), points.end()) == points.end(),
          ErrorCode::invalid_argument, "Poisson points must be strictly increasing");
  env.lazy = false;
  env.points = std::move(points);
  env.intensity = 1.0;
  return env;
}

/// Deterministic environment for (spec, seed).
inline Environment sample_env(const EnvSpec& spec, std::uint64_t seed) {
  if (spec.kind == EnvKind::quasi_periodic) {
    require(!spec.frequency.empty(), ErrorCode::invalid_argument, "empty frequency vector");
    std::vector<double> phase;
    if (spec.phase) {
      phase = *spec.phase;
    } else {
      Rng rng(seed, "torus-phase");
      phase.resize(spec.frequency.size());
      for (double& t : phase) t = rng.uniform();
    }
    return make_quasi_periodic(spec.frequency, std::move(phase), spec.lattice_bound);
  }
  require(std::isfinite(spec.intensity) && spec.intensity > 0.0, ErrorCode::invalid_argument,
          "Poisson intensity must be positive");
  require(spec.window_lo <= spec.window_hi && spec.margin >= 0.0, ErrorCode::invalid_argument,
          "invalid Poisson window");
  PoissonEnv env;
  env.intensity = spec.intensity;
  env.cell_seed = substream_seed(seed, "poisson-env");
  env.lazy = true;
  env.window_lo = spec.window_lo - spec.margin;
  env.window_hi = spec.window_hi + spec.margin;
  env.points = points_in(env, env.window_lo, env.window_hi);
  return env;
}

/// tau_a applied to omega.
inline Environment shift(const Environment& env, double a) {
  if (const auto* qp = std::get_if<QuasiPeriodicEnv>(&env)) {
    QuasiPeriodicEnv out = *qp;
    for (std::size_t i = 0; i < out.phase.size(); ++i)
      out.phase[i] = wrap_unit(out.phase[i] + a * out.frequency[i]);
    return out;
  }
  PoissonEnv out = std::get<PoissonEnv>(env);
  out.offset += a;
  return out;
}

/// Circular distance between two torus phases (sup over coordinates).
inline double torus_distance(const std::vector<double>& x, const std::vector<double>& y) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = std::abs(x[i] - y[i]);
    d = std::min(d, 1.0 - d);
    m = std::max(m, d);
  }
  return m;
}

}  // namespace rtl
