#pragma once

// Critical points of a stationary scalar process psi(q, omega) = psibar(tau_q omega):
// direct counting of zeros of psi', the mollified lower bound X_eps, and a
// Monte Carlo estimate of the Rice integral  int rho(0, y) |y| dy.
//
// Only trigonometric processes on a torus environment are supported. They
// are compiled into a spectrum A_j exp(2 pi i f_j q) for fast scanning.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "rtl/environment.hpp"
#include "rtl/error.hpp"
#include "rtl/numerics.hpp"
#include "rtl/observable.hpp"
#include "rtl/parallel.hpp"
#include "rtl/random.hpp"

namespace rtl {

/// psi(q) = constant + Re sum_j amp_j exp(2 pi i freq_j q), freq_j > 0.
struct Spectrum {
  double constant = 0.0;
  std::vector<double> freq;
  std::vector<std::complex<double>> amp;

  /// k-th derivative at q, evaluated directly.
  double derivative(double q, int k) const {
    double s = 0.0;
    for (std::size_t j = 0; j < freq.size(); ++j) {
      const double w = two_pi * freq[j];
      const double ph = two_pi * std::fmod(freq[j] * q, 1.0) + 0.5 * std::numbers::pi * k;
      s += std::pow(w, k) * (amp[j].real() * std::cos(ph) - amp[j].imag() * std::sin(ph));
    }
    return s + (k == 0 ? constant : 0.0);
  }
  double value(double q) const { return derivative(q, 0); }
};

/// Folds conjugate pairs of a p-independent trigonometric observable.
/// `check` may be turned off for repeated draws of an already validated process.
inline Spectrum spectrum_of(const StationaryObservable& psi, const Environment& env, bool check = true) {
  if (check) {
    require(!psi.bumps, ErrorCode::invalid_argument, "scalar processes must be trigonometric");
    require(!psi.depends_on_p(), ErrorCode::invalid_argument, "scalar process cannot depend on p");
    validate(psi, env);
  }
  Spectrum s;
  s.constant = psi.constant;
  if (psi.terms.empty()) return s;
  const auto& qp = std::get<QuasiPeriodicEnv>(env);
  for (const auto& t : psi.terms) {
    const double f = detail::mode_frequency(qp, t.mode);
    const double ph = two_pi * detail::mode_phase(qp, t.mode, 0.0);
    const std::complex<double> a = t.coef * std::complex<double>(std::cos(ph), std::sin(ph));
    if (f > 0.0) {
      s.freq.push_back(f);
      s.amp.push_back(2.0 * a);
    } else if (f == 0.0) {
      s.constant += a.real();
    }
  }
  return s;
}

/// Steps through q0, q0 + h, ... keeping exp(2 pi i f_j q) by rotation,
/// re-anchored every 4096 steps.
class SpectrumScanner {
 public:
  SpectrumScanner(const Spectrum& s, double q0, double h) : s_(&s), q0_(q0), h_(h) {
    rot_.resize(s.freq.size());
    z_.resize(s.freq.size());
    for (std::size_t j = 0; j < s.freq.size(); ++j) rot_[j] = std::polar(1.0, two_pi * s.freq[j] * h);
    for (int k = 0; k < 4; ++k) {
      coef_[k] = s.amp;
      for (std::size_t j = 0; j < s.freq.size(); ++j)
        for (int i = 0; i < k; ++i) coef_[k][j] *= std::complex<double>(0.0, two_pi * s.freq[j]);
    }
    anchor(0);
  }

  /// Derivative of order k (0 to 3) at the current grid point.
  double derivative(int k) const {
    const auto& c = coef_[k];
    double sum = 0.0;
    for (std::size_t j = 0; j < z_.size(); ++j) sum += c[j].real() * z_[j].real() - c[j].imag() * z_[j].imag();
    return sum + (k == 0 ? s_->constant : 0.0);
  }

  double q() const { return q0_ + static_cast<double>(index_) * h_; }

  void advance() {
    ++index_;
    if (index_ % 4096 == 0) {
      anchor(index_);
      return;
    }
    for (std::size_t j = 0; j < z_.size(); ++j) z_[j] *= rot_[j];
  }

 private:
  void anchor(long long i) {
    const double q = q0_ + static_cast<double>(i) * h_;
    for (std::size_t j = 0; j < z_.size(); ++j) z_[j] = std::polar(1.0, two_pi * std::fmod(s_->freq[j] * q, 1.0));
  }

  const Spectrum* s_;
  double q0_;
  double h_;
  long long index_ = 0;
  std::vector<std::complex<double>> rot_;
  std::vector<std::complex<double>> z_;
  std::array<std::vector<std::complex<double>>, 4> coef_;
};

// Counting ---------------------------------------------------------------------

struct Zero {
  double q = 0.0;
  double second = 0.0;  // psi'' at the zero
  int direction = 0;    // +1 where psi' turns positive, -1 where it turns negative, 0 if touching
};

struct CriticalCount {
  double ell = 0.0;
  int count = 0;       // zeros with |psi''| >= 1e-8 in [-ell, ell)
  int degenerate = 0;  // zeros with |psi''| < 1e-8
  bool flat = false;   // psi' vanishes identically; every grid point is a degenerate zero
  std::vector<Zero> zeros;  // every located zero, sorted
};

/// Sign changes of psi' on a grid of step `scan_step` over [-ell, ell),
/// refined by bisection to 1e-10. A grid point where psi' is exactly zero is
/// the zero itself; it is a crossing if the sign differs on either side.
inline CriticalCount count_critical(const Spectrum& s, double ell, double scan_step = 5e-4) {
  require(ell > 0.0 && scan_step > 0.0, ErrorCode::invalid_argument, "ell and scan step must be positive");
  CriticalCount out;
  out.ell = ell;
  const long long steps = static_cast<long long>(std::ceil(2.0 * ell / scan_step));
  const double h = 2.0 * ell / static_cast<double>(steps);
  if (s.freq.empty()) {
    out.flat = true;
    out.degenerate = static_cast<int>(steps);
    return out;
  }
  const auto push = [&](double q, int dir) {
    if (q < -ell || q >= ell) return;
    const double d2 = s.derivative(q, 2);
    out.zeros.push_back({q, d2, dir});
    if (std::abs(d2) < 1e-8) ++out.degenerate;
    else ++out.count;
  };
  SpectrumScanner sc(s, -ell, h);
  double last = s.derivative(-ell - h, 1);
  double last_q = -ell - h;
  double exact = std::nan("");
  for (long long k = 0; k <= steps; ++k) {
    if (k > 0) sc.advance();
    const double q = -ell + static_cast<double>(k) * h;
    const double cur = sc.derivative(1);
    if (cur == 0.0) {
      if (std::isnan(exact)) exact = q;
      continue;
    }
    const bool change = last != 0.0 && (last < 0.0) != (cur < 0.0);
    const int dir = change ? (last < 0.0 ? 1 : -1) : 0;
    if (!std::isnan(exact)) {
      push(exact, dir);
    } else if (change) {
      double lo = last_q, hi = q;
      while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if ((s.derivative(mid, 1) < 0.0) == (dir > 0)) lo = mid;
        else hi = mid;
      }
      push(0.5 * (lo + hi), dir);
    }
    exact = std::nan("");
    last = cur;
    last_q = q;
  }
  return out;
}

inline CriticalCount count_critical(const StationaryObservable& psi, const Environment& env, double ell,
                                    double scan_step = 5e-4) {
  return count_critical(spectrum_of(psi, env), ell, scan_step);
}

// Mollifier ---------------------------------------------------------------------

/// zeta(a) = exp(-1/(1 - a^2)) / M on (-1, 1), scaled: zeta_eps(q) = zeta(q/eps)/eps.
struct Mollifier {
  double eps = 1e-2;

  static double raw(double a) { return std::abs(a) >= 1.0 ? 0.0 : std::exp(-1.0 / (1.0 - a * a)); }
  static double mass() {
    static const double m = adaptive_simpson(raw, -1.0, 1.0, 1e-14);
    return m;
  }
  double operator()(double q) const { return raw(q / eps) / (mass() * eps); }
};

/// X_eps = (1/2ell) int_{-ell+eps}^{ell-eps} |zeta_eps' * 1(psi' > 0)| dq.
/// The convolution equals sum over crossings z of dir(z) zeta_eps(q - z);
/// the integral uses the trapezoid rule on a grid of step <= eps/20.
inline double mollified_count(const CriticalCount& zeros, const Mollifier& m) {
  const double ell = zeros.ell;
  require(m.eps > 0.0 && m.eps < ell / 10.0, ErrorCode::invalid_argument, "mollifier scale must be below ell/10");
  const double a = -ell + m.eps, b = ell - m.eps;
  const long long n = static_cast<long long>(std::ceil((b - a) / (m.eps / 20.0)));
  const double h = (b - a) / static_cast<double>(n);
  std::vector<Zero> cross;
  for (const auto& z : zeros.zeros)
    if (z.direction != 0) cross.push_back(z);
  std::size_t first = 0;
  double sum = 0.0;
  for (long long k = 0; k <= n; ++k) {
    const double q = a + static_cast<double>(k) * h;
    while (first < cross.size() && cross[first].q < q - m.eps) ++first;
    double v = 0.0;
    for (std::size_t i = first; i < cross.size() && cross[i].q <= q + m.eps; ++i) v += cross[i].direction * m(q - cross[i].q);
    sum += (k == 0 || k == n ? 0.5 : 1.0) * std::abs(v);
  }
  return sum * h / (2.0 * ell);
}

inline double mollified_count(const Spectrum& s, double ell, const Mollifier& m, double scan_step = 5e-4) {
  return mollified_count(count_critical(s, ell, scan_step), m);
}

// Rice integral -----------------------------------------------------------------

inline EnvSampler torus_sampler(std::vector<double> frequency, std::uint64_t seed) {
  return [frequency = std::move(frequency), seed](std::uint64_t i) -> Environment {
    Rng rng(seed, "rice-omega", i);
    std::vector<double> phase(frequency.size());
    for (double& t : phase) t = rng.uniform();
    QuasiPeriodicEnv e;
    e.frequency = frequency;
    e.phase = std::move(phase);
    return e;
  };
}

struct DerivativeSample {
  std::vector<double> d1;
  std::vector<double> d2;
};

namespace detail {

/// Positive-frequency terms with sparse modes, for repeated phase draws.
struct SparseTerm {
  std::vector<std::pair<std::size_t, int>> mode;
  std::complex<double> amp;
  double freq = 0.0;
};

inline std::vector<SparseTerm> sparse_terms(const StationaryObservable& psi, const QuasiPeriodicEnv& env) {
  std::vector<SparseTerm> out;
  for (const auto& t : psi.terms) {
    const double f = mode_frequency(env, t.mode);
    if (f <= 0.0) continue;
    SparseTerm st;
    for (std::size_t i = 0; i < t.mode.size(); ++i)
      if (t.mode[i] != 0) st.mode.emplace_back(i, t.mode[i]);
    st.amp = 2.0 * t.coef;
    st.freq = f;
    out.push_back(std::move(st));
  }
  return out;
}

}  // namespace detail

inline DerivativeSample sample_derivatives(const StationaryObservable& psi, const EnvSampler& sampler, int n,
                                           int workers = 0) {
  DerivativeSample s;
  s.d1.resize(n);
  s.d2.resize(n);
  if (n == 0) return s;
  const Environment first = sampler(0);
  spectrum_of(psi, first);
  const auto terms = detail::sparse_terms(psi, std::get<QuasiPeriodicEnv>(first));
  parallel_for(n, worker_count(workers), [&](std::size_t i) {
    const auto env = sampler(i);
    const auto& theta = std::get<QuasiPeriodicEnv>(env).phase;
    double d1 = 0.0, d2 = 0.0;
    for (const auto& t : terms) {
      double ph = 0.0;
      for (const auto& [k, m] : t.mode) ph += m * theta[k];
      ph = two_pi * wrap_unit(ph);
      const std::complex<double> z = t.amp * std::complex<double>(std::cos(ph), std::sin(ph));
      const double w = two_pi * t.freq;
      d1 += -w * z.imag();
      d2 += -w * w * z.real();
    }
    s.d1[i] = d1;
    s.d2[i] = d2;
  });
  return s;
}

/// True when (psi', psi'') concentrates on a curve: in standardized
/// coordinates, the median ratio of local covariance eigenvalues around
/// reference points is below 1e-3.
inline bool curve_like(const DerivativeSample& s, double radius = 0.15) {
  const std::size_t n = std::min<std::size_t>(s.d1.size(), 5000);
  if (n < 50) return false;
  double m1 = 0, m2 = 0, v1 = 0, v2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m1 += s.d1[i];
    m2 += s.d2[i];
  }
  m1 /= n;
  m2 /= n;
  for (std::size_t i = 0; i < n; ++i) {
    v1 += (s.d1[i] - m1) * (s.d1[i] - m1);
    v2 += (s.d2[i] - m2) * (s.d2[i] - m2);
  }
  const double sd1 = std::sqrt(v1 / n), sd2 = std::sqrt(v2 / n);
  if (sd1 == 0.0 || sd2 == 0.0) return true;
  std::vector<double> ratios;
  for (std::size_t r = 0; r < 50; ++r) {
    const std::size_t c = r * (n / 50);
    const double cx = (s.d1[c] - m1) / sd1, cy = (s.d2[c] - m2) / sd2;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    int k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = (s.d1[i] - m1) / sd1 - cx, y = (s.d2[i] - m2) / sd2 - cy;
      if (x * x + y * y > radius * radius) continue;
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
      ++k;
    }
    if (k < 5) continue;
    const double cxx = sxx / k - (sx / k) * (sx / k);
    const double cyy = syy / k - (sy / k) * (sy / k);
    const double cxy = sxy / k - (sx / k) * (sy / k);
    const double tr = cxx + cyy, det = cxx * cyy - cxy * cxy;
    const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
    const double hi = 0.5 * tr + disc, lo = 0.5 * tr - disc;
    if (hi > 0.0) ratios.push_back(std::max(lo, 0.0) / hi);
  }
  if (ratios.empty()) return true;
  std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
  return ratios[ratios.size() / 2] < 1e-3;
}

struct RiceEstimate {
  double rice = 0.0;
  double mc_sd = 0.0;
  double bandwidth = 0.0;
  int n_mc = 0;
  bool singular = false;
};

/// rice = E[|psi''| 1(|psi'| < h)] / (2h) at q = 0; mc_sd from 20 batch means.
/// h <= 0 selects sd(psi') * n^(-1/5).
inline RiceEstimate rice_from_sample(const DerivativeSample& s, double h = 0.0) {
  const int n = static_cast<int>(s.d1.size());
  RiceEstimate r;
  r.n_mc = n;
  if (h <= 0.0) {
    double m = 0.0, v = 0.0;
    for (double x : s.d1) m += x;
    m /= n;
    for (double x : s.d1) v += (x - m) * (x - m);
    h = std::sqrt(v / n) * std::pow(static_cast<double>(n), -0.2);
  }
  r.bandwidth = h;
  if (h == 0.0) {
    r.singular = true;
    return r;
  }
  constexpr int batches = 20;
  std::vector<double> means(batches, 0.0);
  for (int b = 0; b < batches; ++b) {
    const int lo = b * n / batches, hi = (b + 1) * n / batches;
    double acc = 0.0;
    for (int i = lo; i < hi; ++i)
      if (std::abs(s.d1[i]) < h) acc += std::abs(s.d2[i]);
    means[b] = acc / (2.0 * h) / std::max(1, hi - lo);
  }
  double mean = 0.0;
  for (double m : means) mean += m;
  mean /= batches;
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  r.rice = mean;
  r.mc_sd = std::sqrt(var / (batches - 1) / batches);
  r.singular = curve_like(s);
  return r;
}

inline RiceEstimate rice_estimate(const StationaryObservable& psi, const EnvSampler& sampler, int n_mc,
                                  double h = 0.0, int workers = 0) {
  require(n_mc >= 10000, ErrorCode::invalid_argument, "rice estimate needs at least 1e4 draws");
  return rice_from_sample(sample_derivatives(psi, sampler, n_mc, workers), h);
}

// Hypothesis diagnostics ------------------------------------------------------------

struct HypothesisReport {
  std::vector<double> deltas;
  std::vector<double> modulus;  // estimated E phi_ell(delta)
  double rice_h = 0.0;          // Rice estimate at the default bandwidth
  double rice_half_h = 0.0;     // and at half of it
  bool singular = false;
};

/// phi_ell(delta) = sup |psi''(q) - psi''(q')| over |q - q'| <= delta in
/// [-ell, ell], approximated on a grid of step delta/4.
inline double continuity_modulus(const Spectrum& s, double ell, double delta) {
  const double h = delta / 4.0;
  const long long n = static_cast<long long>(std::ceil(2.0 * ell / h));
  SpectrumScanner sc(s, -ell, 2.0 * ell / static_cast<double>(n));
  double window[5];
  double worst = 0.0;
  for (long long k = 0; k <= n; ++k) {
    window[k % 5] = sc.derivative(2);
    for (long long j = 1; j <= 4 && j <= k; ++j)
      worst = std::max(worst, std::abs(window[k % 5] - window[(k - j) % 5]));
    sc.advance();
  }
  return worst;
}

inline HypothesisReport hypothesis_diagnostics(const StationaryObservable& psi, const EnvSampler& sampler,
                                               int samples, double ell = 5.0, int n_mc = 20000, int workers = 0) {
  HypothesisReport r;
  r.deltas = {1e-2, 1e-3, 1e-4};
  for (double d : r.deltas) {
    std::vector<double> v(samples);
    parallel_for(samples, worker_count(workers),
                 [&](std::size_t i) { v[i] = continuity_modulus(spectrum_of(psi, sampler(i), i == 0), ell, d); });
    double m = 0.0;
    for (double x : v) m += x;
    r.modulus.push_back(m / samples);
  }
  const DerivativeSample s = sample_derivatives(psi, sampler, n_mc, workers);
  const RiceEstimate a = rice_from_sample(s);
  r.rice_h = a.rice;
  r.rice_half_h = rice_from_sample(s, 0.5 * a.bandwidth).rice;
  r.singular = a.singular;
  return r;
}

// Processes ---------------------------------------------------------------------------

/// psi = sum_j a_j cos(2 pi theta_j) over one torus coordinate per mode.
struct TrigProcess {
  std::vector<double> frequency;
  StationaryObservable psi;
};

inline TrigProcess trig_process(std::vector<double> frequency, std::vector<double> amplitude) {
  require(frequency.size() == amplitude.size() && !frequency.empty(), ErrorCode::invalid_argument,
          "frequency and amplitude lists must match");
  TrigProcess p;
  const std::size_t k = frequency.size();
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<int> mode(k, 0);
    mode[j] = 1;
    p.psi.add_cosine(mode, amplitude[j]);
  }
  p.frequency = std::move(frequency);
  return p;
}

/// n modes with frequencies 0.5 + U(0, 1) and equal amplitudes 1/sqrt(n).
inline TrigProcess random_trig_process(int n, std::uint64_t seed) {
  require(n >= 1, ErrorCode::invalid_argument, "need at least one mode");
  Rng rng(seed, "process-frequency");
  std::vector<double> f(n), a(n, 1.0 / std::sqrt(static_cast<double>(n)));
  for (double& x : f) x = 0.5 + rng.uniform();
  return trig_process(std::move(f), std::move(a));
}

/// One realization of the process: torus phases from (seed, "process-phase").
/// Certified up to lattice bound 1e4: with many random frequencies, bound 1e6
/// flags spurious relations at double precision.
inline Environment process_env(const TrigProcess& p, std::uint64_t seed, long lattice_bound = 10'000) {
  Rng rng(seed, "process-phase");
  std::vector<double> phase(p.frequency.size());
  for (double& t : phase) t = rng.uniform();
  return make_quasi_periodic(p.frequency, std::move(phase), lattice_bound);
}

// Density report -------------------------------------------------------------------------

struct DensityReport {
  double ell = 0.0;
  int count = 0;
  int degenerate = 0;
  double empirical = 0.0;
  double x_eps = 0.0;
  double eps = 0.0;
  double rice = 0.0;
  double mc_sd = 0.0;
  double bandwidth = 0.0;
  int n_mc = 0;
  bool singular = false;
};

inline DensityReport density_report(const TrigProcess& p, const Environment& env, double ell, double eps,
                                    int n_mc, std::uint64_t mc_seed, double scan_step = 5e-4, int workers = 0) {
  DensityReport d;
  const CriticalCount cc = count_critical(p.psi, env, ell, scan_step);
  d.ell = ell;
  d.count = cc.count;
  d.degenerate = cc.degenerate;
  d.empirical = cc.count / (2.0 * ell);
  d.eps = eps;
  d.x_eps = mollified_count(cc, Mollifier{eps});
  const RiceEstimate r = rice_estimate(p.psi, torus_sampler(p.frequency, mc_seed), n_mc, 0.0, workers);
  d.rice = r.rice;
  d.mc_sd = r.mc_sd;
  d.bandwidth = r.bandwidth;
  d.n_mc = r.n_mc;
  d.singular = r.singular;
  return d;
}

}  // namespace rtl
