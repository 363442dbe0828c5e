#pragma once

// Small dense linear algebra and scalar numerics shared by every module:
// 2x2 matrices, adaptive Simpson quadrature, bracketed bisection and
// Gauss-Legendre rules.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "rtl/error.hpp"

namespace rtl {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Row-major 2x2 matrix [[a, b], [c, d]].
struct Mat2 {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;

  static constexpr Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }

  double det() const { return a * d - b * c; }
  double trace() const { return a + d; }
  double max_abs() const { return std::max({std::abs(a), std::abs(b), std::abs(c), std::abs(d)}); }

  friend Mat2 operator*(const Mat2& x, const Mat2& y) {
    return {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c,
            x.c * y.b + x.d * y.d};
  }
  friend Mat2 operator-(const Mat2& x, const Mat2& y) {
    return {x.a - y.a, x.b - y.b, x.c - y.c, x.d - y.d};
  }
};

struct Eigen2 {
  std::complex<double> first;
  std::complex<double> second;
  bool real = true;
};

/// Eigenvalues of a 2x2 matrix from its trace and determinant.
inline Eigen2 eigenvalues(const Mat2& m) {
  const double tr = m.trace();
  const double det = m.det();
  const double disc = 0.25 * tr * tr - det;
  if (disc >= 0.0) {
    const double s = std::sqrt(disc);
    // Avoid cancellation for the small root.
    const double big = 0.5 * tr + (tr >= 0.0 ? s : -s);
    const double small = big != 0.0 ? det / big : 0.5 * tr - (tr >= 0.0 ? s : -s);
    return {big, small, true};
  }
  const double s = std::sqrt(-disc);
  return {{0.5 * tr, s}, {0.5 * tr, -s}, false};
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
inline std::array<double, 2> symmetric_eigenvalues(double a, double b, double d) {
  const double mean = 0.5 * (a + d);
  const double r = std::hypot(0.5 * (a - d), b);
  return {mean - r, mean + r};
}

namespace detail {

inline double simpson_step(const std::function<double(double)>& f, double a, double fa, double m,
                           double fm, double b, double fb, double whole, double tol, int depth,
                           int& budget) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || budget <= 0 || std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  --budget;
  return simpson_step(f, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1, budget) +
         simpson_step(f, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1, budget);
}

}  // namespace detail

/// Adaptive Simpson quadrature with absolute tolerance `tol`; at most 2^20 subintervals.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-10) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  int budget = 1 << 20;
  return detail::simpson_step(f, a, fa, m, fm, b, fb, whole, tol, 20, budget);
}

/// Root of a continuous function on [lo, hi] with f(lo), f(hi) of opposite sign.
/// Throws `code` when the interval does not bracket a root.
template <class F>
double bisect(F&& f, double lo, double hi, double tol = 1e-12,
              ErrorCode code = ErrorCode::precondition) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) fail(code, "bisection interval does not bracket a root");
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Solves f(x) = 0 for an increasing f by growing a bracket around `guess`.
template <class F>
double solve_increasing(F&& f, double guess, double tol = 1e-12, double step = 1.0) {
  double lo = guess;
  double hi = guess;
  double flo = f(lo);
  if (flo == 0.0) return lo;
  double width = step;
  if (flo < 0.0) {
    for (int i = 0; i < 60; ++i) {
      hi = guess + width;
      if (f(hi) >= 0.0) break;
      lo = hi;
      width *= 2.0;
    }
  } else {
    for (int i = 0; i < 60; ++i) {
      lo = guess - width;
      if (f(lo) <= 0.0) break;
      hi = lo;
      width *= 2.0;
    }
  }
  return bisect(f, lo, hi, tol);
}

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
inline GaussRule gauss_legendre(int n) {
  GaussRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

inline const GaussRule& gauss_legendre_64() {
  static const GaussRule rule = gauss_legendre(64);
  return rule;
}

/// Integral of f over [a, b] with the 64-node Gauss-Legendre rule.
template <class F>
auto gauss_integrate(F&& f, double a, double b) {
  const GaussRule& rule = gauss_legendre_64();
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  using R = decltype(f(a));
  R sum{};
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    sum += rule.weights[i] * f(mid + half * rule.nodes[i]);
  }
  return sum * half;
}

/// Dense row-major square matrix for the small systems of the critical-point search.
struct Matrix {
  std::size_t n = 0;
  std::vector<double> a;

  explicit Matrix(std::size_t size = 0) : n(size), a(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

/// Solves A x = b by Gaussian elimination with partial pivoting; empty on singular A.
inline std::vector<double> solve_dense(Matrix m, std::vector<double> b) {
  const std::size_t n = m.n;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
    if (m(piv, k) == 0.0 || !std::isfinite(m(piv, k))) return {};
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) / m(k, k);
      for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= m(i, j) * x[j];
    x[i] = s / m(i, i);
  }
  return x;
}

inline double determinant(Matrix m) {
  const std::size_t n = m.n;
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
    if (m(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
      det = -det;
    }
    det *= m(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) / m(k, k);
      for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return det;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
inline std::vector<double> symmetric_eigenvalues(Matrix m) {
  const std::size_t n = m.n;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (m(p, q) == 0.0) continue;
        const double theta = 0.5 * (m(q, q) - m(p, p)) / m(p, q);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// Fractional part in [0, 1).
inline double wrap_unit(double x) {
  double r = x - std::floor(x);
  if (r >= 1.0) r = 0.0;
  return r;
}

inline double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace rtl
