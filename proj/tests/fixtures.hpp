#pragma once

#include <cmath>
#include <vector>

#include "rtl/environment.hpp"
#include "rtl/genfun.hpp"
#include "rtl/observable.hpp"

namespace fixtures {

inline const double sqrt2 = std::sqrt(2.0);

inline rtl::Environment torus(double t1 = 0.0, double t2 = 0.0) {
  return rtl::make_quasi_periodic({1.0, sqrt2}, {t1, t2});
}

/// c(theta) = scale * (1 + eps cos 2 pi theta_1).
inline rtl::Seed cosine_seed(double eps = 0.1, double scale = 1.0) {
  return rtl::linear_seed(rtl::cosine_coefficient(2, eps, scale));
}

/// Generating function of the shear (q, p) -> (q + p, p): H = a.
inline rtl::GenFunPtr shear_genfun() {
  return rtl::make_seed_genfun(rtl::Seed{{{rtl::constant_observable(1.0), rtl::AProfile{}}}});
}

/// [(shear)^-1, twist(H = c a)], c = scale (1 + eps cos 2 pi theta_1).
inline rtl::CompositeGenFun n1_chain(double eps = 0.05, double scale = 0.5) {
  return rtl::compose_genfuns({{shear_genfun(), rtl::MonotoneSign::negative},
                               {rtl::make_seed_genfun(cosine_seed(eps, scale)), rtl::MonotoneSign::positive}});
}

/// [(shear)^-1, twist(H = c a), (shear)^-1]; the composite is a twist for scale < 1/2.
inline rtl::CompositeGenFun n2_chain(double eps = 0.05, double scale = 0.4) {
  return rtl::compose_genfuns({{shear_genfun(), rtl::MonotoneSign::negative},
                               {rtl::make_seed_genfun(cosine_seed(eps, scale)), rtl::MonotoneSign::positive},
                               {shear_genfun(), rtl::MonotoneSign::negative}});
}

/// Closed forms for H = c a: c, c' along the shift at tau_q omega.
struct CosineCoef {
  double eps = 0.1;
  double scale = 1.0;
  double c(const rtl::Environment& env, double q) const {
    const auto& e = std::get<rtl::QuasiPeriodicEnv>(env);
    return scale * (1.0 + eps * std::cos(rtl::two_pi * (e.phase[0] + q * e.frequency[0])));
  }
  double dc(const rtl::Environment& env, double q) const {
    const auto& e = std::get<rtl::QuasiPeriodicEnv>(env);
    return -scale * eps * rtl::two_pi * e.frequency[0] * std::sin(rtl::two_pi * (e.phase[0] + q * e.frequency[0]));
  }
  double d2c(const rtl::Environment& env, double q) const {
    const auto& e = std::get<rtl::QuasiPeriodicEnv>(env);
    const double w = rtl::two_pi * e.frequency[0];
    return -scale * eps * w * w * std::cos(rtl::two_pi * (e.phase[0] + q * e.frequency[0]));
  }
};

}  // namespace fixtures
