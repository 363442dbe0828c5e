#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "rtl/critical.hpp"

using namespace rtl;

namespace {

CompositeGenFun cosine_chain(double eps = 0.1) {
  return CompositeGenFun::monotone(make_seed_genfun(fixtures::cosine_seed(eps)));
}

CompositeGenFun degenerate_chain() {
  return compose_genfuns(
      {{fixtures::shear_genfun(), MonotoneSign::negative}, {fixtures::shear_genfun(), MonotoneSign::positive}});
}

// psi = 1/(2c) has psi'' = -c''/(2c^2) + c'^2/c^3.
double psi_second(const fixtures::CosineCoef& k, const Environment& env, double q) {
  const double c = k.c(env, q), dc = k.dc(env, q), d2c = k.d2c(env, q);
  return -d2c / (2 * c * c) + dc * dc / (c * c * c);
}

}  // namespace

TEST(Critical, FlowReachesNearestMaximum) {
  const auto c = cosine_chain();
  const auto env = fixtures::torus();
  const Trajectory tr = gradient_flow(c, env, {0.3});
  EXPECT_EQ(tr.stop, FlowStop::converged);
  EXPECT_NEAR(tr.points.back()[0], 0.5, 1e-5);
  for (std::size_t i = 1; i < tr.values.size(); ++i) EXPECT_GE(tr.values[i], tr.values[i - 1] - 1e-12);
  // Scalar Newton on the closed-form psi' = -c'/(2c^2) from the flow limit.
  const fixtures::CosineCoef k;
  double q = tr.points.back()[0];
  for (int i = 0; i < 20; ++i) {
    const double c1 = k.c(env, q), d1 = k.dc(env, q);
    q -= (-d1 / (2 * c1 * c1)) / psi_second(k, env, q);
  }
  EXPECT_NEAR(q, 0.5, 1e-12);
}

TEST(Critical, FlowFromCriticalPointHasZeroLength) {
  const Trajectory tr = gradient_flow(cosine_chain(), fixtures::torus(), {0.5});
  EXPECT_EQ(tr.points.size(), 1u);
  EXPECT_EQ(tr.stop, FlowStop::converged);
  EXPECT_FALSE(tr.degenerate);
}

TEST(Critical, DegenerateChainStopsImmediately) {
  const Trajectory tr = gradient_flow(degenerate_chain(), fixtures::torus(0.2, 0.4), {0.7, 0.9});
  EXPECT_EQ(tr.points.size(), 1u);
  EXPECT_TRUE(tr.degenerate);
}

TEST(Critical, FlowNeedsInteriorStart) {
  EXPECT_THROW(gradient_flow(fixtures::n1_chain(), fixtures::torus(), {0.0, 1.0}), Error);
  EXPECT_THROW(gradient_flow(fixtures::n1_chain(), fixtures::torus(), {0.0, 3.0}), Error);
}

TEST(Critical, FlowIsMonotoneForChains) {
  const auto env = fixtures::torus(0.3, 0.9);
  for (const auto& c : {fixtures::n1_chain(), fixtures::n2_chain()}) {
    Rng rng(4, "flow-monotone");
    for (int i = 0; i < 10; ++i) {
      const double q = rng.uniform(-3, 3);
      ActionPoint y(c.N() + 1, q);
      for (int j = 1; j <= c.N(); ++j) y[j] += rng.uniform(-0.3, 0.3);
      const Trajectory tr = gradient_flow(c, env, y);
      EXPECT_NE(tr.stop, FlowStop::stalled);
      for (std::size_t k = 1; k < tr.values.size(); ++k) EXPECT_GE(tr.values[k], tr.values[k - 1] - 1e-12);
    }
  }
}

TEST(Critical, CosineFamilyCriticalGrid) {
  const auto c = cosine_chain();
  const auto env = fixtures::torus();
  SearchWindow w;
  w.ell = 2.0;
  w.grid = 0.01;
  const CriticalSet s = find_critical_points(c, env, w);
  EXPECT_FALSE(s.constant);
  // Oracle: sign changes of the closed-form psi' on a dense scan of [-2, 2).
  const fixtures::CosineCoef k;
  std::vector<double> expected;
  const double step = 1e-3;
  for (double q = -2.0 - step / 2; q < 2.0 - step; q += step) {
    const double a = -k.dc(env, q), b = -k.dc(env, q + step);
    if ((a < 0) != (b < 0)) expected.push_back(std::round(2 * (q + step / 2)) / 2);
  }
  ASSERT_EQ(expected.size(), 8u);
  ASSERT_EQ(s.points.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(s.points[i].q, expected[i], 1e-8);
    EXPECT_LE(s.points[i].grad_norm, 1e-8);
    EXPECT_LT(s.points[i].fp_residual, 1e-7);
    const bool at_integer = std::abs(expected[i] - std::round(expected[i])) < 1e-9;
    EXPECT_EQ(s.points[i].hessian_class, at_integer ? HessianClass::min : HessianClass::max);
  }
}

TEST(Critical, ConstantPsiIsFlagged) {
  SearchWindow w;
  w.ell = 2.0;
  const CriticalSet s = find_critical_points(cosine_chain(0.0), fixtures::torus(), w);
  EXPECT_TRUE(s.constant);
  EXPECT_TRUE(s.points.empty());
  const CriticalSet d = find_critical_points(degenerate_chain(), fixtures::torus(), w);
  EXPECT_TRUE(d.constant);
}

TEST(Critical, SearchIsWorkerIndependent) {
  SearchWindow w;
  w.ell = 2.0;
  const auto env = fixtures::torus(0.3, 0.9);
  const auto a = find_critical_points(fixtures::n1_chain(), env, w, 1);
  const auto b = find_critical_points(fixtures::n1_chain(), env, w, 4);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].q, b.points[i].q);
    EXPECT_EQ(a.points[i].xi, b.points[i].xi);
  }
}

TEST(Critical, ChainFixedPointsRecovered) {
  // Fixed points of the N = 1 chain sit where c' = 0: theta_1 + q in Z/2.
  const auto env = fixtures::torus(0.3, 0.9);
  SearchWindow w;
  w.ell = 3.0;
  for (const auto& c : {fixtures::n1_chain(), fixtures::n2_chain()}) {
    const CriticalSet s = find_critical_points(c, env, w);
    std::vector<double> expected;
    for (int k = -20; k <= 20; ++k) {
      const double q = -0.3 + 0.5 * k;
      if (q >= -3.0 && q < 3.0) expected.push_back(q);
    }
    ASSERT_EQ(s.points.size(), expected.size()) << c.N();
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_NEAR(s.points[i].q, expected[i], 1e-8);
      EXPECT_LT(s.points[i].fp_residual, 1e-8);
      EXPECT_NEAR(s.points[i].fixed_point.p, 0.0, 1e-8);
    }
  }
}

TEST(Critical, FixedPointFromCriticalExamples) {
  const auto c = cosine_chain();
  const auto env = fixtures::torus();
  for (double q : {0.5, 0.0}) {
    CriticalPoint cp;
    cp.q = q;
    const StripPoint x = fixed_point_from_critical(c, env, cp);
    EXPECT_NEAR(x.q, q, 1e-15);
    EXPECT_NEAR(x.p, 0.0, 1e-12);
    EXPECT_LT(cp.fp_residual, 1e-9);
  }
  CriticalPoint d;
  d.q = 0.37;
  d.xi = {0.81};
  fixed_point_from_critical(degenerate_chain(), env, d);
  EXPECT_LT(d.fp_residual, 1e-10);
}

TEST(Critical, NonCriticalPointIsInconsistent) {
  CriticalPoint cp;
  cp.q = 0.25;  // psi' != 0 here; the caller's grad_norm is wrong
  try {
    fixed_point_from_critical(cosine_chain(), fixtures::torus(), cp);
    FAIL() << "expected an inconsistency error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::inconsistency);
  }
  cp.grad_norm = 1e-3;
  EXPECT_THROW(fixed_point_from_critical(cosine_chain(), fixtures::torus(), cp), Error);
}

TEST(Critical, MinimumOfPsiGivesPositiveType) {
  const auto c = cosine_chain();
  const auto env = fixtures::torus();
  CriticalPoint cp;
  cp.q = 0.0;
  const auto cl = classify_critical(c, env, cp);
  const fixtures::CosineCoef k;
  const double psi2 = psi_second(k, env, 0.0);
  EXPECT_NEAR(psi2, 1.6313, 1e-4);
  EXPECT_NEAR(cl.det_hessian, psi2, 1e-4);
  // lambda + 1/lambda = 2 + psi''/c.
  const double tr = 2.0 + psi2 / 1.1;
  const double l1 = 0.5 * (tr + std::sqrt(tr * tr - 4.0));
  EXPECT_NEAR(cl.direct.lambda1.real(), l1, 1e-4);
  EXPECT_NEAR(cl.direct.lambda2.real(), 1.0 / l1, 1e-4);
  EXPECT_NEAR(l1, 3.17, 5e-3);
  EXPECT_EQ(cl.rule, FixedPointType::positive);
  EXPECT_TRUE(cl.rule_agrees);
  EXPECT_NEAR(cl.predicted_trace, tr, 1e-5);
}

TEST(Critical, MaximumOfPsiIsElliptic) {
  // The sign rule calls q = 0.5 negative; the trace 2 + psi''/c = -0.708 says
  // the eigenvalues are non-real.
  const auto c = cosine_chain();
  const auto env = fixtures::torus();
  CriticalPoint cp;
  cp.q = 0.5;
  const auto cl = classify_critical(c, env, cp);
  const double psi2 = psi_second(fixtures::CosineCoef{}, env, 0.5);
  EXPECT_LT(psi2, 0.0);
  EXPECT_EQ(cl.rule, FixedPointType::negative);
  EXPECT_NEAR(cl.direct.trace, 2.0 + psi2 / 0.9, 1e-5);
  EXPECT_EQ(cl.direct.type, FixedPointType::non_real_or_mixed);
  EXPECT_FALSE(cl.rule_agrees);
  EXPECT_TRUE(cl.trace_agrees);
  EXPECT_TRUE(cl.det_trace_sign_match);
}

TEST(Critical, DegenerateChainClassifiedDegenerate) {
  CriticalPoint cp;
  cp.q = 0.1;
  cp.xi = {0.3};
  EXPECT_TRUE(classify_critical(degenerate_chain(), fixtures::torus(), cp).degenerate);
}

TEST(Critical, ChainSecondDerivativesMatchClosedForm) {
  // For [(shear)^-1, twist(c a)] with u = q - xi:
  //   I = (c(xi) - 1) u^2/2 + 1/(2 c(xi)) - 1/2,
  // so at u = 0, c' = 0: det D^2 I = (c - 1) psi1'' and Trace DF - 2 = psi1'' (1 - c)/c
  // with psi1 = 1/(2c). The two signs are opposite whenever c < 1.
  const auto env = fixtures::torus(0.3, 0.9);
  const auto chain = fixtures::n1_chain();
  SearchWindow w;
  w.ell = 2.0;
  const CriticalSet s = find_critical_points(chain, env, w);
  ASSERT_FALSE(s.points.empty());
  const fixtures::CosineCoef k{0.05, 0.5};
  for (const auto& cp : s.points) {
    const double c = k.c(env, cp.q);
    const double psi1 = psi_second(k, env, cp.q);
    const auto cl = classify_critical(chain, env, cp);
    EXPECT_NEAR(cl.det_hessian, (c - 1.0) * psi1, 1e-4);
    EXPECT_NEAR(cl.direct.trace - 2.0, psi1 * (1.0 - c) / c, 1e-4);
    EXPECT_NEAR(cl.predicted_trace, cl.direct.trace, 1e-5);
    EXPECT_FALSE(cl.det_trace_sign_match);
    EXPECT_TRUE(cl.trace_agrees);
  }
}

TEST(Critical, HessianStencilsAgree) {
  const auto env = fixtures::torus(0.3, 0.9);
  for (const auto& c : {cosine_chain(), fixtures::n1_chain(), fixtures::n2_chain()}) {
    Rng rng(6, "stencil");
    for (int i = 0; i < 20; ++i) {
      const double q = rng.uniform(-2, 2);
      ActionPoint y(c.N() + 1, q);
      for (int j = 1; j <= c.N(); ++j) y[j] += rng.uniform(-0.3, 0.3);
      const Matrix a = action_hessian(c, env, y, 1e-5);
      const Matrix b = action_hessian(c, env, y, 1e-4);
      double scale = 0.0;
      for (double x : a.a) scale = std::max(scale, std::abs(x));
      for (std::size_t k = 0; k < a.a.size(); ++k) EXPECT_LE(std::abs(a.a[k] - b.a[k]), 1e-2 * scale);
    }
  }
}

TEST(Critical, CriticalSetIsStationary) {
  EnvSpec spec;
  spec.frequency = {1.0, fixtures::sqrt2};
  const Environment env = sample_env(spec, 17);
  const auto c = cosine_chain();
  SearchWindow w;
  w.ell = 3.0;
  const auto base = find_critical_points(c, env, w);
  Rng rng(8, "stationary-set");
  for (int i = 0; i < 5; ++i) {
    const double a = rng.uniform(-0.5, 0.5);
    const auto moved = find_critical_points(c, shift(env, a), w);
    for (const auto& p : base.points) {
      if (std::abs(p.q) > 2.0) continue;
      double best = 1e9;
      for (const auto& m : moved.points) best = std::min(best, std::abs(m.q - (p.q - a)));
      EXPECT_LE(best, w.dedupe_radius) << p.q << " " << a;
    }
  }
}

TEST(Critical, GradientPointsInwardOnN1Boundary) {
  // On the + edge xi = Q0-(q): I_q > 0 and I_xi < 0; on the - edge the reverse.
  const auto env = fixtures::torus(0.3, 0.9);
  const auto chain = fixtures::n1_chain();
  Rng rng(9, "inward");
  for (int i = 0; i < 200; ++i) {
    const double q = rng.uniform(-5, 5);
    const double top = boundary_curve(chain.factors()[0], env, q, false);
    const double bottom = boundary_curve(chain.factors()[0], env, q, true);
    const Action ap = action(chain, env, q, {top});
    const Action am = action(chain, env, q, {bottom});
    EXPECT_GT(ap.grad[0], 0.0);
    EXPECT_LT(ap.grad[1], 0.0);
    EXPECT_LT(am.grad[0], 0.0);
    EXPECT_GT(am.grad[1], 0.0);
    EXPECT_EQ(domain_strata(chain, env, q, {top}).label(), "boundary+0");
    EXPECT_EQ(domain_strata(chain, env, q, {bottom}).label(), "boundary-0");
  }
}

TEST(Critical, StripChartSignsForN2) {
  const auto env = fixtures::torus(0.3, 0.9);
  const auto chain = fixtures::n2_chain();
  Rng rng(10, "strip-chart");
  const double h = 1e-6;
  for (int i = 0; i < 200; ++i) {
    const double q = rng.uniform(-5, 5);
    const double p1 = rng.uniform(-1 + 2 * h, 1 - 2 * h);
    const double p2 = rng.uniform(-1 + 2 * h, 1 - 2 * h);
    const StripChart s = strip_chart(chain, env, q);
    EXPECT_GE(domain_margin(chain, env, q, xi_from_strip(s, q, p1, p2)), -1e-12);
    const StripAction k = strip_action(chain, env, q, p1, p2);
    const double fd1 = (strip_action(chain, env, q, p1 + h, p2).K - strip_action(chain, env, q, p1 - h, p2).K) / (2 * h);
    const double fd2 = (strip_action(chain, env, q, p1, p2 + h).K - strip_action(chain, env, q, p1, p2 - h).K) / (2 * h);
    EXPECT_NEAR(k.K_p1, fd1, 1e-5);
    EXPECT_NEAR(k.K_p2, fd2, 1e-5);
    EXPECT_EQ(k.K_p1 > 0, k.I_xi1 > 0);
    EXPECT_EQ(k.K_p2 > 0, k.I_xi2 > 0);
    for (double e : {-1.0, 1.0}) {
      EXPECT_LT(e * strip_action(chain, env, q, e, p2).I_xi1, 0.0);
      EXPECT_LT(e * strip_action(chain, env, q, p1, e).I_xi2, 0.0);
      EXPECT_LT(e * strip_action(chain, env, q, e, p2).K_p1, 0.0);
      EXPECT_LT(e * strip_action(chain, env, q, p1, e).K_p2, 0.0);
    }
  }
}

TEST(Critical, CensusCounts) {
  const auto c = cosine_chain();
  const Census cs = growth_census(c, fixtures::torus(), {1.0, 2.0, 3.0});
  EXPECT_EQ(cs.counts, (std::vector<int>{4, 8, 12}));
  for (double d : cs.densities) EXPECT_DOUBLE_EQ(d, 2.0);
  EXPECT_TRUE(cs.unbounded_both_sides);
  const Census flat = growth_census(cosine_chain(0.0), fixtures::torus(), {1.0, 2.0, 3.0});
  EXPECT_EQ(flat.counts, (std::vector<int>{0, 0, 0}));
  EXPECT_TRUE(flat.constant);
  EXPECT_THROW(growth_census(c, fixtures::torus(), {2.0, 1.0}), Error);
}

TEST(Critical, PoissonBumpCensusGrows) {
  EnvSpec spec;
  spec.kind = EnvKind::poisson;
  spec.intensity = 1.0;
  const Environment env = sample_env(spec, 23);
  StationaryObservable coef = constant_observable(1.0);
  coef.bumps = BumpSum{BumpShape::smooth, 0.4, 0.2, {}};
  const auto chain = CompositeGenFun::monotone(make_seed_genfun(linear_seed(coef)));
  // Between the bump clusters psi is flat: those stretches are reported as a
  // degenerate continuum and kept out of the counts. The windows are chosen so
  // each one reaches a new cluster of this realization.
  const Census cs = growth_census(chain, env, {2.0, 8.0, 12.0});
  EXPECT_FALSE(cs.constant);
  EXPECT_TRUE(cs.continuum);
  for (std::size_t i = 1; i < cs.counts.size(); ++i) {
    EXPECT_GE(cs.counts[i], cs.counts[i - 1]);
    EXPECT_GT(cs.max_q[i], cs.max_q[i - 1]);
  }
  EXPECT_GT(cs.counts.back(), 0);
}
