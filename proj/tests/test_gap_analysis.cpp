#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vproto/gap_analysis.hpp"

using namespace vproto;

TEST(Projection, PythagoreanSplit) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const std::size_t dim = 3 + rng.below(8);
    const Matrix basis = orthonormal_basis(gaussian_matrix(rng, 1 + rng.below(static_cast<std::uint32_t>(dim)), dim));
    const auto z = normalized(gaussian_sample(rng, dim));
    const auto p = project_onto_span(z, basis);
    EXPECT_NEAR(p.epsilon_hat + dot(p.orth, p.orth), 1.0, 1e-12);
    EXPECT_NEAR(dot(p.in_span, p.orth), 0.0, 1e-12);
    // idempotent: projecting the in-span part again leaves it unchanged
    if (p.epsilon_hat > 1e-6) {
      const auto again = project_onto_span(normalized(p.in_span), basis);
      EXPECT_NEAR(again.epsilon_hat, 1.0, 1e-12);
    }
  }
}

TEST(Projection, RejectsNonUnit) {
  const Matrix basis{{1, 0}};
  const std::vector<double> z{2, 0};
  try {
    project_onto_span(z, basis);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotUnit);
  }
}

TEST(Gap, ZeroForIdenticalPrototypes) {
  Rng rng(1);
  const PrototypeSet w(gaussian_matrix(rng, 4, 3));
  EXPECT_EQ(modality_gap(w, w), 0.0);
  EXPECT_THROW(modality_gap(w, PrototypeSet(gaussian_matrix(rng, 4, 2))), Error);
}

TEST(Gap, ReportLowerBoundForInSpanW) {
  const auto cfg = testkit::tiny_config();
  const auto cone = make_cone_pair(cfg);
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    PrototypeSet w(cfg.dim, cfg.total_classes());
    for (std::size_t n = 0; n < w.count(); ++n) {
      const auto coeffs = gaussian_sample(rng, cone.vision_basis.rows());
      std::vector<double> v(cfg.dim, 0.0);
      for (std::size_t r = 0; r < coeffs.size(); ++r)
        for (std::size_t d = 0; d < cfg.dim; ++d) v[d] += coeffs[r] * cone.vision_basis(r, d);
      w.set_column(n, v);
    }
    const auto r = gap_report(cone.text_protos, w, cone.vision_basis);
    EXPECT_GE(r.delta_gap, r.orth_component_sq - 1e-10);
    EXPECT_GE(r.alignment_residual, -1e-10);
  }
  // the bound is attained by W = P_V Z
  PrototypeSet pz(cfg.dim, cfg.total_classes());
  for (std::size_t n = 0; n < pz.count(); ++n)
    pz.set_column(n, project_onto_span(cone.text_protos.column(n), cone.vision_basis).in_span);
  const auto r = gap_report(cone.text_protos, pz, cone.vision_basis);
  EXPECT_NEAR(r.delta_gap, r.orth_component_sq, 1e-12);
  EXPECT_NEAR(r.orth_component_sq, (1.0 - cfg.epsilon) * static_cast<double>(pz.count()), 1e-10);
}

TEST(Gap, MeanPairDistanceOptional) {
  Matrix v{{1, 0}, {0, 1}};
  Matrix t{{0, 1}, {0, 1}};
  const Matrix basis{{1, 0}, {0, 1}};
  const PrototypeSet z(Matrix{{1, 0}, {0, 1}});
  EXPECT_FALSE(gap_report(z, z, basis).mean_pair_distance.has_value());
  const auto r = gap_report(z, z, basis, &v, &t);
  ASSERT_TRUE(r.mean_pair_distance.has_value());
  EXPECT_NEAR(*r.mean_pair_distance, 1.0, 1e-15);
}

TEST(Gap, PrototypeSampleGap) {
  const Matrix feats{{1, 0}, {0, 1}, {0, 1}};
  const std::vector<int> labels{0, 1, 1};
  const PrototypeSet w(Matrix{{1, 0}, {0, 0}});
  // class 0: w0 = (1,0) equals its mean; class 1: w1 = 0 vs mean (0,1)
  EXPECT_NEAR(prototype_sample_gap(w, feats, labels), 0.5, 1e-15);
  const std::vector<int> bad{0, 5, 1};
  EXPECT_THROW(prototype_sample_gap(w, feats, bad), Error);
}

TEST(Temperature, MapAndDegenerate) {
  const auto t = temperature_map(0.25, 0.03);
  EXPECT_NEAR(t.tau_t, 0.015, 1e-15);
  EXPECT_FALSE(t.degenerate);
  EXPECT_TRUE(temperature_map(0.0, 0.03).degenerate);
  EXPECT_THROW(temperature_map(1.5, 0.03), Error);
  EXPECT_THROW(temperature_map(0.5, 0.0), Error);
}

TEST(Prop1, SharedConstructionMatches) {
  for (double eps : {0.25, 0.5, 0.9, 1.0}) {
    auto cfg = testkit::tiny_config();
    cfg.epsilon = eps;
    cfg.shared_orthogonal = true;
    const auto cone = make_cone_pair(cfg);
    EXPECT_LT(prop1_check(cone.vision, cone.vision_centers, eps, 0.03, cone.orth_dirs), 1e-9);
  }
}

TEST(Prop1, WrongTemperatureDeviates) {
  auto cfg = testkit::tiny_config();
  cfg.epsilon = 0.25;
  cfg.shared_orthogonal = true;
  const auto cone = make_cone_pair(cfg);
  const auto lw = prototype_logits(cone.vision, cone.vision_centers);
  const auto lz = prototype_logits(cone.vision, cone.text_protos);
  double worst = 0.0;
  for (std::size_t i = 0; i < lw.rows(); ++i) {
    const auto p = softmax(lw.row(i), 0.03);
    const auto q = softmax(lz.row(i), 0.03);  // tau_T = tau_I instead of sqrt(eps) tau_I
    for (std::size_t n = 0; n < p.size(); ++n) worst = std::max(worst, std::abs(p[n] - q[n]));
  }
  EXPECT_GT(worst, 1e-3);
}

TEST(Prop1, SpanViolationAndZeroEpsilon) {
  const auto cfg = testkit::tiny_config();
  const auto cone = make_cone_pair(cfg);
  try {
    prop1_check(cone.vision, cone.text_protos, 0.5, 0.03, cone.orth_dirs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SpanViolation);
  }
  try {
    prop1_check(cone.vision, cone.vision_centers, 0.0, 0.03, cone.orth_dirs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidTemperature);
  }
}

TEST(Sandwich, SandwichHoldsOnRandomDraws) {
  Rng rng(33);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t dim = 2 + rng.below(5), k = 2 + rng.below(4);
    const double eta = rng.uniform(0.1, 3.0), tau = rng.uniform(0.02, 2.0);
    PrototypeSet w(dim, k);
    for (std::size_t n = 0; n < k; ++n) {
      auto u = normalized(gaussian_sample(rng, dim));
      for (double& x : u) x *= eta * rng.uniform();
      w.set_column(n, u);
    }
    const auto x = normalized(gaussian_sample(rng, dim));
    const auto r = theorem2_sandwich(x, w, rng.below(static_cast<std::uint32_t>(k)),
                                     rng.below(static_cast<std::uint32_t>(k)), eta, tau);
    EXPECT_TRUE(r.holds(1e-12));
  }
}

TEST(Sandwich, EqualityAtAnchorAndWidening) {
  Rng rng(2);
  PrototypeSet w(3, 3);
  for (std::size_t n = 0; n < 3; ++n) w.set_column(n, normalized(gaussian_sample(rng, 3)));
  const auto at = theorem2_sandwich(w.column(1), w, 1, 2, 1.0, 0.1);
  EXPECT_EQ(at.kappa, 0.0);
  EXPECT_NEAR(at.lower, at.value, 1e-12);
  EXPECT_NEAR(at.upper, at.value, 1e-12);
  // bounds widen as x moves away from w_m
  auto near = w.column(1);
  near[0] += 0.01;
  auto far = w.column(1);
  far[0] += 0.3;
  const auto rn = theorem2_sandwich(near, w, 1, 2, 1.0, 0.1);
  const auto rf = theorem2_sandwich(far, w, 1, 2, 1.0, 0.1);
  EXPECT_LT(rn.kappa, rf.kappa);
  EXPECT_LE(rn.upper, rf.upper);
  EXPECT_GE(rn.lower, rf.lower);
}

TEST(Sandwich, NormBoundViolated) {
  const PrototypeSet w(Matrix{{2.0, 0.0}, {0.0, 1.0}});
  const std::vector<double> x{1, 0};
  try {
    theorem2_sandwich(x, w, 0, 1, 1.0, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NormBoundViolated);
  }
}
