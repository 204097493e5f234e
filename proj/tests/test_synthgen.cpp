#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"
#include "vproto/gap_analysis.hpp"
#include "vproto/synthgen.hpp"

using namespace vproto;

TEST(Synth, DeterministicPerSeed) {
  const auto cfg = testkit::tiny_config();
  const auto a = make_cone_pair(cfg);
  const auto b = make_cone_pair(cfg);
  EXPECT_EQ(a.text_protos, b.text_protos);
  EXPECT_EQ(a.vision, b.vision);
  const auto sa = make_scenes(cfg, a);
  const auto sb = make_scenes(cfg, b);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].features, sb[i].features);
    EXPECT_EQ(sa[i].gt_mask, sb[i].gt_mask);
  }
  auto other = cfg;
  other.seed += 1;
  EXPECT_FALSE(make_cone_pair(other).text_protos == a.text_protos);
}

TEST(Synth, ShapesAndUnitNorms) {
  const auto cfg = bench_v1();
  const auto cone = make_cone_pair(cfg);
  EXPECT_EQ(cone.text_protos.count(), cfg.n_classes + 1);
  EXPECT_EQ(cone.text_protos.dim(), cfg.dim);
  EXPECT_EQ(cone.vision.rows(), cfg.samples_per_class * (cfg.n_classes + 1));
  EXPECT_EQ(cone.vision_basis.rows(), cfg.span_dim());
  EXPECT_EQ(cone.vision_basis.rows() + cone.complement_basis.rows(), cfg.dim);
  require_unit_rows(cone.vision, 1e-12, "vision");
  for (std::size_t n = 0; n < cone.text_protos.count(); ++n) {
    EXPECT_NEAR(cone.text_protos.column_norm(n), 1.0, 1e-12);
    EXPECT_NEAR(cone.vision_centers.column_norm(n), 1.0, 1e-12);
    EXPECT_NEAR(cone.orth_dirs.column_norm(n), 1.0, 1e-12);
  }
}

TEST(Synth, EpsilonIsTheInSpanMass) {
  for (double eps : {0.0, 0.3, 0.6, 1.0}) {
    auto cfg = testkit::tiny_config();
    cfg.epsilon = eps;
    const auto cone = make_cone_pair(cfg);
    const auto r = gap_report(cone.text_protos, cone.vision_centers, cone.vision_basis);
    for (double e : r.per_class_epsilon) EXPECT_NEAR(e, eps, 1e-12);
  }
}

TEST(Synth, VisionLivesInSpanOrthDirsOutside) {
  const auto cfg = testkit::tiny_config();
  const auto cone = make_cone_pair(cfg);
  for (std::size_t i = 0; i < cone.vision.rows(); ++i)
    EXPECT_NEAR(project_onto_span(cone.vision.row(i), cone.vision_basis).epsilon_hat, 1.0, 1e-12);
  for (std::size_t n = 0; n < cone.orth_dirs.count(); ++n)
    EXPECT_NEAR(project_onto_span(cone.orth_dirs.column(n), cone.vision_basis).epsilon_hat, 0.0, 1e-24);
}

TEST(Synth, CentersSeparated) {
  const auto cone = make_cone_pair(bench_v1());
  for (std::size_t a = 0; a < cone.vision_centers.count(); ++a)
    for (std::size_t b = a + 1; b < cone.vision_centers.count(); ++b)
      EXPECT_LT(dot(cone.vision_centers.column(a), cone.vision_centers.column(b)), 0.5);
}

TEST(Synth, EpsilonOneGivesZEqualCenters) {
  auto cfg = testkit::tiny_config();
  cfg.epsilon = 1.0;
  const auto cone = make_cone_pair(cfg);
  EXPECT_LT(frobenius(cone.text_protos.m - cone.vision_centers.m), 1e-14);
}

TEST(Synth, SharedOrthogonalColumnsIdentical) {
  auto cfg = testkit::tiny_config();
  cfg.shared_orthogonal = true;
  const auto cone = make_cone_pair(cfg);
  for (std::size_t n = 1; n < cone.orth_dirs.count(); ++n) EXPECT_EQ(cone.orth_dirs.column(n), cone.orth_dirs.column(0));
}

TEST(Synth, ZeroNoiseReproducesCentersExactly) {
  auto cfg = testkit::tiny_config();
  cfg.intra_class_std = 0.0;
  const auto cone = make_cone_pair(cfg);
  for (std::size_t i = 0; i < cone.vision.rows(); ++i) {
    const auto c = cone.vision_centers.column(static_cast<std::size_t>(cone.labels[i]));
    for (std::size_t d = 0; d < c.size(); ++d) EXPECT_EQ(cone.vision(i, d), c[d]);
  }
}

TEST(Synth, ScenesAreConsistent) {
  const auto cfg = bench_v1();
  const auto cone = make_cone_pair(cfg);
  const auto scenes = make_scenes(cfg, cone);
  ASSERT_EQ(scenes.size(), cfg.n_scenes);
  for (const auto& s : scenes) {
    EXPECT_EQ(s.features.rows(), cfg.grid_s * cfg.grid_h);
    EXPECT_EQ(s.class_set, present_foreground(s.gt_mask));
    EXPECT_GE(s.class_set.size(), 1u);
    EXPECT_LE(s.class_set.size(), 4u);
    std::size_t bg = 0;
    for (int id : s.gt_mask.ids) bg += id == 0;
    EXPECT_GT(bg, 0u);
    require_unit_rows(s.features, 1e-12, "scene");
  }
}

TEST(Synth, ValidationNamesField) {
  auto cfg = bench_v1();
  cfg.epsilon = 2.0;
  try {
    make_cone_pair(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
    EXPECT_NE(std::string(e.what()).find("epsilon"), std::string::npos);
  }
  cfg = bench_v1();
  cfg.dim = 5;
  EXPECT_THROW(make_cone_pair(cfg), Error);
}

TEST(Synth, ContrastiveBatchPairsTextWithClass) {
  const auto cfg = testkit::tiny_config();
  const auto cone = make_cone_pair(cfg);
  Rng rng(1);
  const auto batch = make_contrastive_batch(cfg, cone, rng, 6);
  ASSERT_EQ(batch.v.rows(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_GE(batch.classes[i], 1);
    const auto t = cone.text_protos.column(static_cast<std::size_t>(batch.classes[i]));
    for (std::size_t d = 0; d < t.size(); ++d) EXPECT_EQ(batch.t(i, d), t[d]);
  }
  EXPECT_THROW(make_contrastive_batch(cfg, cone, rng, 1), Error);
}
